//! Slot-level attention over the tokens of the user utterance.

use crate::tensor::{NodeId, Real, Shape, Tape, TensorError};

/// Attention MLP `v . tanh(W_key k + W_tok e + b) + c`, shared by all slots.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    /// Slot-side hidden term `W_key M^S + b` [n_s, m], computed once per tape.
    pub keys: NodeId,
    pub w_tok: NodeId,
    pub v: NodeId,
    pub c: NodeId,
}

pub struct Attention {
    /// [n_s, L], each row a distribution over tokens.
    pub alpha: NodeId,
    /// [n_s, m] context rows.
    pub context: NodeId,
}

/// `tokens` is the [L, m] matrix of utterance token embeddings, L >= 1.
pub fn slot_attention<F: Real>(
    tape: &mut Tape<'_, F>,
    p: &AttentionParams,
    tokens: NodeId,
) -> Result<Attention, TensorError> {
    let n_s = tape.shape(p.keys).rows();
    let len = tape.shape(tokens).rows();
    if len == 0 {
        return Err(TensorError::Empty { op: "slot_attention" });
    }
    let tok = tape.linear(tokens, p.w_tok, None)?;
    let hidden = tape.pair_add(p.keys, tok)?;
    let hidden = tape.tanh(hidden)?;
    let scores = tape.linear(hidden, p.v, Some(p.c))?;
    let scores = tape.reshape(scores, Shape::matrix(n_s, len))?;
    let alpha = tape.softmax(scores)?;
    let context = tape.matmul(alpha, tokens)?;
    Ok(Attention { alpha, context })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn setup(t: &mut Tape<'_, f64>, m: usize, keys: Vec<Vec<f64>>, scale: f64) -> AttentionParams {
        let w_tok: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|k| scale * (((i * 3 + k * 5) % 7) as f64 - 3.0) / 7.0).collect())
            .collect();
        AttentionParams {
            keys: t.constant(Tensor::from_rows(&keys).unwrap()),
            w_tok: t.constant(Tensor::from_rows(&w_tok).unwrap()),
            v: t.constant(Tensor::from_rows(&[(0..m).map(|k| scale * (0.5 - 0.3 * k as f64)).collect()]).unwrap()),
            c: t.constant(Tensor::from_vec(vec![0.2])),
        }
    }

    #[test]
    fn single_token_gets_all_mass() {
        let mut t = Tape::new();
        let p = setup(&mut t, 3, vec![vec![0.1, 0.2, 0.3], vec![-0.5, 0.0, 0.5]], 1.0);
        let e = t.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        let a = slot_attention(&mut t, &p, e).unwrap();
        assert_eq!(t.value(a.alpha), &[1.0, 1.0]);
        assert_eq!(t.value(a.context), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_scores_give_uniform_rows() {
        let mut t = Tape::new();
        let p = setup(&mut t, 2, vec![vec![0.1, 0.2]], 0.0);
        let e = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]]).unwrap());
        let a = slot_attention(&mut t, &p, e).unwrap();
        for v in t.value(a.alpha) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let c = t.value(a.context);
        assert!((c[0] - 1.0).abs() < 1e-15 && (c[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_scalar_recomputation() {
        let m = 3;
        let keys = vec![vec![0.1, -0.2, 0.3], vec![0.4, 0.0, -0.1]];
        let toks = vec![vec![0.5, -0.5, 0.2], vec![0.1, 0.9, -0.3], vec![-0.7, 0.2, 0.4]];
        let mut t = Tape::new();
        let p = setup(&mut t, m, keys.clone(), 1.0);
        let e = t.constant(Tensor::from_rows(&toks).unwrap());
        let a = slot_attention(&mut t, &p, e).unwrap();
        let w = |i: usize, k: usize| (((i * 3 + k * 5) % 7) as f64 - 3.0) / 7.0;
        let v = |k: usize| 0.5 - 0.3 * k as f64;
        for (i, key) in keys.iter().enumerate() {
            let d: Vec<f64> = toks
                .iter()
                .map(|e| {
                    (0..m)
                        .map(|h| {
                            let pre = key[h] + (0..m).map(|k| w(h, k) * e[k]).sum::<f64>();
                            v(h) * pre.tanh()
                        })
                        .sum::<f64>()
                        + 0.2
                })
                .collect();
            let z: f64 = d.iter().map(|x| x.exp()).sum();
            for (j, dj) in d.iter().enumerate() {
                let want = dj.exp() / z;
                assert!((t.value(a.alpha)[i * 3 + j] - want).abs() < 1e-10);
            }
            for k in 0..m {
                let want: f64 = (0..3).map(|j| d[j].exp() / z * toks[j][k]).sum();
                assert!((t.value(a.context)[i * m + k] - want).abs() < 1e-10);
            }
        }
    }
}
