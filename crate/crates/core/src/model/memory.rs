//! Slot-value memory and external memory, as tape operations.

use crate::tensor::{NodeId, Real, Shape, Tape, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Mean of the value-memory rows.
pub fn read_value_memory<F: Real>(tape: &mut Tape<'_, F>, mv: NodeId) -> Result<NodeId> {
    tape.mean_rows(mv)
}

/// Per-slot update gates `sigmoid(w_y[i] . y + w_c[i] . c[i] + b[i])`.
///
/// `w_y`, `w_c` are [n_s, m], `b` has length n_s, `y` is the previous system
/// utterance vector and `c` holds one context row per slot. `ones` is a
/// [1, m] constant used to sum rows.
pub fn update_gates<F: Real>(
    tape: &mut Tape<'_, F>,
    (w_y, w_c, b): (NodeId, NodeId, NodeId),
    y: NodeId,
    c: NodeId,
    ones: NodeId,
) -> Result<NodeId> {
    let n_s = tape.shape(c).rows();
    let from_y = tape.linear(y, w_y, Some(b))?;
    let prod = tape.mul(w_c, c)?;
    let from_c = tape.linear(prod, ones, None)?;
    let from_c = tape.reshape(from_c, Shape::vector(n_s))?;
    let logits = tape.add(from_y, from_c)?;
    tape.sigmoid(logits)
}

/// `M'(i) = beta_i c_i + (1 - beta_i) M(i)` for every slot at once.
pub fn write_value_memory<F: Real>(tape: &mut Tape<'_, F>, mv: NodeId, beta: NodeId, c: NodeId) -> Result<NodeId> {
    let keep = tape.one_minus(beta)?;
    let new = tape.scale_rows(c, beta)?;
    let old = tape.scale_rows(mv, keep)?;
    tape.add(new, old)
}

/// Addressing parameters of the external memory.
#[derive(Clone, Copy, Debug)]
pub struct ExternalParams {
    /// [n_e, m]: read-gate weights.
    pub w_g: NodeId,
    /// [1, m]: content score weights on a memory unit.
    pub v_mem: NodeId,
    /// [1, m]: content score weights on the controller state.
    pub v_state: NodeId,
    /// [m, m]: erase vector weights.
    pub w_e: NodeId,
    /// [m, m]: add vector weights.
    pub w_a: NodeId,
}

pub struct ExternalRead {
    pub r: NodeId,
    pub weights: NodeId,
}

/// Gated content read. The new read weights interpolate the previous ones
/// and a softmax over units of `v . [M(i); s]`.
pub fn read_external<F: Real>(
    tape: &mut Tape<'_, F>,
    p: &ExternalParams,
    me: NodeId,
    s_prev: NodeId,
    w_prev: NodeId,
) -> Result<ExternalRead> {
    let n_e = tape.shape(me).rows();
    let m = tape.shape(me).cols();
    let g = tape.linear(s_prev, p.w_g, None)?;
    let g = tape.sigmoid(g)?;
    let unit = tape.linear(me, p.v_mem, None)?;
    let state = tape.linear(s_prev, p.v_state, None)?;
    let scores = tape.add_row(unit, state)?;
    let scores = tape.reshape(scores, Shape::matrix(1, n_e))?;
    let content = tape.softmax(scores)?;
    let content = tape.reshape(content, Shape::vector(n_e))?;
    let kept = tape.mul(g, w_prev)?;
    let open = tape.one_minus(g)?;
    let fresh = tape.mul(open, content)?;
    let weights = tape.add(kept, fresh)?;
    let row = tape.reshape(weights, Shape::matrix(1, n_e))?;
    let r = tape.matmul(row, me)?;
    let r = tape.reshape(r, Shape::vector(m))?;
    Ok(ExternalRead { r, weights })
}

/// Erase/add write: `M(i) <- M(i) * (1 - w(i) e) + w(i) a` with
/// `e = sigmoid(W_e s)` and `a = sigmoid(W_a s)`.
pub fn write_external<F: Real>(
    tape: &mut Tape<'_, F>,
    p: &ExternalParams,
    me: NodeId,
    s: NodeId,
    weights: NodeId,
) -> Result<NodeId> {
    let (n_e, m) = (tape.shape(me).rows(), tape.shape(me).cols());
    let erase = tape.linear(s, p.w_e, None)?;
    let erase = tape.sigmoid(erase)?;
    let add = tape.linear(s, p.w_a, None)?;
    let add = tape.sigmoid(add)?;
    let col = tape.reshape(weights, Shape::matrix(n_e, 1))?;
    let erase = tape.reshape(erase, Shape::matrix(1, m))?;
    let add = tape.reshape(add, Shape::matrix(1, m))?;
    let erase = tape.matmul(col, erase)?;
    let keep = tape.one_minus(erase)?;
    let kept = tape.mul(me, keep)?;
    let added = tape.matmul(col, add)?;
    tape.add(kept, added)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn v(tape: &mut Tape<'_, f64>, data: &[f64]) -> NodeId {
        tape.constant(Tensor::from_vec(data.to_vec()))
    }

    fn mat(tape: &mut Tape<'_, f64>, rows: &[Vec<f64>]) -> NodeId {
        tape.constant(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn value_memory_read_is_mean() {
        let mut t = Tape::new();
        let mv = mat(&mut t, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let r = read_value_memory(&mut t, mv).unwrap();
        assert_eq!(t.value(r), &[0.5, 0.5]);
        let z = mat(&mut t, &[vec![0.0, 0.0]]);
        let r = read_value_memory(&mut t, z).unwrap();
        assert_eq!(t.value(r), &[0.0, 0.0]);
    }

    #[test]
    fn value_memory_write_cases() {
        let mut t = Tape::new();
        let mv = mat(&mut t, &[vec![0.0, 2.0], vec![5.0, 5.0], vec![1.0, 1.0]]);
        let c = mat(&mut t, &[vec![2.0, 0.0], vec![7.0, 7.0], vec![3.0, 3.0]]);
        let beta = v(&mut t, &[0.5, 0.0, 1.0]);
        let out = write_value_memory(&mut t, mv, beta, c).unwrap();
        assert_eq!(t.value(out), &[1.0, 1.0, 5.0, 5.0, 3.0, 3.0]);
    }

    #[test]
    fn gates_zero_and_saturated() {
        let mut t = Tape::new();
        let wy = mat(&mut t, &[vec![0.0; 3], vec![0.0; 3]]);
        let wc = mat(&mut t, &[vec![0.0; 3], vec![0.0; 3]]);
        let b = v(&mut t, &[0.0, 20.0]);
        let y = v(&mut t, &[1.0, -2.0, 3.0]);
        let c = mat(&mut t, &[vec![1.0; 3], vec![2.0; 3]]);
        let ones = mat(&mut t, &[vec![1.0; 3]]);
        let beta = update_gates(&mut t, (wy, wc, b), y, c, ones).unwrap();
        assert_eq!(t.value(beta)[0], 0.5);
        assert!((1.0 - t.value(beta)[1]) < 1e-8);
    }

    #[test]
    fn gates_match_scalar_recomputation() {
        let m = 4;
        let wy: Vec<Vec<f64>> = (0..2).map(|i| (0..m).map(|k| 0.1 * (i + k) as f64 - 0.2).collect()).collect();
        let wc: Vec<Vec<f64>> = (0..2).map(|i| (0..m).map(|k| 0.05 * (i * k) as f64 - 0.1).collect()).collect();
        let y = [0.3, -0.1, 0.7, 0.2];
        let c = [vec![0.5, 0.4, -0.3, 0.1], vec![-0.2, 0.9, 0.0, 0.6]];
        let b = [0.1, -0.3];
        let mut t = Tape::new();
        let (nwy, nwc) = (mat(&mut t, &wy), mat(&mut t, &wc));
        let nb = v(&mut t, &b);
        let ny = v(&mut t, &y);
        let nc = mat(&mut t, &c);
        let ones = mat(&mut t, &[vec![1.0; 4]]);
        let beta = update_gates(&mut t, (nwy, nwc, nb), ny, nc, ones).unwrap();
        for i in 0..2 {
            let mut z = b[i];
            for k in 0..m {
                z += wy[i][k] * y[k] + wc[i][k] * c[i][k];
            }
            let want = 1.0 / (1.0 + (-z).exp());
            assert!((t.value(beta)[i] - want).abs() < 1e-12);
        }
    }

    fn ext_params(t: &mut Tape<'_, f64>, m: usize, n_e: usize, wg_bias: f64) -> ExternalParams {
        let g: Vec<Vec<f64>> = (0..n_e).map(|_| vec![wg_bias; m]).collect();
        ExternalParams {
            w_g: mat(t, &g),
            v_mem: mat(t, &[(0..m).map(|k| 0.3 - 0.2 * k as f64).collect()]),
            v_state: mat(t, &[vec![0.1; m]]),
            w_e: mat(t, &(0..m).map(|i| (0..m).map(|k| 0.1 * (i as f64 - k as f64)).collect()).collect::<Vec<_>>()),
            w_a: mat(t, &(0..m).map(|i| (0..m).map(|k| 0.2 * ((i + k) % 3) as f64 - 0.2).collect()).collect::<Vec<_>>()),
        }
    }

    #[test]
    fn gate_limits_of_external_read() {
        let mut t = Tape::new();
        // Large weights against a positive state saturate the gate at 1.
        let p = ext_params(&mut t, 3, 2, 50.0);
        let me = mat(&mut t, &[vec![0.2, 0.1, -0.4], vec![0.5, 0.3, 0.3]]);
        let s = v(&mut t, &[1.0, 1.0, 1.0]);
        let w = v(&mut t, &[0.9, 0.1]);
        let r = read_external(&mut t, &p, me, s, w).unwrap();
        let got = t.value(r.weights);
        assert!((got[0] - 0.9).abs() < 1e-12 && (got[1] - 0.1).abs() < 1e-12);

        let p0 = ext_params(&mut t, 3, 2, -50.0);
        let r = read_external(&mut t, &p0, me, s, w).unwrap();
        let sum: f64 = t.value(r.weights).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn external_read_matches_scalar_recomputation() {
        let (m, n_e) = (3, 2);
        let mut t = Tape::new();
        let p = ext_params(&mut t, m, n_e, 0.4);
        let me_rows = vec![vec![0.2, 0.1, -0.4], vec![0.5, 0.3, 0.3]];
        let me = mat(&mut t, &me_rows);
        let s = [0.3, -0.6, 0.2];
        let w_prev = [0.7, 0.3];
        let ns = v(&mut t, &s);
        let nw = v(&mut t, &w_prev);
        let r = read_external(&mut t, &p, me, ns, nw).unwrap();

        let v_mem: Vec<f64> = (0..m).map(|k| 0.3 - 0.2 * k as f64).collect();
        let g: f64 = 1.0 / (1.0 + (-(0.4 * s.iter().sum::<f64>())).exp());
        let state_term: f64 = s.iter().map(|x| 0.1 * x).sum();
        let scores: Vec<f64> = me_rows
            .iter()
            .map(|row| row.iter().zip(&v_mem).map(|(a, b)| a * b).sum::<f64>() + state_term)
            .collect();
        let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = scores.iter().map(|x| (x - mx).exp()).sum();
        let w: Vec<f64> = (0..n_e)
            .map(|i| g * w_prev[i] + (1.0 - g) * (scores[i] - mx).exp() / z)
            .collect();
        for i in 0..n_e {
            assert!((t.value(r.weights)[i] - w[i]).abs() < 1e-12);
        }
        for k in 0..m {
            let want: f64 = (0..n_e).map(|i| w[i] * me_rows[i][k]).sum();
            assert!((t.value(r.r)[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn external_write_cases() {
        let (m, n_e) = (3, 2);
        let mut t = Tape::new();
        let p = ext_params(&mut t, m, n_e, 0.0);
        let me_rows = vec![vec![0.2, 0.1, -0.4], vec![0.5, 0.3, 0.3]];
        let me = mat(&mut t, &me_rows);
        let s = [0.3, -0.6, 0.2];
        let ns = v(&mut t, &s);
        let w = v(&mut t, &[0.0, 0.6]);
        let out = write_external(&mut t, &p, me, ns, w).unwrap();
        let got = t.value(out).to_vec();
        // Unit 0 has zero weight and is unchanged.
        assert_eq!(&got[..3], &me_rows[0][..]);
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        for k in 0..m {
            let e = sig((0..m).map(|j| 0.1 * (k as f64 - j as f64) * s[j]).sum());
            let a = sig((0..m).map(|j| (0.2 * ((k + j) % 3) as f64 - 0.2) * s[j]).sum());
            let want = me_rows[1][k] * (1.0 - 0.6 * e) + 0.6 * a;
            assert!((got[3 + k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_erase_overwrites_unit() {
        let mut t = Tape::new();
        let big: Vec<Vec<f64>> = (0..2).map(|_| vec![100.0, 100.0]).collect();
        let p = ExternalParams {
            w_g: mat(&mut t, &[vec![0.0; 2]]),
            v_mem: mat(&mut t, &[vec![0.0; 2]]),
            v_state: mat(&mut t, &[vec![0.0; 2]]),
            w_e: mat(&mut t, &big),
            w_a: mat(&mut t, &[vec![0.5, 0.0], vec![0.0, -0.5]]),
        };
        let me = mat(&mut t, &[vec![3.0, -2.0]]);
        let s = v(&mut t, &[1.0, 1.0]);
        let w = v(&mut t, &[1.0]);
        let out = write_external(&mut t, &p, me, s, w).unwrap();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert!((t.value(out)[0] - sig(0.5)).abs() < 1e-6);
        assert!((t.value(out)[1] - sig(-0.5)).abs() < 1e-6);
    }
}
