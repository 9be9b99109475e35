//! Main and heuristic losses, built on the tape.

use super::gold::GoldSupervision;
use crate::data::ontology::DialogueAct;
use crate::tensor::{NodeId, Real, Tape};
use crate::Error;

/// Loss weights of one stage: `gamma` scales the mask terms, `lambda` the
/// value terms and `heuristic` the attention and gate supervision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub gamma: f64,
    pub lambda: f64,
    pub heuristic: f64,
}

impl LossWeights {
    /// The objective used to rank checkpoints on the dev split.
    pub const DEV: LossWeights = LossWeights {
        gamma: 1.0,
        lambda: 1.0,
        heuristic: 0.0,
    };
}

fn add_term<F: Real>(tape: &mut Tape<'_, F>, acc: Option<NodeId>, term: NodeId, w: f64) -> Result<Option<NodeId>, Error> {
    let term = if w == 1.0 { term } else { tape.scale(term, F::from_f64c(w))? };
    Ok(Some(match acc {
        None => term,
        Some(a) => tape.add(a, term)?,
    }))
}

/// Slots masked by at least one of `acts`; only their value heads matter.
pub(crate) fn masked_slots(acts: &[&DialogueAct], n_s: usize) -> Vec<bool> {
    (0..n_s).map(|i| acts.iter().any(|a| a.mask[i])).collect()
}

/// `L_dat + gamma sum_i L_mask(i) + lambda sum_i L_value(i)` summed over the
/// turns stacked in the head nodes. Value terms only count turns whose gold
/// act masks the slot. Mask or value nodes may be `None` when their weight
/// is zero or no turn needs them.
pub(crate) fn main_loss<F: Real>(
    tape: &mut Tape<'_, F>,
    dat: NodeId,
    mask: &[Option<NodeId>],
    value: &[Option<NodeId>],
    acts: &[&DialogueAct],
    gamma: f64,
    lambda: f64,
) -> Result<NodeId, Error> {
    let n_dat = tape.shape(dat).cols();
    let mut target = vec![F::zero(); acts.len() * n_dat];
    for (t, a) in acts.iter().enumerate() {
        target[t * n_dat + a.act_type] = F::one();
    }
    let mut total = Some(tape.cross_entropy(dat, &target)?);
    if gamma != 0.0 {
        for (i, node) in mask.iter().enumerate() {
            let node = node.ok_or_else(|| Error::Data(format!("mask head {i} was not evaluated")))?;
            let target: Vec<F> = acts.iter().map(|a| if a.mask[i] { F::one() } else { F::zero() }).collect();
            let l = tape.binary_cross_entropy(node, &target)?;
            total = add_term(tape, total, l, gamma)?;
        }
    }
    if lambda != 0.0 {
        for (i, node) in value.iter().enumerate() {
            if !acts.iter().any(|a| a.mask[i]) {
                continue;
            }
            let node = node.ok_or_else(|| Error::Data(format!("value head {i} was not evaluated")))?;
            let n_i = tape.shape(node).cols();
            let mut target = vec![F::zero(); acts.len() * n_i];
            for (t, a) in acts.iter().enumerate() {
                if a.mask[i] {
                    let v = a.values[i]
                        .ok_or_else(|| Error::Data(format!("gold act masks slot {i} without a value")))?;
                    target[t * n_i + v] = F::one();
                }
            }
            let l = tape.cross_entropy(node, &target)?;
            total = add_term(tape, total, l, lambda)?;
        }
    }
    Ok(total.expect("act-type term is always present"))
}

/// `-sum alpha_hat ln alpha - sum BCE(beta_hat, beta)` over turns. Missing
/// nodes (ablated attention or gates) contribute nothing; `None` when no
/// term remains.
pub(crate) fn heuristic_loss<F: Real>(
    tape: &mut Tape<'_, F>,
    alphas: &[Option<NodeId>],
    betas: &[Option<NodeId>],
    gold: &[&GoldSupervision],
) -> Result<Option<NodeId>, Error> {
    let mut total = None;
    for ((alpha, beta), g) in alphas.iter().zip(betas).zip(gold) {
        if let Some(a) = alpha {
            if g.beta.iter().any(|&b| b > 0.0) {
                let target: Vec<F> = g.alpha.iter().flatten().map(|&v| F::from_f64c(v)).collect();
                let l = tape.cross_entropy(*a, &target)?;
                total = add_term(tape, total, l, 1.0)?;
            }
        }
        if let Some(b) = beta {
            let target: Vec<F> = g.beta.iter().map(|&v| F::from_f64c(v)).collect();
            let l = tape.binary_cross_entropy(*b, &target)?;
            total = add_term(tape, total, l, 1.0)?;
        }
    }
    Ok(total)
}

#[cfg(test)]
#[allow(clippy::type_complexity)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn input(t: &mut Tape<'_, f64>, rows: usize, data: Vec<f64>) -> NodeId {
        let cols = data.len() / rows;
        t.input(Tensor::new(Shape::matrix(rows, cols), data).unwrap())
    }

    fn two_slot_case(t: &mut Tape<'_, f64>) -> (NodeId, Vec<Option<NodeId>>, Vec<Option<NodeId>>, Vec<DialogueAct>) {
        let dat = input(t, 2, vec![0.7, 0.2, 0.1, 0.3, 0.3, 0.4]);
        let mask = vec![Some(input(t, 2, vec![0.8, 0.4])), Some(input(t, 2, vec![0.1, 0.6]))];
        let value = vec![
            Some(input(t, 2, vec![0.5, 0.5, 0.2, 0.8])),
            Some(input(t, 2, vec![0.9, 0.05, 0.05, 0.3, 0.3, 0.4])),
        ];
        let acts = vec![DialogueAct::bare(0, 2).with_value(0, 1), DialogueAct::bare(2, 2).with_value(1, 2)];
        (dat, mask, value, acts)
    }

    #[test]
    fn matches_scalar_cross_entropy() {
        let mut t = Tape::new();
        let (dat, mask, value, acts) = two_slot_case(&mut t);
        let refs: Vec<&DialogueAct> = acts.iter().collect();
        let l = main_loss(&mut t, dat, &mask, &value, &refs, 0.3, 0.6).unwrap();
        let ln = f64::ln;
        let l_dat = -ln(0.7) - ln(0.4);
        let l_mask = -(ln(0.8) + ln(1.0 - 0.4)) - (ln(1.0 - 0.1) + ln(0.6));
        let l_val = -ln(0.5) - ln(0.4);
        let expect = l_dat + 0.3 * l_mask + 0.6 * l_val;
        assert!((t.scalar(l) - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_leave_act_type_loss() {
        let mut t = Tape::new();
        let (dat, _, _, acts) = two_slot_case(&mut t);
        let refs: Vec<&DialogueAct> = acts.iter().collect();
        let l = main_loss(&mut t, dat, &[None, None], &[None, None], &refs, 0.0, 0.0).unwrap();
        assert!((t.scalar(l) - (-(0.7f64.ln()) - 0.4f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_cost_nothing() {
        let mut t = Tape::new();
        let p = 1.0 - 1e-12;
        let dat = input(&mut t, 1, vec![p, 1e-12]);
        let mask = vec![Some(input(&mut t, 1, vec![p]))];
        let value = vec![Some(input(&mut t, 1, vec![1e-12, p]))];
        let act = DialogueAct::bare(0, 1).with_value(0, 1);
        let l = main_loss(&mut t, dat, &mask, &value, &[&act], 1.0, 1.0).unwrap();
        assert!(t.scalar(l) <= 3.0 * 1.1e-12);
    }

    #[test]
    fn heuristic_with_no_matches_is_gate_entropy() {
        let mut t = Tape::new();
        let a = input(&mut t, 2, vec![0.5, 0.5, 0.9, 0.1]);
        let b = t.input(Tensor::from_vec(vec![0.5, 0.5]));
        let g = GoldSupervision {
            alpha: vec![vec![0.0; 2]; 2],
            beta: vec![0.0; 2],
        };
        let l = heuristic_loss(&mut t, &[Some(a)], &[Some(b)], &[&g]).unwrap().unwrap();
        assert!((t.scalar(l) - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn heuristic_scalar_oracle() {
        let mut t = Tape::new();
        let a = input(&mut t, 2, vec![0.2, 0.3, 0.5, 0.6, 0.3, 0.1]);
        let b = t.input(Tensor::from_vec(vec![0.7, 0.2]));
        let g = GoldSupervision {
            alpha: vec![vec![0.0, 0.5, 0.5], vec![0.0; 3]],
            beta: vec![1.0, 0.0],
        };
        let l = heuristic_loss(&mut t, &[Some(a)], &[Some(b)], &[&g]).unwrap().unwrap();
        let expect = -(0.5 * 0.3f64.ln() + 0.5 * 0.5f64.ln()) - 0.7f64.ln() - 0.8f64.ln();
        assert!((t.scalar(l) - expect).abs() < 1e-12);
        let none = heuristic_loss::<f64>(&mut t, &[None], &[None], &[&g]).unwrap();
        assert!(none.is_none());
    }
}
