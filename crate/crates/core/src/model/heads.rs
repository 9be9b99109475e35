//! Act-type, mask and value classifiers, batched over turns.

use serde::Serialize;

use super::controller::{Ctx, TurnNodes};
use super::{MaskInputs, Mlp};
use crate::data::ontology::DialogueAct;
use crate::tensor::{NodeId, Real, Tape, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Head distributions of one turn.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeadOutputs<F> {
    pub da_type: Vec<F>,
    /// Probability that each slot is part of the act.
    pub mask: Vec<F>,
    /// Per-slot distribution over the slot's values.
    pub values: Vec<Vec<F>>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<F: PartialOrd + Copy>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Componentwise argmax of the heads, before mask filtering.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Prediction {
    pub act_type: usize,
    pub mask: Vec<bool>,
    /// Most probable value of every slot, masked or not.
    pub values: Vec<usize>,
}

impl Prediction {
    pub fn from_heads<F: Real>(h: &HeadOutputs<F>, threshold: f64) -> Self {
        Prediction {
            act_type: argmax(&h.da_type),
            mask: h.mask.iter().map(|p| p.to_f64c() > threshold).collect(),
            values: h.values.iter().map(|v| argmax(v)).collect(),
        }
    }

    /// Keeps the values of masked slots only.
    pub fn act(&self) -> DialogueAct {
        let mut act = DialogueAct::bare(self.act_type, self.mask.len());
        for (i, &on) in self.mask.iter().enumerate() {
            if on {
                act = act.with_value(i, self.values[i]);
            }
        }
        act
    }
}

/// Most probable act type, slots whose mask probability exceeds
/// `threshold`, and the most probable value of each selected slot.
pub fn assemble_act<F: Real>(h: &HeadOutputs<F>, threshold: f64) -> DialogueAct {
    Prediction::from_heads(h, threshold).act()
}

/// Rows of `x` through `w2 tanh(w1 x + b1) + b2`.
fn mlp<F: Real>(tape: &mut Tape<'_, F>, p: &Mlp<NodeId>, x: NodeId) -> Result<NodeId> {
    let h = tape.linear(x, p.w1, Some(p.b1))?;
    let h = tape.tanh(h)?;
    tape.linear(h, p.w2, Some(p.b2))
}

/// Probability nodes for a batch of turns: `dat` is [T, n_dat], `mask[i]`
/// is [T, 1] and `value[i]` is [T, n_i].
pub(crate) struct HeadNodes {
    pub dat: NodeId,
    pub mask: Vec<NodeId>,
    pub value: Vec<NodeId>,
}

impl HeadNodes {
    pub fn outputs<F: Real>(&self, tape: &Tape<'_, F>, t: usize) -> HeadOutputs<F> {
        let row = |id: NodeId| {
            let c = tape.shape(id).cols();
            tape.value(id)[t * c..(t + 1) * c].to_vec()
        };
        HeadOutputs {
            da_type: row(self.dat),
            mask: self.mask.iter().map(|&m| tape.value(m)[t]).collect(),
            values: self.value.iter().map(|&v| row(v)).collect(),
        }
    }
}

impl Ctx {
    fn dat_input<F: Real>(&self, tape: &mut Tape<'_, F>, t: &TurnNodes) -> Result<NodeId> {
        let mut parts = vec![t.state.s];
        parts.extend(t.me_flat);
        parts.extend(t.mv_flat);
        tape.concat(&parts)
    }

    fn mask_input<F: Real>(&self, tape: &mut Tape<'_, F>, t: &TurnNodes, slot: usize) -> Result<NodeId> {
        let parts = match self.mask_inputs {
            MaskInputs::Prose => {
                let mut parts = vec![t.state.s];
                parts.extend(t.me_flat);
                parts.extend(t.mv_rows.get(slot).copied());
                parts
            }
            MaskInputs::Formula => vec![t.me_flat.unwrap_or(t.state.s)],
        };
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        tape.concat(&parts)
    }

    fn value_input<F: Real>(&self, tape: &mut Tape<'_, F>, t: &TurnNodes, slot: usize) -> Result<NodeId> {
        let memory = t.mv_rows.get(slot).copied().unwrap_or(t.state.s);
        tape.concat(&[self.key_rows[slot], memory])
    }

    fn stacked<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        turns: &[&TurnNodes],
        mut input: impl FnMut(&Self, &mut Tape<'_, F>, &TurnNodes) -> Result<NodeId>,
    ) -> Result<NodeId> {
        let rows = turns
            .iter()
            .map(|t| input(self, tape, t))
            .collect::<Result<Vec<_>>>()?;
        tape.stack_rows(&rows)
    }

    pub fn dat_probs<F: Real>(&self, tape: &mut Tape<'_, F>, turns: &[&TurnNodes]) -> Result<NodeId> {
        let x = self.stacked(tape, turns, |c, tp, t| c.dat_input(tp, t))?;
        let logits = mlp(tape, &self.p.dat, x)?;
        tape.softmax(logits)
    }

    pub fn mask_probs<F: Real>(&self, tape: &mut Tape<'_, F>, slot: usize, turns: &[&TurnNodes]) -> Result<NodeId> {
        let x = self.stacked(tape, turns, |c, tp, t| c.mask_input(tp, t, slot))?;
        let logits = mlp(tape, &self.p.mask[slot], x)?;
        tape.sigmoid(logits)
    }

    pub fn value_probs<F: Real>(&self, tape: &mut Tape<'_, F>, slot: usize, turns: &[&TurnNodes]) -> Result<NodeId> {
        let x = self.stacked(tape, turns, |c, tp, t| c.value_input(tp, t, slot))?;
        let logits = mlp(tape, &self.p.value[slot], x)?;
        tape.softmax(logits)
    }

    pub fn heads_for_turns<F: Real>(&self, tape: &mut Tape<'_, F>, turns: &[&TurnNodes]) -> Result<HeadNodes> {
        Ok(HeadNodes {
            dat: self.dat_probs(tape, turns)?,
            mask: (0..self.n_s)
                .map(|i| self.mask_probs(tape, i, turns))
                .collect::<Result<_>>()?,
            value: (0..self.n_s)
                .map(|i| self.value_probs(tape, i, turns))
                .collect::<Result<_>>()?,
        })
    }
}
