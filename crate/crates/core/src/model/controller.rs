//! One dialogue turn: memory reads, the GRU state update, memory writes.

use serde::Serialize;

use super::attention::{slot_attention, AttentionParams};
use super::heads::HeadOutputs;
use super::memory::{read_external, read_value_memory, update_gates, write_external, write_value_memory, ExternalParams};
use super::{Ablation, EncodedInput, MaskInputs, Model, Params};
use crate::tensor::{NodeId, Real, Shape, Tape, Tensor, TensorError};
use crate::Error;

/// `h' = (1 - z) h + z h~` with `z = sigmoid(W_z x + U_z h + b_z)`,
/// `r = sigmoid(W_r x + U_r h + b_r)` and
/// `h~ = tanh(W_h x + U_h (r * h) + b_h)`.
///
/// `w` stacks `[W_z; W_r; W_h]` as a [3m, n] matrix, `b` the three biases,
/// `u_zr` stacks `[U_z; U_r]` and `u_h` is [m, m].
pub fn gru_cell<F: Real>(
    tape: &mut Tape<'_, F>,
    (w, b, u_zr, u_h): (NodeId, NodeId, NodeId, NodeId),
    x: NodeId,
    h: NodeId,
) -> Result<NodeId, TensorError> {
    let m = tape.shape(h).len();
    let wx = tape.linear(x, w, Some(b))?;
    let wx = tape.reshape(wx, Shape::matrix(3, m))?;
    let uh = tape.linear(h, u_zr, None)?;
    let uh = tape.reshape(uh, Shape::matrix(2, m))?;
    let (wz, wr, wh) = (tape.row(wx, 0)?, tape.row(wx, 1)?, tape.row(wx, 2)?);
    let (uz, ur) = (tape.row(uh, 0)?, tape.row(uh, 1)?);
    let z = tape.add(wz, uz)?;
    let z = tape.sigmoid(z)?;
    let r = tape.add(wr, ur)?;
    let r = tape.sigmoid(r)?;
    let rh = tape.mul(r, h)?;
    let cand = tape.linear(rh, u_h, None)?;
    let cand = tape.add(wh, cand)?;
    let cand = tape.tanh(cand)?;
    let diff = tape.sub(cand, h)?;
    let step = tape.mul(z, diff)?;
    tape.add(h, step)
}

/// Recurrent state carried between turns of one session.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogueMemoryState<F> {
    /// Controller state S.
    pub s: Vec<F>,
    /// Value memory M^V, one row per slot.
    pub value_memory: Tensor<F>,
    /// External memory M^E, one row per unit.
    pub external_memory: Tensor<F>,
    /// External read weights w^r.
    pub read_weights: Vec<F>,
    pub turn: usize,
}

impl<F: Real> DialogueMemoryState<F> {
    /// Zero controller and value memory, learned external memory, uniform
    /// read weights.
    pub fn initial(model: &Model<F>) -> Self {
        let (m, n_e, n_s) = (model.config.m, model.config.n_e, model.ontology.num_slots());
        DialogueMemoryState {
            s: vec![F::zero(); m],
            value_memory: Tensor::zeros(Shape::matrix(n_s, m)),
            external_memory: model.params.value(model.ids.ext_m0).clone(),
            read_weights: vec![F::one() / F::from_usize(n_e).unwrap(); n_e],
            turn: 0,
        }
    }

    pub(crate) fn to_nodes(&self, tape: &mut Tape<'_, F>) -> NodeState {
        NodeState {
            s: tape.constant(Tensor::from_vec(self.s.clone())),
            mv: tape.constant(self.value_memory.clone()),
            me: tape.constant(self.external_memory.clone()),
            wr: tape.constant(Tensor::from_vec(self.read_weights.clone())),
        }
    }

    pub(crate) fn from_nodes(tape: &Tape<'_, F>, n: &NodeState, turn: usize) -> Self {
        DialogueMemoryState {
            s: tape.value(n.s).to_vec(),
            value_memory: tape.tensor(n.mv),
            external_memory: tape.tensor(n.me),
            read_weights: tape.value(n.wr).to_vec(),
            turn,
        }
    }
}

/// Per-turn diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TurnTrace<F> {
    pub tokens: Vec<String>,
    pub truncated: bool,
    /// Attention weights, one row per slot over `tokens`; empty when the
    /// attention is ablated.
    pub alpha: Vec<Vec<F>>,
    /// Update gates per slot; empty without a value memory.
    pub beta: Vec<F>,
    pub r_v: Vec<F>,
    pub r_e: Vec<F>,
    pub read_weights: Vec<F>,
    pub heads: HeadOutputs<F>,
}

impl<F: Real> TurnTrace<F> {
    pub(crate) fn collect(tape: &Tape<'_, F>, n: &TurnNodes, inp: &EncodedInput, heads: HeadOutputs<F>) -> Self {
        let vec_of = |id: Option<NodeId>| id.map(|i| tape.value(i).to_vec()).unwrap_or_default();
        let alpha = match n.alpha {
            Some(a) => {
                let len = tape.shape(a).cols();
                tape.value(a).chunks_exact(len).map(<[F]>::to_vec).collect()
            }
            None => Vec::new(),
        };
        TurnTrace {
            tokens: inp.tokens.clone(),
            truncated: inp.truncated,
            alpha,
            beta: vec_of(n.beta),
            r_v: vec_of(n.r_v),
            r_e: vec_of(n.r_e),
            read_weights: tape.value(n.state.wr).to_vec(),
            heads,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct NodeState {
    pub s: NodeId,
    pub mv: NodeId,
    pub me: NodeId,
    pub wr: NodeId,
}

/// Tape nodes produced by one controller step.
#[derive(Clone, Debug)]
pub(crate) struct TurnNodes {
    pub state: NodeState,
    pub r_v: Option<NodeId>,
    pub r_e: Option<NodeId>,
    pub alpha: Option<NodeId>,
    pub beta: Option<NodeId>,
    /// Flattened external memory after the write.
    pub me_flat: Option<NodeId>,
    /// Value memory after the write, flattened and by row.
    pub mv_flat: Option<NodeId>,
    pub mv_rows: Vec<NodeId>,
}

/// Parameters bound to a tape plus per-tape constants.
pub(crate) struct Ctx {
    pub p: Params<NodeId>,
    pub attn: AttentionParams,
    pub ext: ExternalParams,
    pub key_rows: Vec<NodeId>,
    pub ones: NodeId,
    pub zeros: NodeId,
    pub ablation: Ablation,
    pub mask_inputs: MaskInputs,
    pub m: usize,
    pub n_s: usize,
    pub n_e: usize,
}

impl Ctx {
    pub fn new<'p, F: Real>(model: &'p Model<F>, tape: &mut Tape<'p, F>) -> Result<Ctx, Error> {
        let p = model.ids.try_map(|id| tape.param(id))?;
        let (m, n_s, n_e) = (model.config.m, model.ontology.num_slots(), model.config.n_e);
        let keys = tape.linear(p.slot_keys, p.attn_w_key, Some(p.attn_b))?;
        let key_rows = (0..n_s).map(|i| tape.row(p.slot_keys, i)).collect::<Result<_, _>>()?;
        let ones = tape.constant(Tensor::new(Shape::matrix(1, m), vec![F::one(); m])?);
        let zeros = tape.zeros(Shape::vector(m));
        Ok(Ctx {
            attn: AttentionParams {
                keys,
                w_tok: p.attn_w_tok,
                v: p.attn_v,
                c: p.attn_c,
            },
            ext: ExternalParams {
                w_g: p.ext_w_g,
                v_mem: p.ext_v_mem,
                v_state: p.ext_v_state,
                w_e: p.ext_w_e,
                w_a: p.ext_w_a,
            },
            p,
            key_rows,
            ones,
            zeros,
            ablation: model.config.ablation,
            mask_inputs: model.config.mask_inputs,
            m,
            n_s,
            n_e,
        })
    }

    /// Initial state whose external memory is the learned parameter node.
    pub fn initial_state<F: Real>(&self, tape: &mut Tape<'_, F>) -> NodeState {
        let w0 = F::one() / F::from_usize(self.n_e).unwrap();
        NodeState {
            s: self.zeros,
            mv: tape.zeros(Shape::matrix(self.n_s, self.m)),
            me: self.p.ext_m0,
            wr: tape.constant(Tensor::from_vec(vec![w0; self.n_e])),
        }
    }

    /// Averaged embedding of a token list; the zero vector when empty.
    fn mean_embedding<F: Real>(&self, tape: &mut Tape<'_, F>, ids: &[usize]) -> Result<(NodeId, Option<NodeId>), TensorError> {
        if ids.is_empty() {
            return Ok((self.zeros, None));
        }
        let rows = tape.gather(self.p.embedding, ids)?;
        Ok((tape.mean_rows(rows)?, Some(rows)))
    }

    /// Attention, gates and context rows for one utterance.
    fn slot_update_from<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        xbar: NodeId,
        x_rows: Option<NodeId>,
        ybar: NodeId,
    ) -> Result<(Option<NodeId>, NodeId, NodeId), TensorError> {
        let (alpha, c) = if self.ablation.no_attention {
            (None, tape.stack_rows(&vec![xbar; self.n_s])?)
        } else {
            let a = slot_attention(tape, &self.attn, x_rows.expect("utterances are never empty"))?;
            (Some(a.alpha), a.context)
        };
        let p = &self.p;
        let beta = update_gates(tape, (p.gate_wy, p.gate_wc, p.gate_b), ybar, c, self.ones)?;
        Ok((alpha, beta, c))
    }

    /// Attention weights and gates of one turn, without touching the
    /// recurrent state. This is all the pretraining stage needs.
    pub fn slot_update<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        inp: &EncodedInput,
    ) -> Result<(Option<NodeId>, NodeId), TensorError> {
        let (xbar, x_rows) = self.mean_embedding(tape, &inp.x)?;
        let (ybar, _) = self.mean_embedding(tape, &inp.y)?;
        let (alpha, beta, _) = self.slot_update_from(tape, xbar, x_rows, ybar)?;
        Ok((alpha, beta))
    }

    pub fn step<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        st: &NodeState,
        inp: &EncodedInput,
    ) -> Result<(NodeState, TurnNodes), Error> {
        let ab = self.ablation;
        let (xbar, x_rows) = self.mean_embedding(tape, &inp.x)?;
        let (ybar, _) = self.mean_embedding(tape, &inp.y)?;

        let r_v = if ab.no_slot_value_memory {
            None
        } else {
            Some(read_value_memory(tape, st.mv)?)
        };
        let read = if ab.no_external_memory {
            None
        } else {
            Some(read_external(tape, &self.ext, st.me, st.s, st.wr)?)
        };
        let r_e = read.as_ref().map(|r| r.r);

        let input = tape.concat(&[xbar, ybar, r_v.unwrap_or(st.s), r_e.unwrap_or(st.s)])?;
        let p = &self.p;
        let s = gru_cell(tape, (p.gru_w, p.gru_b, p.gru_u_zr, p.gru_u_h), input, st.s)?;

        let (mv, alpha, beta) = if ab.no_slot_value_memory {
            (st.mv, None, None)
        } else {
            let (alpha, beta, c) = self.slot_update_from(tape, xbar, x_rows, ybar)?;
            (write_value_memory(tape, st.mv, beta, c)?, alpha, Some(beta))
        };

        let (me, wr) = match &read {
            None => (st.me, st.wr),
            Some(r) => (write_external(tape, &self.ext, st.me, s, r.weights)?, r.weights),
        };

        let me_flat = if ab.no_external_memory {
            None
        } else {
            Some(tape.reshape(me, Shape::vector(self.n_e * self.m))?)
        };
        let (mv_flat, mv_rows) = if ab.no_slot_value_memory {
            (None, Vec::new())
        } else {
            let flat = tape.reshape(mv, Shape::vector(self.n_s * self.m))?;
            let rows = (0..self.n_s).map(|i| tape.row(mv, i)).collect::<Result<_, _>>()?;
            (Some(flat), rows)
        };
        let state = NodeState { s, mv, me, wr };
        Ok((
            state,
            TurnNodes {
                state,
                r_v,
                r_e,
                alpha,
                beta,
                me_flat,
                mv_flat,
                mv_rows,
            },
        ))
    }
}
