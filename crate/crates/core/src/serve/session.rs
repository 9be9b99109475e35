//! One conversation with a loaded model, independent of any transport.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::datagen::verbalize;
use crate::data::ontology::{tokenize, DialogueAct};
use crate::model::{argmax, DialogueMemoryState, Model, Prediction};
use crate::Error;

/// A slot value with its probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueProb {
    pub value: String,
    pub p: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActView {
    pub act_type: String,
    /// Slot name to value for the slots the act carries.
    pub slots: BTreeMap<String, String>,
    /// Surface form, used as the previous system utterance of the next turn.
    pub text: String,
}

/// Everything the inspector shows for one turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub turn: usize,
    pub user: String,
    pub system_prev: String,
    pub tokens: Vec<String>,
    pub truncated: bool,
    pub predicted_act: ActView,
    /// One row per slot over `tokens`.
    pub alpha: Vec<Vec<f32>>,
    pub beta: Vec<f32>,
    pub mask_probs: Vec<f32>,
    /// Distribution over act types, in ontology order.
    pub da_type_dist: Vec<f32>,
    /// Three most probable values per slot.
    pub value_top: Vec<Vec<ValueProb>>,
    /// Value memory read r^V and external read r^E.
    pub r_v: Vec<f32>,
    pub r_e: Vec<f32>,
    pub read_weights: Vec<f32>,
}

pub const TOP_K: usize = 3;

/// Recurrent state and transcript of one served conversation.
#[derive(Clone, Debug)]
pub struct ServingSession {
    pub state: DialogueMemoryState<f32>,
    pub transcript: Vec<TurnResult>,
    pub last_act: Option<DialogueAct>,
}

impl ServingSession {
    pub fn new(model: &Model<f32>) -> Self {
        ServingSession {
            state: model.init_state(),
            transcript: Vec::new(),
            last_act: None,
        }
    }

    /// Advances the controller by one user utterance. The previous system
    /// utterance is the verbalized previous prediction.
    pub fn submit(&mut self, model: &Model<f32>, utterance: &str) -> Result<TurnResult, Error> {
        if tokenize(utterance).is_empty() {
            return Err(Error::Data("utterance is empty".into()));
        }
        let ont = &model.ontology;
        let system_prev = self
            .last_act
            .as_ref()
            .map(|a| verbalize(ont, a, 0))
            .unwrap_or_default();
        let input = model.encode(utterance, &system_prev);
        let (next, trace) = model.step(&self.state, &input)?;
        let act = Prediction::from_heads(&trace.heads, 0.5).act();
        let value_top = trace
            .heads
            .values
            .iter()
            .enumerate()
            .map(|(i, dist)| {
                let mut order: Vec<usize> = (0..dist.len()).collect();
                // Stable sort keeps ties in index order, matching argmax.
                order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]));
                debug_assert_eq!(order[0], argmax(dist));
                order
                    .into_iter()
                    .take(TOP_K)
                    .map(|k| ValueProb {
                        value: ont.slot(i).values[k].clone(),
                        p: dist[k],
                    })
                    .collect()
            })
            .collect();
        let result = TurnResult {
            turn: next.turn,
            user: utterance.to_string(),
            system_prev,
            tokens: trace.tokens,
            truncated: trace.truncated,
            predicted_act: ActView {
                act_type: ont.act_types()[act.act_type].clone(),
                slots: act
                    .slot_values()
                    .map(|(s, v)| (ont.slot(s).name.clone(), ont.slot(s).values[v].clone()))
                    .collect(),
                text: verbalize(ont, &act, 0),
            },
            alpha: trace.alpha,
            beta: trace.beta,
            mask_probs: trace.heads.mask,
            da_type_dist: trace.heads.da_type,
            value_top,
            r_v: trace.r_v,
            r_e: trace.r_e,
            read_weights: trace.read_weights,
        };
        self.state = next;
        self.last_act = Some(act);
        self.transcript.push(result.clone());
        Ok(result)
    }
}

/// Static description of a served model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub architecture: String,
    pub slots: Vec<SlotInfo>,
    pub act_types: Vec<String>,
    pub ask_slot: Option<String>,
    pub ontology_hash: String,
    pub m: usize,
    pub n_e: usize,
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub mask_head_inputs: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotInfo {
    pub name: String,
    pub values: Vec<String>,
}

pub fn model_info(model: &Model<f32>) -> ModelInfo {
    let ont = &model.ontology;
    ModelInfo {
        architecture: model.config.ablation.label(),
        slots: ont
            .slots()
            .iter()
            .map(|s| SlotInfo {
                name: s.name.clone(),
                values: s.values.clone(),
            })
            .collect(),
        act_types: ont.act_types().to_vec(),
        ask_slot: ont.ask_slot().map(|i| ont.slot(i).name.clone()),
        ontology_hash: ont.hash(),
        m: model.config.m,
        n_e: model.config.n_e,
        vocab_size: model.vocab.len(),
        max_tokens: model.config.max_tokens,
        mask_head_inputs: model.config.mask_inputs.name().into(),
    }
}
