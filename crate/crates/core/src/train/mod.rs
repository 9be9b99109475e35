//! Two-stage training: heuristic pretraining of the attention and gates,
//! then the scheduled main loss, with dev-loss checkpoint selection.

mod config;
mod gold;
mod gradcheck;
mod loss;
mod optim;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::TrainConfig;
pub use gold::{derive_gold, GoldSupervision};
pub use gradcheck::{gradient_check, GroupCheck, NORM_FLOOR};
pub use loss::LossWeights;
pub use optim::{adam_step, schedule, AdamConfig, Moments};

use crate::data::datagen::mix_seed;
use crate::data::ontology::{DialogueAct, Ontology, Session};
use crate::data::vocab::{init_slot_keys, load_embeddings, Vocabulary, PAD};
use crate::eval::score;
use crate::model::{EncodedInput, Model, Prediction, TurnNodes};
use crate::tensor::{Gradients, NodeId, Real, Tape};
use crate::Error;

/// A session encoded against a model's vocabulary, with its targets.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub inputs: Vec<EncodedInput>,
    pub acts: Vec<DialogueAct>,
    pub gold: Vec<GoldSupervision>,
}

pub fn prepare<F: Real>(model: &Model<F>, sessions: &[Session]) -> Result<Vec<Prepared>, Error> {
    sessions
        .iter()
        .map(|s| {
            for (k, t) in s.turns.iter().enumerate() {
                t.act
                    .validate(&model.ontology)
                    .map_err(|e| Error::Data(format!("session {} turn {k}: {e}", s.id)))?;
            }
            let inputs = model.encode_session(s);
            let gold = inputs
                .iter()
                .map(|i| derive_gold(&i.tokens, &model.ontology))
                .collect();
            Ok(Prepared {
                inputs,
                acts: s.turns.iter().map(|t| t.act.clone()).collect(),
                gold,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Main,
}

/// Loss of the pretraining stage: heuristic supervision of attention and
/// gates, turn by turn, with no recurrence and no heads.
fn pretrain_loss<'p, F: Real>(
    model: &'p Model<F>,
    tape: &mut Tape<'p, F>,
    batch: &[&Prepared]) -> Result<Option<NodeId>, Error> {
    if model.config.ablation.no_slot_value_memory {
        return Ok(None);
    }
    let ctx = model.bind(tape)?;
    let (mut alphas, mut betas, mut gold) = (Vec::new(), Vec::new(), Vec::new());
    for p in batch {
        for (inp, g) in p.inputs.iter().zip(&p.gold) {
            let (a, b) = ctx.slot_update(tape, inp)?;
            alphas.push(a);
            betas.push(Some(b));
            gold.push(g);
        }
    }
    loss::heuristic_loss(tape, &alphas, &betas, &gold)
}

/// Runs the controller over every session of `batch` and returns the turn
/// nodes, flattened in session order.
fn unroll<'p, F: Real>(
    model: &'p Model<F>,
    tape: &mut Tape<'p, F>,
    batch: &[&Prepared],
) -> Result<(crate::model::Ctx, Vec<TurnNodes>), Error> {
    let ctx = model.bind(tape)?;
    let mut turns = Vec::new();
    for p in batch {
        let mut st = ctx.initial_state(tape);
        for inp in &p.inputs {
            let (next, nodes) = ctx.step(tape, &st, inp)?;
            turns.push(nodes);
            st = next;
        }
    }
    Ok((ctx, turns))
}

fn main_stage_loss<'p, F: Real>(
    model: &'p Model<F>,
    tape: &mut Tape<'p, F>,
    batch: &[&Prepared],
    w: LossWeights,
) -> Result<NodeId, Error> {
    let (ctx, turns) = unroll(model, tape, batch)?;
    let refs: Vec<&TurnNodes> = turns.iter().collect();
    let acts: Vec<&DialogueAct> = batch.iter().flat_map(|p| &p.acts).collect();
    let n_s = model.ontology.num_slots();
    let dat = ctx.dat_probs(tape, &refs)?;
    let mask = (0..n_s)
        .map(|i| if w.gamma != 0.0 { ctx.mask_probs(tape, i, &refs).map(Some) } else { Ok(None) })
        .collect::<Result<Vec<_>, _>>()?;
    let needed = loss::masked_slots(&acts, n_s);
    let value = (0..n_s)
        .map(|i| {
            if w.lambda != 0.0 && needed[i] {
                ctx.value_probs(tape, i, &refs).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = loss::main_loss(tape, dat, &mask, &value, &acts, w.gamma, w.lambda)?;
    if w.heuristic != 0.0 {
        let alphas: Vec<_> = turns.iter().map(|t| t.alpha).collect();
        let betas: Vec<_> = turns.iter().map(|t| t.beta).collect();
        let gold: Vec<_> = batch.iter().flat_map(|p| &p.gold).collect();
        if let Some(h) = loss::heuristic_loss(tape, &alphas, &betas, &gold)? {
            let h = tape.scale(h, F::from_f64c(w.heuristic))?;
            total = tape.add(total, h)?;
        }
    }
    Ok(total)
}

/// Mean per-session loss of a batch and its gradients. `None` when the
/// stage has nothing to train.
pub fn batch_gradients<F: Real>(
    model: &Model<F>,
    batch: &[&Prepared],
    stage: Stage,
    w: LossWeights,
) -> Result<Option<(F, Gradients<F>)>, Error> {
    let mut tape = Tape::with_params(&model.params);
    let total = match stage {
        Stage::Pretrain => pretrain_loss(model, &mut tape, batch)?,
        Stage::Main => Some(main_stage_loss(model, &mut tape, batch, w)?),
    };
    let Some(total) = total else { return Ok(None) };
    let mean = tape.scale(total, F::one() / F::from_usize(batch.len()).unwrap())?;
    let value = tape.scalar(mean);
    Ok(Some((value, tape.backward(mean)?)))
}

/// Summed loss and head argmaxes of one batch, forward only.
fn forward_batch<F: Real>(
    model: &Model<F>,
    batch: &[&Prepared],
    w: LossWeights,
) -> Result<(f64, Vec<Vec<Prediction>>), Error> {
    let mut tape = Tape::with_params(&model.params);
    let (ctx, turns) = unroll(model, &mut tape, batch)?;
    let refs: Vec<&TurnNodes> = turns.iter().collect();
    let heads = ctx.heads_for_turns(&mut tape, &refs)?;
    let acts: Vec<&DialogueAct> = batch.iter().flat_map(|p| &p.acts).collect();
    let mask: Vec<_> = heads.mask.iter().copied().map(Some).collect();
    let value: Vec<_> = heads.value.iter().copied().map(Some).collect();
    let mut total = loss::main_loss(&mut tape, heads.dat, &mask, &value, &acts, w.gamma, w.lambda)?;
    if w.heuristic != 0.0 {
        let alphas: Vec<_> = turns.iter().map(|t| t.alpha).collect();
        let betas: Vec<_> = turns.iter().map(|t| t.beta).collect();
        let gold: Vec<_> = batch.iter().flat_map(|p| &p.gold).collect();
        if let Some(h) = loss::heuristic_loss(&mut tape, &alphas, &betas, &gold)? {
            let h = tape.scale(h, F::from_f64c(w.heuristic))?;
            total = tape.add(total, h)?;
        }
    }
    let mut preds = Vec::with_capacity(batch.len());
    let mut t = 0;
    for p in batch {
        preds.push(
            (0..p.inputs.len())
                .map(|k| Prediction::from_heads(&heads.outputs(&tape, t + k), 0.5))
                .collect(),
        );
        t += p.inputs.len();
    }
    Ok((tape.scalar(total).to_f64c(), preds))
}

/// Mean per-session loss over `data` and the predictions for every turn.
pub fn loss_and_predictions<F: Real>(
    model: &Model<F>,
    data: &[Prepared],
    w: LossWeights,
    batch_size: usize,
) -> Result<(f64, Vec<Vec<Prediction>>), Error> {
    let mut sum = 0.0;
    let mut preds = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&Prepared> = chunk.iter().collect();
        let (l, p) = forward_batch(model, &refs, w)?;
        sum += l;
        preds.extend(p);
    }
    Ok((sum / data.len().max(1) as f64, preds))
}

/// Adam state for every parameter, created on first use.
pub struct Optimizer<F> {
    pub config: AdamConfig,
    moments: Vec<Option<Moments<F>>>,
}

impl<F: Real> Optimizer<F> {
    pub fn new(config: AdamConfig) -> Self {
        Optimizer {
            config,
            moments: Vec::new(),
        }
    }

    /// Applies gradients to every trainable parameter that received one.
    /// The PAD embedding row never moves.
    pub fn step(&mut self, model: &mut Model<F>, grads: &mut Gradients<F>) -> Result<(), Error> {
        let m = model.config.m;
        if let Some(g) = grads.param_mut(model.ids.embedding) {
            g[PAD * m..(PAD + 1) * m].iter_mut().for_each(|v| *v = F::zero());
        }
        for (id, p) in model.params.iter() {
            if let Some(g) = grads.param(id) {
                if !p.trainable {
                    continue;
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        if self.moments.len() < model.params.len() {
            self.moments.resize(model.params.len(), None);
        }
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let Some(g) = grads.param(id) else { continue };
            let param = model.params.get_mut(id);
            if !param.trainable {
                continue;
            }
            let mom = self.moments[id.index()].get_or_insert_with(|| Moments::new(g.len()));
            adam_step(param.value.data_mut(), g, mom, &self.config);
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub gamma: f64,
    pub lambda: f64,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_overall_turn_acc: f64,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub log: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, when any main epoch ran.
    pub best_epoch: Option<usize>,
}

/// A fresh model for `train`: vocabulary from the training split, optional
/// embedding file, slot keys snapshotted afterwards.
pub fn init_model(ont: &Ontology, train: &[Session], cfg: &TrainConfig) -> Result<Model<f32>, Error> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let vocab = Vocabulary::build(train, ont);
    let mut model = Model::new(ont.clone(), vocab, cfg.model, cfg.seed)?;
    if let Some(path) = &cfg.embeddings {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        load_embeddings_into(&mut model, &text)?;
    }
    Ok(model)
}

/// Overwrites embedding rows from a text file and re-snapshots the slot keys.
pub fn load_embeddings_into(model: &mut Model<f32>, text: &str) -> Result<usize, Error> {
    let mut table = model.params.value(model.ids.embedding).clone();
    let n = load_embeddings(text, &model.vocab, &mut table)?;
    let keys = init_slot_keys(&model.ontology, &model.vocab, &table)?;
    model.params.get_mut(model.ids.embedding).value = table;
    model.params.get_mut(model.ids.slot_keys).value = keys;
    Ok(n)
}

pub fn read_config_file(path: &Path, cfg: &mut TrainConfig) -> Result<(), Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    cfg.apply_file(&text)
}

/// Trains `model` and returns the parameters with the lowest dev loss among
/// main-stage epochs. `on_epoch` sees every log record as it is produced.
pub fn train(
    mut model: Model<f32>,
    train: &[Session],
    dev: &[Session],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, Error> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Data("train and dev splits must be non-empty".into()));
    }
    let train_data = prepare(&model, train)?;
    let dev_data = prepare(&model, dev)?;
    let dev_gold: Vec<Vec<DialogueAct>> = dev_data.iter().map(|p| p.acts.clone()).collect();
    let mut opt = Optimizer::new(AdamConfig {
        lr: cfg.learning_rate,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5B0F));
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let (pre, main) = cfg.stages();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Model<f32>)> = None;

    for epoch in 1..=pre + main {
        let (stage, w) = if epoch <= pre {
            let w = LossWeights {
                gamma: 0.0,
                lambda: 0.0,
                heuristic: 1.0,
            };
            (Stage::Pretrain, w)
        } else {
            let (gamma, lambda) = schedule(epoch - pre);
            let w = LossWeights {
                gamma,
                lambda,
                heuristic: cfg.aux_heuristic_weight,
            };
            (Stage::Main, w)
        };
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.minibatch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train_data[i]).collect();
            if let Some((l, mut g)) = batch_gradients(&model, &batch, stage, w)? {
                opt.step(&mut model, &mut g)?;
                loss_sum += l as f64;
            }
            batches += 1;
        }
        let (dev_loss, preds) = loss_and_predictions(&model, &dev_data, LossWeights::DEV, cfg.minibatch_size)?;
        let report = score(&model.ontology, &dev_gold, &preds)?;
        let rec = EpochRecord {
            epoch,
            stage,
            gamma: w.gamma,
            lambda: w.lambda,
            train_loss: loss_sum / batches.max(1) as f64,
            dev_loss,
            dev_overall_turn_acc: report.turn.overall,
        };
        log::info!(
            "epoch {epoch} {stage:?} train {:.4} dev {:.4} acc {:.2}",
            rec.train_loss,
            rec.dev_loss,
            rec.dev_overall_turn_acc
        );
        on_epoch(&rec);
        log.push(rec);
        if stage == Stage::Main && best.as_ref().is_none_or(|(l, _, _)| dev_loss < *l) {
            best = Some((dev_loss, epoch, model.clone()));
        }
    }
    Ok(match best {
        Some((_, epoch, m)) => TrainOutcome {
            model: m,
            log,
            best_epoch: Some(epoch),
        },
        None => TrainOutcome {
            model,
            log,
            best_epoch: None,
        },
    })
}
