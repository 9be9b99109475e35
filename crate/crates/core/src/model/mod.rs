//! The dialogue manager: parameters, recurrent state and per-turn inference.

mod attention;
mod controller;
mod heads;
mod memory;
pub mod persist;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::datagen::mix_seed;
use crate::data::ontology::{tokenize, Ontology, Session};
use crate::data::vocab::{init_slot_keys, Vocabulary, PAD, UNK};
use crate::tensor::{ParamId, ParamStore, Real, Shape, Tape, Tensor};
use crate::Error;

pub use controller::{DialogueMemoryState, TurnTrace};
pub(crate) use controller::{Ctx, TurnNodes};
pub use heads::{argmax, assemble_act, HeadOutputs, Prediction};

/// Which parts of the architecture are switched off.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    /// Drop the slot-value memory; the controller state stands in for it.
    pub no_slot_value_memory: bool,
    /// Update the value memory from the averaged utterance embedding.
    pub no_attention: bool,
    /// Drop the external memory; the controller state stands in for it.
    pub no_external_memory: bool,
}

impl Ablation {
    pub const RNN: Ablation = Ablation {
        no_slot_value_memory: true,
        no_attention: false,
        no_external_memory: true,
    };

    pub fn sm() -> Self {
        Ablation {
            no_slot_value_memory: true,
            ..Default::default()
        }
    }

    pub fn attn() -> Self {
        Ablation {
            no_attention: true,
            ..Default::default()
        }
    }

    pub fn em() -> Self {
        Ablation {
            no_external_memory: true,
            ..Default::default()
        }
    }

    /// Parses one `--ablation` flag value and folds it into `self`.
    pub fn with_flag(mut self, flag: &str) -> Result<Self, Error> {
        match flag {
            "sm" => self.no_slot_value_memory = true,
            "attn" => self.no_attention = true,
            "em" => self.no_external_memory = true,
            "rnn" => {
                self.no_slot_value_memory = true;
                self.no_external_memory = true;
            }
            other => return Err(Error::Config(format!("unknown ablation {other:?}"))),
        }
        Ok(self)
    }

    pub fn label(&self) -> String {
        match (self.no_slot_value_memory, self.no_attention, self.no_external_memory) {
            (false, false, false) => "MAD".into(),
            (true, _, true) => "RNN".into(),
            (sm, attn, em) => {
                let mut parts = vec!["MAD"];
                if sm {
                    parts.push("SM");
                }
                if attn && !sm {
                    parts.push("Attn");
                }
                if em {
                    parts.push("EM");
                }
                parts.join("-")
            }
        }
    }
}

/// Inputs of the per-slot mask classifier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MaskInputs {
    /// Controller state, external memory and the slot's value memory row.
    #[default]
    Prose,
    /// External memory only.
    Formula,
}

impl MaskInputs {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "prose" => Some(MaskInputs::Prose),
            "formula" => Some(MaskInputs::Formula),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskInputs::Prose => "prose",
            MaskInputs::Formula => "formula",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Uniform(f64),
    /// Standard normal, the literal reading of the original setup.
    Normal01,
}

impl Default for Init {
    fn default() -> Self {
        Init::Uniform(0.08)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub m: usize,
    pub n_e: usize,
    pub max_tokens: usize,
    pub ablation: Ablation,
    pub mask_inputs: MaskInputs,
    pub init: Init,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            m: 128,
            n_e: 8,
            max_tokens: 64,
            ablation: Ablation::default(),
            mask_inputs: MaskInputs::default(),
            init: Init::default(),
        }
    }
}

/// Two-layer perceptron: `w2 tanh(w1 x + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

/// Every parameter of the model. Instantiated with [`ParamId`] for the
/// store and with tape node ids while building a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub embedding: T,
    /// Frozen slot keys M^S.
    pub slot_keys: T,
    pub gru_w: T,
    pub gru_b: T,
    pub gru_u_zr: T,
    pub gru_u_h: T,
    pub attn_w_key: T,
    pub attn_w_tok: T,
    pub attn_b: T,
    pub attn_v: T,
    pub attn_c: T,
    pub gate_wy: T,
    pub gate_wc: T,
    pub gate_b: T,
    /// Initial external memory.
    pub ext_m0: T,
    pub ext_w_g: T,
    pub ext_v_mem: T,
    pub ext_v_state: T,
    pub ext_w_e: T,
    pub ext_w_a: T,
    pub dat: Mlp<T>,
    pub mask: Vec<Mlp<T>>,
    pub value: Vec<Mlp<T>>,
}

impl<T: Copy> Params<T> {
    pub fn try_map<U, E>(&self, mut f: impl FnMut(T) -> Result<U, E>) -> Result<Params<U>, E> {
        let mut mlp = |m: &Mlp<T>| -> Result<Mlp<U>, E> {
            Ok(Mlp {
                w1: f(m.w1)?,
                b1: f(m.b1)?,
                w2: f(m.w2)?,
                b2: f(m.b2)?,
            })
        };
        let dat = mlp(&self.dat)?;
        let mask = self.mask.iter().map(&mut mlp).collect::<Result<_, _>>()?;
        let value = self.value.iter().map(&mut mlp).collect::<Result<_, _>>()?;
        Ok(Params {
            embedding: f(self.embedding)?,
            slot_keys: f(self.slot_keys)?,
            gru_w: f(self.gru_w)?,
            gru_b: f(self.gru_b)?,
            gru_u_zr: f(self.gru_u_zr)?,
            gru_u_h: f(self.gru_u_h)?,
            attn_w_key: f(self.attn_w_key)?,
            attn_w_tok: f(self.attn_w_tok)?,
            attn_b: f(self.attn_b)?,
            attn_v: f(self.attn_v)?,
            attn_c: f(self.attn_c)?,
            gate_wy: f(self.gate_wy)?,
            gate_wc: f(self.gate_wc)?,
            gate_b: f(self.gate_b)?,
            ext_m0: f(self.ext_m0)?,
            ext_w_g: f(self.ext_w_g)?,
            ext_v_mem: f(self.ext_v_mem)?,
            ext_v_state: f(self.ext_v_state)?,
            ext_w_e: f(self.ext_w_e)?,
            ext_w_a: f(self.ext_w_a)?,
            dat,
            mask,
            value,
        })
    }
}

impl Params<ParamId> {
    /// Parameters of the prediction heads.
    pub fn head_ids(&self) -> Vec<ParamId> {
        std::iter::once(&self.dat)
            .chain(&self.mask)
            .chain(&self.value)
            .flat_map(|m| [m.w1, m.b1, m.w2, m.b2])
            .collect()
    }
}

/// Token ids of one turn, ready for the controller.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedInput {
    pub tokens: Vec<String>,
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    pub truncated: bool,
}

/// Head input widths implied by a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadDims {
    pub dat: usize,
    pub mask: usize,
    pub value: usize,
}

impl ModelConfig {
    pub fn head_dims(&self, n_s: usize) -> HeadDims {
        let m = self.m;
        let ext = if self.ablation.no_external_memory { 0 } else { self.n_e * m };
        let sv = !self.ablation.no_slot_value_memory;
        let dat = m + ext + if sv { n_s * m } else { 0 };
        let mask = match self.mask_inputs {
            MaskInputs::Prose => m + ext + if sv { m } else { 0 },
            MaskInputs::Formula if ext == 0 => m,
            MaskInputs::Formula => ext,
        };
        HeadDims {
            dat,
            mask,
            value: 2 * m,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), Error> {
        if self.m == 0 || self.n_e == 0 || self.max_tokens == 0 {
            return Err(Error::Config("m, n_e and max_tokens must be positive".into()));
        }
        Ok(())
    }
}

pub struct Model<F: Real> {
    pub config: ModelConfig,
    pub ontology: Ontology,
    pub vocab: Vocabulary,
    pub params: ParamStore<F>,
    pub ids: Params<ParamId>,
}

impl<F: Real> Clone for Model<F> {
    fn clone(&self) -> Self {
        Model {
            config: self.config,
            ontology: self.ontology.clone(),
            vocab: self.vocab.clone(),
            params: self.params.clone(),
            ids: self.ids.clone(),
        }
    }
}

fn init_tensor<F: Real, R: Rng>(shape: Shape, init: Init, rng: &mut R) -> Tensor<F> {
    let data = (0..shape.len())
        .map(|_| {
            let v = match init {
                Init::Uniform(a) => rng.gen_range(-a..a),
                Init::Normal01 => {
                    // Box-Muller.
                    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                    let u2: f64 = rng.gen();
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                }
            };
            F::from_f64c(v)
        })
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}

impl<F: Real> Model<F> {
    /// Randomly initialised model. The slot keys are a snapshot of the mean
    /// slot-name embeddings at this point and never change afterwards.
    pub fn new(ontology: Ontology, vocab: Vocabulary, config: ModelConfig, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5EED));
        let mut store = ParamStore::new();
        let (m, n_e, n_s) = (config.m, config.n_e, ontology.num_slots());
        let init = config.init;
        let mut add = |store: &mut ParamStore<F>, name: String, shape: Shape| {
            let t = init_tensor(shape, init, &mut rng);
            store.add(name, t, true)
        };

        let embedding = add(&mut store, "embedding".into(), Shape::matrix(vocab.len(), m));
        store.get_mut(embedding).value.data_mut()[PAD * m..(PAD + 1) * m]
            .iter_mut()
            .for_each(|v| *v = F::zero());
        let keys = init_slot_keys(&ontology, &vocab, store.value(embedding))?;
        let slot_keys = store.add("slot_keys", keys, false);

        let dims = config.head_dims(n_s);
        let mut mlp = |store: &mut ParamStore<F>, name: &str, input: usize, out: usize| Mlp {
            w1: add(store, format!("{name}.w1"), Shape::matrix(m, input)),
            b1: add(store, format!("{name}.b1"), Shape::vector(m)),
            w2: add(store, format!("{name}.w2"), Shape::matrix(out, m)),
            b2: add(store, format!("{name}.b2"), Shape::vector(out)),
        };
        // Heads first so the closure borrow of `add` ends before the rest.
        let dat = mlp(&mut store, "dat", dims.dat, ontology.num_act_types());
        let mask = (0..n_s)
            .map(|i| mlp(&mut store, &format!("mask{i}"), dims.mask, 1))
            .collect();
        let value = (0..n_s)
            .map(|i| mlp(&mut store, &format!("value{i}"), dims.value, ontology.num_values(i)))
            .collect();
        let mut add = |name: &str, shape: Shape| {
            let t = init_tensor(shape, init, &mut rng);
            store.add(name, t, true)
        };
        let ids = Params {
            embedding,
            slot_keys,
            gru_w: add("gru.w", Shape::matrix(3 * m, 4 * m)),
            gru_b: add("gru.b", Shape::vector(3 * m)),
            gru_u_zr: add("gru.u_zr", Shape::matrix(2 * m, m)),
            gru_u_h: add("gru.u_h", Shape::matrix(m, m)),
            attn_w_key: add("attn.w_key", Shape::matrix(m, m)),
            attn_w_tok: add("attn.w_tok", Shape::matrix(m, m)),
            attn_b: add("attn.b", Shape::vector(m)),
            attn_v: add("attn.v", Shape::matrix(1, m)),
            attn_c: add("attn.c", Shape::vector(1)),
            gate_wy: add("gate.w_y", Shape::matrix(n_s, m)),
            gate_wc: add("gate.w_c", Shape::matrix(n_s, m)),
            gate_b: add("gate.b", Shape::vector(n_s)),
            ext_m0: add("ext.m0", Shape::matrix(n_e, m)),
            ext_w_g: add("ext.w_g", Shape::matrix(n_e, m)),
            ext_v_mem: add("ext.v_mem", Shape::matrix(1, m)),
            ext_v_state: add("ext.v_state", Shape::matrix(1, m)),
            ext_w_e: add("ext.w_e", Shape::matrix(m, m)),
            ext_w_a: add("ext.w_a", Shape::matrix(m, m)),
            dat,
            mask,
            value,
        };
        Ok(Model {
            config,
            ontology,
            vocab,
            params: store,
            ids,
        })
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config,
            ontology: self.ontology.clone(),
            vocab: self.vocab.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
        }
    }

    /// Tokenizes and maps one turn. An empty user utterance becomes a single
    /// UNK token; long utterances are cut at `max_tokens`.
    pub fn encode(&self, user: &str, system_prev: &str) -> EncodedInput {
        let mut tokens = tokenize(user);
        let truncated = tokens.len() > self.config.max_tokens;
        tokens.truncate(self.config.max_tokens);
        let mut x = self.vocab.ids(&tokens);
        if x.is_empty() {
            x.push(UNK);
            tokens.push(self.vocab.token(UNK).to_string());
        }
        let mut ys = tokenize(system_prev);
        ys.truncate(self.config.max_tokens);
        EncodedInput {
            tokens,
            x,
            y: self.vocab.ids(&ys),
            truncated,
        }
    }

    /// Binds every parameter to `tape` and precomputes per-tape constants.
    pub(crate) fn bind<'p>(&'p self, tape: &mut Tape<'p, F>) -> Result<Ctx, Error> {
        Ctx::new(self, tape)
    }

    pub fn init_state(&self) -> DialogueMemoryState<F> {
        DialogueMemoryState::initial(self)
    }

    /// Advances the controller by one turn and evaluates the heads.
    pub fn step(
        &self,
        state: &DialogueMemoryState<F>,
        input: &EncodedInput,
    ) -> Result<(DialogueMemoryState<F>, TurnTrace<F>), Error> {
        let mut tape = Tape::with_params(&self.params);
        let ctx = self.bind(&mut tape)?;
        let st = state.to_nodes(&mut tape);
        let (next, nodes) = ctx.step(&mut tape, &st, input)?;
        let heads = ctx.heads_for_turns(&mut tape, &[&nodes])?;
        let trace = TurnTrace::collect(&tape, &nodes, input, heads.outputs(&tape, 0));
        Ok((DialogueMemoryState::from_nodes(&tape, &next, state.turn + 1), trace))
    }

    /// Runs a whole session of (user, previous system) utterance pairs.
    pub fn run_session(&self, inputs: &[EncodedInput]) -> Result<Vec<TurnTrace<F>>, Error> {
        let mut tape = Tape::with_params(&self.params);
        let ctx = self.bind(&mut tape)?;
        let mut st = ctx.initial_state(&mut tape);
        let mut all = Vec::with_capacity(inputs.len());
        for inp in inputs {
            let (next, nodes) = ctx.step(&mut tape, &st, inp)?;
            all.push(nodes);
            st = next;
        }
        if all.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&TurnNodes> = all.iter().collect();
        let heads = ctx.heads_for_turns(&mut tape, &refs)?;
        Ok(all
            .iter()
            .zip(inputs)
            .enumerate()
            .map(|(t, (n, inp))| TurnTrace::collect(&tape, n, inp, heads.outputs(&tape, t)))
            .collect())
    }

    /// Head argmaxes for every turn of a session.
    pub fn predict(&self, inputs: &[EncodedInput]) -> Result<Vec<Prediction>, Error> {
        Ok(self
            .run_session(inputs)?
            .iter()
            .map(|t| Prediction::from_heads(&t.heads, 0.5))
            .collect())
    }

    /// Encodes every turn of a session.
    pub fn encode_session(&self, session: &Session) -> Vec<EncodedInput> {
        session
            .turns
            .iter()
            .map(|t| self.encode(&t.user, &t.system_prev))
            .collect()
    }

    pub fn num_trainable(&self) -> usize {
        self.params.trainable_len()
    }
}
