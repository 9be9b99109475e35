//! Binary model container.
//!
//! Layout (little endian): magic `MADM`, `u16` version, then four
//! length-prefixed (`u32`) blocks: the model configuration as `key=value`
//! lines, the ontology hash, the ontology JSON and the vocabulary (one token
//! per line). A `u32` tensor count follows, and each tensor is stored as a
//! `u16`-prefixed name, a `u8` rank, `u32` extents and `f32` values.

use std::fs;
use std::path::Path;

use super::{Ablation, Init, MaskInputs, Model, ModelConfig};
use crate::data::ontology::Ontology;
use crate::data::vocab::Vocabulary;
use crate::tensor::{Real, Shape, Tensor};
use crate::Error;

const MAGIC: &[u8; 4] = b"MADM";
const VERSION: u16 = 1;

impl ModelConfig {
    /// `key=value` lines, in a fixed order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let init = match self.init {
            Init::Uniform(a) => format!("uniform:{a}"),
            Init::Normal01 => "normal01".into(),
        };
        vec![
            ("m".into(), self.m.to_string()),
            ("n_e".into(), self.n_e.to_string()),
            ("max_tokens".into(), self.max_tokens.to_string()),
            ("no_slot_value_memory".into(), self.ablation.no_slot_value_memory.to_string()),
            ("no_attention".into(), self.ablation.no_attention.to_string()),
            ("no_external_memory".into(), self.ablation.no_external_memory.to_string()),
            ("mask_head_inputs".into(), self.mask_inputs.name().into()),
            ("init".into(), init),
        ]
    }

    /// Applies one `key=value` pair. Returns `Ok(false)` for keys that are
    /// not model keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, Error> {
        let bad = || Error::Config(format!("bad value {value:?} for {key}"));
        let flag = |v: &str| v.parse::<bool>().map_err(|_| bad());
        match key {
            "m" => self.m = value.parse().map_err(|_| bad())?,
            "n_e" => self.n_e = value.parse().map_err(|_| bad())?,
            "max_tokens" => self.max_tokens = value.parse().map_err(|_| bad())?,
            "no_slot_value_memory" => self.ablation.no_slot_value_memory = flag(value)?,
            "no_attention" => self.ablation.no_attention = flag(value)?,
            "no_external_memory" => self.ablation.no_external_memory = flag(value)?,
            "rnn_only" => {
                if flag(value)? {
                    self.ablation = Ablation {
                        no_attention: self.ablation.no_attention,
                        ..Ablation::RNN
                    };
                }
            }
            "mask_head_inputs" => self.mask_inputs = MaskInputs::parse(value).ok_or_else(bad)?,
            "init" => {
                self.init = match value {
                    "normal01" => Init::Normal01,
                    "uniform" => Init::default(),
                    v => match v.strip_prefix("uniform:") {
                        Some(a) => Init::Uniform(a.parse().map_err(|_| bad())?),
                        None => return Err(bad()),
                    },
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn block(&mut self, bytes: &[u8]) {
        self.0.extend((bytes.len() as u32).to_le_bytes());
        self.0.extend(bytes);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], Error> {
        if self.buf.len() - self.pos < n {
            return Err(Error::ModelFile(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, Error> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, Error> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, Error> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn text(&mut self, what: &str) -> Result<&'a str, Error> {
        let n = self.u32(what)? as usize;
        std::str::from_utf8(self.take(n, what)?).map_err(|_| Error::ModelFile(format!("{what} is not UTF-8")))
    }
}

/// Serializes a model into container bytes.
pub fn to_bytes<F: Real>(model: &Model<F>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend(MAGIC);
    w.0.extend(VERSION.to_le_bytes());
    let config: String = model
        .config
        .to_kv()
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    w.block(config.as_bytes());
    w.block(model.ontology.hash().as_bytes());
    w.block(model.ontology.to_json().as_bytes());
    w.block(model.vocab.tokens().join("\n").as_bytes());
    w.0.extend((model.params.len() as u32).to_le_bytes());
    for (_, p) in model.params.iter() {
        w.0.extend((p.name.len() as u16).to_le_bytes());
        w.0.extend(p.name.as_bytes());
        let dims = p.value.shape().dims();
        w.0.push(dims.len() as u8);
        for d in dims {
            w.0.extend((d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            w.0.extend((v.to_f64c() as f32).to_le_bytes());
        }
    }
    w.0
}

/// Parses container bytes. When `expected` is given, the stored ontology
/// must hash identically.
pub fn from_bytes(bytes: &[u8], expected: Option<&Ontology>) -> Result<Model<f32>, Error> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::ModelFile("bad magic, not a model file".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::ModelFile(format!("unsupported version {version}")));
    }
    let mut config = ModelConfig::default();
    for line in r.text("config")?.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::ModelFile(format!("bad config line {line:?}")))?;
        if !config.set(k.trim(), v.trim())? {
            return Err(Error::ModelFile(format!("unknown config key {k:?}")));
        }
    }
    let hash = r.text("ontology hash")?.to_string();
    let ontology = Ontology::from_json(r.text("ontology")?)?;
    if ontology.hash() != hash {
        return Err(Error::HashMismatch {
            expected: hash,
            actual: ontology.hash(),
        });
    }
    if let Some(exp) = expected {
        if exp.hash() != hash {
            return Err(Error::HashMismatch {
                expected: exp.hash(),
                actual: hash,
            });
        }
    }
    let vocab_text = r.text("vocabulary")?;
    let vocab = Vocabulary::from_tokens(vocab_text.split('\n').skip(2).map(String::from));
    if vocab.tokens().join("\n") != vocab_text {
        return Err(Error::ModelFile("malformed vocabulary block".into()));
    }
    let mut model = Model::<f32>::new(ontology, vocab, config, 0)?;
    let count = r.u32("tensor count")? as usize;
    if count != model.params.len() {
        return Err(Error::ModelFile(format!(
            "expected {} tensors, found {count}",
            model.params.len()
        )));
    }
    for _ in 0..count {
        let n = r.u16("tensor name")? as usize;
        let name = std::str::from_utf8(r.take(n, "tensor name")?)
            .map_err(|_| Error::ModelFile("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let dims = (0..rank).map(|_| r.u32("extent").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let shape = Shape::from_dims(&dims).map_err(|e| Error::ModelFile(format!("{name}: {e}")))?;
        let raw = r.take(shape.len() * 4, &name)?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let id = model
            .params
            .find(&name)
            .ok_or_else(|| Error::ModelFile(format!("unknown tensor {name}")))?;
        if model.params.shape(id) != shape {
            return Err(Error::ModelFile(format!(
                "tensor {name} has shape {shape}, expected {}",
                model.params.shape(id)
            )));
        }
        model.params.get_mut(id).value = Tensor::new(shape, data)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFile("trailing bytes after tensors".into()));
    }
    Ok(model)
}

pub fn save_model<F: Real>(model: &Model<F>, path: &Path) -> Result<(), Error> {
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path, expected: Option<&Ontology>) -> Result<Model<f32>, Error> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, expected)
}
