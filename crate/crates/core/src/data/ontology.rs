//! Slots, values and dialogue-act types for a corpus, plus the annotated
//! dialogue records themselves.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Error;

/// Name of the synthetic slot whose values are requestable-slot names.
pub const ASK_SLOT: &str = "Ask_Slot";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ontology {
    slots: Vec<Slot>,
    act_types: Vec<String>,
    ask_slot: Option<usize>,
}

/// On-disk form of an ontology (`ontology.json`).
#[derive(Serialize, Deserialize)]
struct OntologyFile {
    slots: Vec<Slot>,
    da_types: Vec<String>,
    ask_slot: Option<String>,
    hash: String,
}

impl Ontology {
    pub fn new(slots: Vec<Slot>, act_types: Vec<String>, ask_slot: Option<&str>) -> Result<Self, Error> {
        if slots.is_empty() {
            return Err(Error::Ontology("at least one slot is required".into()));
        }
        if act_types.is_empty() {
            return Err(Error::Ontology("at least one act type is required".into()));
        }
        for (i, s) in slots.iter().enumerate() {
            if s.values.is_empty() {
                return Err(Error::Ontology(format!("slot {} has no values", s.name)));
            }
            if slots[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::Ontology(format!("duplicate slot name {}", s.name)));
            }
            for (j, v) in s.values.iter().enumerate() {
                if v.split_whitespace().count() != 1 {
                    return Err(Error::Ontology(format!(
                        "value {v:?} of slot {} is not a single token",
                        s.name
                    )));
                }
                if s.values[..j].contains(v) {
                    return Err(Error::Ontology(format!("slot {} lists {v} twice", s.name)));
                }
            }
        }
        for (i, a) in act_types.iter().enumerate() {
            if act_types[..i].contains(a) {
                return Err(Error::Ontology(format!("duplicate act type {a}")));
            }
        }
        let ask_slot = match ask_slot {
            None => None,
            Some(name) => Some(
                slots
                    .iter()
                    .position(|s| s.name == name)
                    .ok_or_else(|| Error::Ontology(format!("ask slot {name} is not a slot")))?,
            ),
        };
        Ok(Ontology {
            slots,
            act_types,
            ask_slot,
        })
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot(&self, i: usize) -> &Slot {
        &self.slots[i]
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn num_values(&self, slot: usize) -> usize {
        self.slots[slot].values.len()
    }

    pub fn act_types(&self) -> &[String] {
        &self.act_types
    }

    pub fn num_act_types(&self) -> usize {
        self.act_types.len()
    }

    pub fn ask_slot(&self) -> Option<usize> {
        self.ask_slot
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    pub fn act_index(&self, name: &str) -> Option<usize> {
        self.act_types.iter().position(|a| a == name)
    }

    pub fn value_index(&self, slot: usize, value: &str) -> Option<usize> {
        self.slots[slot].values.iter().position(|v| v == value)
    }

    /// Lowercase tokens of a slot name; underscores separate words.
    pub fn slot_name_tokens(&self, slot: usize) -> Vec<String> {
        self.slots[slot]
            .name
            .split(|c: char| c == '_' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    }

    /// SHA-256 over a canonical rendering of slots, values, act types and
    /// the ask slot.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.slots {
            h.update(b"slot\0");
            h.update(s.name.as_bytes());
            for v in &s.values {
                h.update(b"\0");
                h.update(v.as_bytes());
            }
            h.update(b"\n");
        }
        for a in &self.act_types {
            h.update(b"act\0");
            h.update(a.as_bytes());
            h.update(b"\n");
        }
        h.update(b"ask\0");
        if let Some(i) = self.ask_slot {
            h.update(self.slots[i].name.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        let file = OntologyFile {
            slots: self.slots.clone(),
            da_types: self.act_types.clone(),
            ask_slot: self.ask_slot.map(|i| self.slots[i].name.clone()),
            hash: self.hash(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("ontology serializes");
        s.push('\n');
        s
    }

    /// Parses `ontology.json`, refusing files whose stored hash does not
    /// match their content.
    pub fn from_json(text: &str) -> Result<Self, Error> {
        let file: OntologyFile =
            serde_json::from_str(text).map_err(|e| Error::Ontology(format!("malformed ontology file: {e}")))?;
        let ont = Ontology::new(file.slots, file.da_types, file.ask_slot.as_deref())?;
        let actual = ont.hash();
        if actual != file.hash {
            return Err(Error::HashMismatch {
                expected: file.hash,
                actual,
            });
        }
        Ok(ont)
    }
}

/// A system dialogue act: type, slot mask and per-slot values.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DialogueAct {
    pub act_type: usize,
    pub mask: Vec<bool>,
    /// Value index per slot; present whenever the mask bit is set.
    pub values: Vec<Option<usize>>,
}

impl DialogueAct {
    /// An act with no slots.
    pub fn bare(act_type: usize, num_slots: usize) -> Self {
        DialogueAct {
            act_type,
            mask: vec![false; num_slots],
            values: vec![None; num_slots],
        }
    }

    pub fn with_value(mut self, slot: usize, value: usize) -> Self {
        self.mask[slot] = true;
        self.values[slot] = Some(value);
        self
    }

    /// Checks the act against an ontology.
    pub fn validate(&self, ont: &Ontology) -> Result<(), String> {
        if self.act_type >= ont.num_act_types() {
            return Err(format!("act type index {} out of range", self.act_type));
        }
        if self.mask.len() != ont.num_slots() || self.values.len() != ont.num_slots() {
            return Err("mask/value length differs from slot count".into());
        }
        for (i, (m, v)) in self.mask.iter().zip(&self.values).enumerate() {
            if *m && v.is_none() {
                return Err(format!("slot {} is masked but has no value", ont.slot(i).name));
            }
            if let Some(v) = v {
                if *v >= ont.num_values(i) {
                    return Err(format!("value index {v} out of range for {}", ont.slot(i).name));
                }
            }
        }
        Ok(())
    }

    /// Slot/value pairs selected by the mask.
    pub fn slot_values(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.mask
            .iter()
            .zip(&self.values)
            .enumerate()
            .filter_map(|(i, (m, v))| if *m { v.map(|v| (i, v)) } else { None })
    }

    /// Human-readable rendering, e.g. `api_call(Cuisine=french, Price=cheap)`.
    pub fn render(&self, ont: &Ontology) -> String {
        let pairs: Vec<String> = self
            .slot_values()
            .map(|(s, v)| format!("{}={}", ont.slot(s).name, ont.slot(s).values[v]))
            .collect();
        format!("{}({})", ont.act_types()[self.act_type], pairs.join(", "))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub user: String,
    pub system_prev: String,
    pub act: DialogueAct,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub id: String,
    pub turns: Vec<Turn>,
}

/// Train/dev/test splits.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Corpus {
    pub train: Vec<Session>,
    pub dev: Vec<Session>,
    pub test: Vec<Session>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }
}

impl Corpus {
    pub fn split(&self, s: Split) -> &[Session] {
        match s {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Lowercase whitespace tokenization. Punctuation is stripped from token
/// edges only, so dates like `12.25` survive intact.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}
