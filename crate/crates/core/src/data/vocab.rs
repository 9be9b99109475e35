//! Token vocabulary and plain (off-tape) embedding helpers.

use std::collections::{BTreeSet, HashMap};

use super::ontology::{tokenize, Ontology, Session};
use crate::tensor::{Real, Shape, Tensor};
use crate::Error;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from explicit tokens; PAD and UNK are prepended.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut v = Vocabulary {
            tokens: vec!["<pad>".into(), "<unk>".into()],
            index: HashMap::new(),
        };
        for t in tokens {
            if !v.index.contains_key(&t) && t != "<pad>" && t != "<unk>" {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    /// Every token of the training utterances, slot names and slot values,
    /// in sorted order.
    pub fn build(train: &[Session], ont: &Ontology) -> Self {
        let mut set = BTreeSet::new();
        for s in train {
            for t in &s.turns {
                set.extend(tokenize(&t.user));
                set.extend(tokenize(&t.system_prev));
            }
        }
        for i in 0..ont.num_slots() {
            set.extend(ont.slot_name_tokens(i));
            for v in &ont.slot(i).values {
                set.extend(tokenize(v));
            }
        }
        Vocabulary::from_tokens(set)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Mean of the embedding rows of `ids`; the zero vector for no tokens.
pub fn embed_utterance<F: Real>(ids: &[usize], table: &Tensor<F>) -> Vec<F> {
    let m = table.shape().cols();
    let mut out = vec![F::zero(); m];
    if ids.is_empty() {
        return out;
    }
    for &i in ids {
        for (o, v) in out.iter_mut().zip(table.row(i)) {
            *o = *o + *v;
        }
    }
    let inv = F::one() / F::from_usize(ids.len()).unwrap();
    out.iter_mut().for_each(|v| *v = *v * inv);
    out
}

/// Slot keys: the mean embedding of each slot's name tokens.
pub fn init_slot_keys<F: Real>(ont: &Ontology, vocab: &Vocabulary, table: &Tensor<F>) -> Result<Tensor<F>, Error> {
    let m = table.shape().cols();
    let mut data = Vec::with_capacity(ont.num_slots() * m);
    for i in 0..ont.num_slots() {
        let ids: Vec<usize> = ont
            .slot_name_tokens(i)
            .iter()
            .filter_map(|t| vocab.get(t))
            .collect();
        if ids.is_empty() {
            return Err(Error::Config(format!(
                "slot name {} has no in-vocabulary token",
                ont.slot(i).name
            )));
        }
        data.extend(embed_utterance(&ids, table));
    }
    Ok(Tensor::new(Shape::matrix(ont.num_slots(), m), data)?)
}

/// Overwrites rows of `table` from a text embedding file: a header line
/// `m |V|`, then `token v1 .. vm` per line. Returns the number of rows set;
/// tokens outside the vocabulary are skipped.
pub fn load_embeddings<F: Real>(text: &str, vocab: &Vocabulary, table: &mut Tensor<F>) -> Result<usize, Error> {
    let bad = |line: usize, msg: String| Error::Corpus {
        line,
        field: "embedding".into(),
        message: msg,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(1, format!("bad header field {t:?}"))))
        .collect::<Result<_, _>>()?;
    let [m, count] = dims[..] else {
        return Err(bad(1, "header must be `m |V|`".into()));
    };
    let cols = table.shape().cols();
    if m != cols {
        return Err(bad(1, format!("dimension {m} differs from model dimension {cols}")));
    }
    let mut set = 0;
    for (k, line) in lines.enumerate().take(count) {
        let mut parts = line.split_whitespace();
        let Some(tok) = parts.next() else { continue };
        let vals: Vec<F> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map(F::from_f64c)
                    .map_err(|_| bad(k + 2, format!("bad number {p:?}")))
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != m {
            return Err(bad(k + 2, format!("expected {m} values, found {}", vals.len())));
        }
        if let Some(id) = vocab.get(tok) {
            if id != PAD {
                table.data_mut()[id * m..(id + 1) * m].copy_from_slice(&vals);
                set += 1;
            }
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ontology::{DialogueAct, Slot, Turn};

    fn ont() -> Ontology {
        Ontology::new(
            vec![
                Slot {
                    name: "Cuisine".into(),
                    values: vec!["thai".into()],
                },
                Slot {
                    name: "Dep_city".into(),
                    values: vec!["rome".into()],
                },
            ],
            vec!["end".into()],
            None,
        )
        .unwrap()
    }

    fn session(user: &str) -> Session {
        Session {
            id: "s".into(),
            turns: vec![Turn {
                user: user.into(),
                system_prev: String::new(),
                act: DialogueAct::bare(0, 2),
            }],
        }
    }

    #[test]
    fn build_includes_slot_tokens_and_maps_unknowns() {
        let v = Vocabulary::build(&[session("hi")], &ont());
        let want = ["<pad>", "<unk>", "city", "cuisine", "dep", "hi", "rome", "thai"];
        assert_eq!(v.tokens(), want);
        assert_eq!(v.id("zebra"), UNK);
        assert_eq!(v.id("hi"), 5);
    }

    #[test]
    fn embedding_means() {
        let t = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(embed_utterance::<f64>(&[], &t), vec![0.0, 0.0]);
        assert_eq!(embed_utterance(&[1], &t), vec![1.0, 3.0]);
        assert_eq!(embed_utterance(&[1, 2], &t), vec![2.0, 4.0]);
        assert_eq!(embed_utterance(&[2, 1], &t), embed_utterance(&[1, 2], &t));
    }

    #[test]
    fn slot_keys_average_name_tokens() {
        let o = ont();
        let v = Vocabulary::build(&[session("hi")], &o);
        let rows: Vec<Vec<f64>> = (0..v.len()).map(|i| vec![i as f64, 1.0]).collect();
        let t = Tensor::from_rows(&rows).unwrap();
        let keys = init_slot_keys(&o, &v, &t).unwrap();
        assert_eq!(keys.row(0), &[3.0, 1.0]);
        // "dep" (4) and "city" (2).
        assert_eq!(keys.row(1), &[3.0, 1.0]);
        let bare = Vocabulary::from_tokens(["hi".to_string()]);
        assert!(init_slot_keys(&o, &bare, &t).is_err());
    }

    #[test]
    fn embedding_file_sets_known_rows() {
        let v = Vocabulary::from_tokens(["a".to_string(), "b".to_string()]);
        let mut t = Tensor::<f32>::zeros(Shape::matrix(v.len(), 2));
        let n = load_embeddings("2 3\na 1 2\nzz 5 5\nb 3 4\n", &v, &mut t).unwrap();
        assert_eq!(n, 2);
        assert_eq!(t.row(2), &[1.0, 2.0]);
        assert_eq!(t.row(3), &[3.0, 4.0]);
        assert!(load_embeddings("3 1\na 1 2 3\n", &v, &mut t).is_err());
        assert!(load_embeddings("2 1\na 1\n", &v, &mut t).is_err());
    }
}
