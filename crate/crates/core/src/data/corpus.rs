//! Line-delimited corpus files.
//!
//! The first line is a header carrying the ontology hash; every following
//! line is one session. A corpus directory holds `ontology.json` next to
//! `train.jsonl`, `dev.jsonl` and `test.jsonl`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ontology::{Corpus, DialogueAct, Ontology, Session, Split, Turn};
use crate::Error;

const FORMAT: &str = "mad-corpus";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    ontology_hash: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionRecord {
    session_id: String,
    turns: Vec<TurnRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnRecord {
    user: String,
    system_prev: String,
    da: ActRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActRecord {
    #[serde(rename = "type")]
    act_type: String,
    mask: BTreeMap<String, u8>,
    values: BTreeMap<String, String>,
}

fn act_record(ont: &Ontology, act: &DialogueAct) -> ActRecord {
    let mask = ont
        .slots()
        .iter()
        .zip(&act.mask)
        .map(|(s, m)| (s.name.clone(), u8::from(*m)))
        .collect();
    let values = ont
        .slots()
        .iter()
        .zip(&act.values)
        .filter_map(|(s, v)| v.map(|v| (s.name.clone(), s.values[v].clone())))
        .collect();
    ActRecord {
        act_type: ont.act_types()[act.act_type].clone(),
        mask,
        values,
    }
}

/// Renders sessions as a header line plus one JSON object per line.
pub fn serialize_corpus(ont: &Ontology, sessions: &[Session]) -> String {
    let header = Header {
        format: FORMAT.into(),
        ontology_hash: ont.hash(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for s in sessions {
        let rec = SessionRecord {
            session_id: s.id.clone(),
            turns: s
                .turns
                .iter()
                .map(|t| TurnRecord {
                    user: t.user.clone(),
                    system_prev: t.system_prev.clone(),
                    da: act_record(ont, &t.act),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("session serializes"));
        out.push('\n');
    }
    out
}

fn corpus_err(line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Corpus {
        line,
        field: field.into(),
        message: message.into(),
    }
}

fn parse_act(ont: &Ontology, rec: ActRecord, line: usize, at: &str) -> Result<DialogueAct, Error> {
    let act_type = ont
        .act_index(&rec.act_type)
        .ok_or_else(|| corpus_err(line, format!("{at}.da.type"), format!("unknown act type {:?}", rec.act_type)))?;
    let mut act = DialogueAct::bare(act_type, ont.num_slots());
    for (name, bit) in rec.mask {
        let slot = ont
            .slot_index(&name)
            .ok_or_else(|| corpus_err(line, format!("{at}.da.mask"), format!("unknown slot {name:?}")))?;
        act.mask[slot] = match bit {
            0 => false,
            1 => true,
            b => return Err(corpus_err(line, format!("{at}.da.mask.{name}"), format!("mask bit {b} is not 0 or 1"))),
        };
    }
    for (name, value) in rec.values {
        let field = format!("{at}.da.values.{name}");
        let slot = ont
            .slot_index(&name)
            .ok_or_else(|| corpus_err(line, &field, format!("unknown slot {name:?}")))?;
        let v = ont
            .value_index(slot, &value)
            .ok_or_else(|| corpus_err(line, &field, format!("unknown value {value:?}")))?;
        act.values[slot] = Some(v);
    }
    act.validate(ont)
        .map_err(|m| corpus_err(line, format!("{at}.da"), m))?;
    Ok(act)
}

/// Parses a corpus file, validating the header hash and every act.
pub fn parse_corpus(ont: &Ontology, text: &str) -> Result<Vec<Session>, Error> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| corpus_err(1, "header", "missing header line"))?;
    let header: Header =
        serde_json::from_str(first).map_err(|e| corpus_err(1, "header", e.to_string()))?;
    if header.format != FORMAT {
        return Err(corpus_err(1, "header.format", format!("expected {FORMAT}")));
    }
    let actual = ont.hash();
    if header.ontology_hash != actual {
        return Err(Error::HashMismatch {
            expected: header.ontology_hash,
            actual,
        });
    }
    let mut sessions = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: SessionRecord =
            serde_json::from_str(raw).map_err(|e| corpus_err(line, "session", e.to_string()))?;
        if rec.turns.is_empty() {
            return Err(corpus_err(line, "turns", "session has no turns"));
        }
        let turns = rec
            .turns
            .into_iter()
            .enumerate()
            .map(|(k, t)| {
                Ok(Turn {
                    user: t.user,
                    system_prev: t.system_prev,
                    act: parse_act(ont, t.da, line, &format!("turns[{k}]"))?,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        sessions.push(Session {
            id: rec.session_id,
            turns,
        });
    }
    Ok(sessions)
}

fn split_path(dir: &Path, split: Split) -> std::path::PathBuf {
    dir.join(format!("{}.jsonl", split.name()))
}

/// Writes `ontology.json` and the three split files.
pub fn write_corpus_dir(dir: &Path, ont: &Ontology, corpus: &Corpus) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let op = dir.join("ontology.json");
    fs::write(&op, ont.to_json()).map_err(|e| Error::io(&op, e))?;
    for split in Split::ALL {
        let p = split_path(dir, split);
        fs::write(&p, serialize_corpus(ont, corpus.split(split))).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

pub fn read_ontology(dir: &Path) -> Result<Ontology, Error> {
    let op = dir.join("ontology.json");
    let text = fs::read_to_string(&op).map_err(|e| Error::io(&op, e))?;
    Ontology::from_json(&text)
}

pub fn read_split(dir: &Path, ont: &Ontology, split: Split) -> Result<Vec<Session>, Error> {
    let p = split_path(dir, split);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    parse_corpus(ont, &text)
}

/// Reads a directory written by [`write_corpus_dir`].
pub fn read_corpus_dir(dir: &Path) -> Result<(Ontology, Corpus), Error> {
    let ont = read_ontology(dir)?;
    let corpus = Corpus {
        train: read_split(dir, &ont, Split::Train)?,
        dev: read_split(dir, &ont, Split::Dev)?,
        test: read_split(dir, &ont, Split::Test)?,
    };
    Ok((ont, corpus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::datagen::*;

    fn restaurant() -> Ontology {
        build_restaurant_ontology(&RestaurantConfig::default()).unwrap()
    }

    #[test]
    fn empty_corpus_is_a_header_line() {
        let o = restaurant();
        let text = serialize_corpus(&o, &[]);
        assert_eq!(text.lines().count(), 1);
        assert!(parse_corpus(&o, &text).unwrap().is_empty());
    }

    #[test]
    fn generated_corpus_round_trips() {
        let o = restaurant();
        let sizes = SplitSizes {
            train: 30,
            dev: 5,
            test: 5,
        };
        let c = generate_corpus(&o, Grammar::Restaurant(Task::Full), sizes, 11).unwrap();
        let text = serialize_corpus(&o, &c.train);
        assert_eq!(parse_corpus(&o, &text).unwrap(), c.train);
        // Byte-identical regeneration.
        let again = generate_corpus(&o, Grammar::Restaurant(Task::Full), sizes, 11).unwrap();
        assert_eq!(serialize_corpus(&o, &again.train), text);
    }

    #[test]
    fn unknown_value_names_the_line() {
        let o = restaurant();
        let sizes = SplitSizes {
            train: 3,
            dev: 1,
            test: 1,
        };
        let c = generate_corpus(&o, Grammar::Restaurant(Task::Issue), sizes, 2).unwrap();
        let text = serialize_corpus(&o, &c.train);
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let bad = lines[2].replacen("\"Cuisine\":\"", "\"Cuisine\":\"zz", 1);
        assert_ne!(bad, lines[2]);
        lines[2] = bad;
        match parse_corpus(&o, &lines.join("\n")) {
            Err(Error::Corpus { line, field, .. }) => {
                assert_eq!(line, 3);
                assert!(field.ends_with("values.Cuisine"), "{field}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn foreign_ontology_is_refused() {
        let o = restaurant();
        let f = build_flight_ontology(&FlightConfig::default()).unwrap();
        let text = serialize_corpus(&o, &[]);
        assert!(matches!(parse_corpus(&f, &text), Err(Error::HashMismatch { .. })));
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let o = restaurant();
        let sizes = SplitSizes {
            train: 1,
            dev: 1,
            test: 1,
        };
        let c = generate_corpus(&o, Grammar::Restaurant(Task::Issue), sizes, 42).unwrap();
        write_corpus_dir(dir.path(), &o, &c).unwrap();
        let (o2, c2) = read_corpus_dir(dir.path()).unwrap();
        assert_eq!(o2, o);
        assert_eq!(c2, c);
    }
}
