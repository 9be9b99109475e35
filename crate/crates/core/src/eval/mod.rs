//! Turn- and session-level accuracy of predicted dialogue acts.
//!
//! A turn's act type is correct on exact match and its mask when the whole
//! binary vector matches. Its slot values are correct when the predicted
//! value equals the gold value on every slot the gold act masks, so a turn
//! with an all-zero gold mask is vacuously correct. A turn is correct
//! overall when all three components are, and a session when all its turns
//! are.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::data::ontology::{tokenize, DialogueAct, Ontology, Session};
use crate::model::{Model, Prediction};
use crate::tensor::Real;
use crate::Error;

/// Percentages of correct items per component.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Accuracy {
    pub da_type: f64,
    pub slot_value: f64,
    pub mask: f64,
    pub overall: f64,
}

/// Value accuracy of one slot over the turns whose gold act masks it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlotAccuracy {
    pub slot: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub turn: Accuracy,
    pub session: Accuracy,
    pub turns: usize,
    pub sessions: usize,
    /// Set when the split had no turns; accuracies are then 100.
    pub empty: bool,
    pub per_slot: Vec<SlotAccuracy>,
    pub provenance: BTreeMap<String, String>,
}

fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        100.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

#[derive(Default, Clone, Copy)]
struct Counts {
    da_type: usize,
    slot_value: usize,
    mask: usize,
    overall: usize,
}

impl Counts {
    fn accuracy(self, total: usize) -> Accuracy {
        Accuracy {
            da_type: percent(self.da_type, total),
            slot_value: percent(self.slot_value, total),
            mask: percent(self.mask, total),
            overall: percent(self.overall, total),
        }
    }
}

/// Scores predictions against gold acts, session by session.
pub fn score(ont: &Ontology, gold: &[Vec<DialogueAct>], pred: &[Vec<Prediction>]) -> Result<MetricsReport, Error> {
    if gold.len() != pred.len() {
        return Err(Error::Data(format!("{} gold sessions but {} predicted", gold.len(), pred.len())));
    }
    let n_s = ont.num_slots();
    let (mut turn, mut session) = (Counts::default(), Counts::default());
    let mut slot_hits = vec![(0usize, 0usize); n_s];
    let mut turns = 0;
    for (g_sess, p_sess) in gold.iter().zip(pred) {
        if g_sess.len() != p_sess.len() {
            return Err(Error::Data("predicted session length differs from gold".into()));
        }
        let mut all = [true; 4];
        for (g, p) in g_sess.iter().zip(p_sess) {
            turns += 1;
            let da = g.act_type == p.act_type;
            let mask = g.mask == p.mask;
            let mut sv = true;
            for (i, v) in g.slot_values() {
                let hit = p.values[i] == v;
                slot_hits[i].1 += 1;
                if hit {
                    slot_hits[i].0 += 1;
                }
                sv &= hit;
            }
            let ok = [da, sv, mask, da && sv && mask];
            for (a, o) in all.iter_mut().zip(ok) {
                *a &= o;
            }
            turn.da_type += da as usize;
            turn.slot_value += sv as usize;
            turn.mask += mask as usize;
            turn.overall += ok[3] as usize;
        }
        session.da_type += all[0] as usize;
        session.slot_value += all[1] as usize;
        session.mask += all[2] as usize;
        session.overall += all[3] as usize;
    }
    Ok(MetricsReport {
        turn: turn.accuracy(turns),
        session: session.accuracy(gold.len()),
        turns,
        sessions: gold.len(),
        empty: turns == 0,
        per_slot: slot_hits
            .iter()
            .enumerate()
            .map(|(i, &(c, t))| SlotAccuracy {
                slot: ont.slot(i).name.clone(),
                correct: c,
                total: t,
                accuracy: percent(c, t),
            })
            .collect(),
        provenance: BTreeMap::new(),
    })
}

type Check<'a> = dyn Fn(&DialogueAct, &Prediction) -> bool + 'a;

/// Naive recount of [`score`], one component at a time, for cross-checking.
pub fn metrics_oracle(ont: &Ontology, gold: &[Vec<DialogueAct>], pred: &[Vec<Prediction>]) -> MetricsReport {
    let pairs: Vec<Vec<(&DialogueAct, &Prediction)>> =
        gold.iter().zip(pred).map(|(g, p)| g.iter().zip(p).collect()).collect();
    let type_ok = |g: &DialogueAct, p: &Prediction| g.act_type == p.act_type;
    let mask_ok = |g: &DialogueAct, p: &Prediction| (0..g.mask.len()).all(|i| g.mask[i] == p.mask[i]);
    let value_ok = |g: &DialogueAct, p: &Prediction| (0..g.mask.len()).all(|i| !g.mask[i] || g.values[i] == Some(p.values[i]));
    let all_ok = |g: &DialogueAct, p: &Prediction| type_ok(g, p) && mask_ok(g, p) && value_ok(g, p);
    let checks: [&Check<'_>; 4] = [&type_ok, &value_ok, &mask_ok, &all_ok];

    let mut turn_pct = [0.0; 4];
    let mut sess_pct = [0.0; 4];
    let total_turns: usize = pairs.iter().map(Vec::len).sum();
    for (k, check) in checks.iter().enumerate() {
        let mut t = 0;
        let mut s = 0;
        for sess in &pairs {
            let mut every = true;
            for (g, p) in sess {
                if check(g, p) {
                    t += 1;
                } else {
                    every = false;
                }
            }
            if every {
                s += 1;
            }
        }
        turn_pct[k] = percent(t, total_turns);
        sess_pct[k] = percent(s, pairs.len());
    }
    let acc = |a: [f64; 4]| Accuracy {
        da_type: a[0],
        slot_value: a[1],
        mask: a[2],
        overall: a[3],
    };
    let per_slot = (0..ont.num_slots())
        .map(|i| {
            let mut c = 0;
            let mut t = 0;
            for sess in &pairs {
                for (g, p) in sess {
                    if let (true, Some(v)) = (g.mask[i], g.values[i]) {
                        t += 1;
                        c += (p.values[i] == v) as usize;
                    }
                }
            }
            SlotAccuracy {
                slot: ont.slot(i).name.clone(),
                correct: c,
                total: t,
                accuracy: percent(c, t),
            }
        })
        .collect();
    MetricsReport {
        turn: acc(turn_pct),
        session: acc(sess_pct),
        turns: total_turns,
        sessions: pairs.len(),
        empty: total_turns == 0,
        per_slot,
        provenance: BTreeMap::new(),
    }
}

/// Runs the model over every session of a split.
pub fn predict_split<F: Real>(model: &Model<F>, sessions: &[Session]) -> Result<Vec<Vec<Prediction>>, Error> {
    sessions
        .iter()
        .map(|s| model.predict(&model.encode_session(s)))
        .collect()
}

pub fn gold_acts(sessions: &[Session]) -> Vec<Vec<DialogueAct>> {
    sessions
        .iter()
        .map(|s| s.turns.iter().map(|t| t.act.clone()).collect())
        .collect()
}

pub fn evaluate<F: Real>(model: &Model<F>, sessions: &[Session]) -> Result<MetricsReport, Error> {
    let pred = predict_split(model, sessions)?;
    score(&model.ontology, &gold_acts(sessions), &pred)
}

/// Value accuracy on the departure and arrival city slots.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CityProbe {
    pub dep_city: SlotAccuracy,
    pub arr_city: SlotAccuracy,
}

fn city_slots(ont: &Ontology) -> Result<(usize, usize), Error> {
    match (ont.slot_index("Dep_city"), ont.slot_index("Arr_city")) {
        (Some(d), Some(a)) => Ok((d, a)),
        _ => Err(Error::Config("the city probe needs a flight ontology".into())),
    }
}

/// Extracts the city rows of a report computed on a flight split.
pub fn city_probe_from(ont: &Ontology, report: &MetricsReport) -> Result<CityProbe, Error> {
    let (d, a) = city_slots(ont)?;
    Ok(CityProbe {
        dep_city: report.per_slot[d].clone(),
        arr_city: report.per_slot[a].clone(),
    })
}

pub fn city_disambiguation_probe<F: Real>(model: &Model<F>, sessions: &[Session]) -> Result<CityProbe, Error> {
    city_slots(&model.ontology)?;
    city_probe_from(&model.ontology, &evaluate(model, sessions)?)
}

/// A context-blind policy: every slot takes the last of its values the
/// user mentioned so far, so both city slots get the same city.
pub fn last_mention_baseline(ont: &Ontology, sessions: &[Session]) -> Vec<Vec<Prediction>> {
    sessions
        .iter()
        .map(|s| {
            let mut last = vec![0; ont.num_slots()];
            s.turns
                .iter()
                .map(|t| {
                    for tok in tokenize(&t.user) {
                        for (i, v) in last.iter_mut().enumerate() {
                            if let Some(k) = ont.value_index(i, &tok) {
                                *v = k;
                            }
                        }
                    }
                    Prediction {
                        act_type: t.act.act_type,
                        mask: t.act.mask.clone(),
                        values: last.clone(),
                    }
                })
                .collect()
        })
        .collect()
}

impl MetricsReport {
    pub fn with_provenance(mut self, key: &str, value: impl ToString) -> Self {
        self.provenance.insert(key.into(), value.to_string());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One `name=value` line per metric.
    pub fn to_flat(&self) -> String {
        let mut out = String::new();
        for (level, a) in [("turn", &self.turn), ("session", &self.session)] {
            for (k, v) in [
                ("da_type", a.da_type),
                ("slot_value", a.slot_value),
                ("mask", a.mask),
                ("overall", a.overall),
            ] {
                let _ = writeln!(out, "{level}.{k}={v:.4}");
            }
        }
        let _ = writeln!(out, "turns={}", self.turns);
        let _ = writeln!(out, "sessions={}", self.sessions);
        let _ = writeln!(out, "empty={}", self.empty);
        for s in &self.per_slot {
            let _ = writeln!(out, "slot.{}.value={:.4}", s.slot, s.accuracy);
            let _ = writeln!(out, "slot.{}.total={}", s.slot, s.total);
        }
        for (k, v) in &self.provenance {
            let _ = writeln!(out, "provenance.{k}={v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::datagen::{build_restaurant_ontology, RestaurantConfig};

    fn ont() -> Ontology {
        build_restaurant_ontology(&RestaurantConfig::default()).unwrap()
    }

    fn exact(a: &DialogueAct) -> Prediction {
        Prediction {
            act_type: a.act_type,
            mask: a.mask.clone(),
            values: a.values.iter().map(|v| v.unwrap_or(0)).collect(),
        }
    }

    fn sample() -> Vec<Vec<DialogueAct>> {
        let a = DialogueAct::bare(4, 5).with_value(0, 3).with_value(1, 2);
        let b = DialogueAct::bare(0, 5);
        vec![vec![a.clone(), b.clone()], vec![b, a]]
    }

    #[test]
    fn gold_predictions_score_100() {
        let g = sample();
        let p: Vec<Vec<Prediction>> = g.iter().map(|s| s.iter().map(exact).collect()).collect();
        let r = score(&ont(), &g, &p).unwrap();
        assert_eq!(r.turn.overall, 100.0);
        assert_eq!(r.session.overall, 100.0);
        assert!(!r.empty);
    }

    #[test]
    fn one_wrong_mask_bit() {
        let g = sample();
        let mut p: Vec<Vec<Prediction>> = g.iter().map(|s| s.iter().map(exact).collect()).collect();
        p[0][1].mask[2] = true;
        let r = score(&ont(), &g, &p).unwrap();
        assert_eq!(r.turn.overall, 75.0);
        assert_eq!(r.session.overall, 50.0);
        assert_eq!(r.turn.slot_value, 100.0);
        assert_eq!(r, metrics_oracle(&ont(), &g, &p));
    }

    #[test]
    fn unmasked_slots_are_vacuous() {
        let g = vec![vec![DialogueAct::bare(1, 5)]];
        let p = vec![vec![Prediction {
            act_type: 1,
            mask: vec![false; 5],
            values: vec![9, 9, 2, 3, 1],
        }]];
        assert_eq!(score(&ont(), &g, &p).unwrap().turn.slot_value, 100.0);
    }

    #[test]
    fn empty_split_is_flagged() {
        let r = score(&ont(), &[], &[]).unwrap();
        assert!(r.empty);
        assert_eq!(r.turn.overall, 100.0);
        assert_eq!(r, metrics_oracle(&ont(), &[], &[]));
    }

    #[test]
    fn flat_output_lists_metrics() {
        let g = sample();
        let p: Vec<Vec<Prediction>> = g.iter().map(|s| s.iter().map(exact).collect()).collect();
        let flat = score(&ont(), &g, &p).unwrap().with_provenance("seed", 42).to_flat();
        assert!(flat.contains("turn.overall=100.0000\n"));
        assert!(flat.contains("slot.Cuisine.total=2\n"));
        assert!(flat.contains("provenance.seed=42\n"));
    }
}
