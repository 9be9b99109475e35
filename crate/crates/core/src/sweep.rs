//! External-memory size sweep: one training run per `n_e`, scored on the
//! test split.

use serde::Serialize;

use crate::data::ontology::{Corpus, Ontology};
use crate::eval::{evaluate, MetricsReport};
use crate::train::{init_model, train, TrainConfig};
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub n_e: usize,
    pub best_epoch: Option<usize>,
    pub report: MetricsReport,
}

pub const TSV_HEADER: &str = "n_e\tbest_epoch\tturn_da_type\tturn_slot_value\tturn_mask\tturn_overall\tsession_da_type\tsession_slot_value\tsession_mask\tsession_overall";

impl SweepRow {
    pub fn tsv(&self) -> String {
        let (t, s) = (&self.report.turn, &self.report.session);
        let best = self.best_epoch.map_or("-".to_string(), |e| e.to_string());
        format!(
            "{}\t{best}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}",
            self.n_e, t.da_type, t.slot_value, t.mask, t.overall, s.da_type, s.slot_value, s.mask, s.overall
        )
    }
}

/// Trains and evaluates once per entry of `sizes`, reporting each row as it
/// completes.
pub fn sweep_external_memory(
    ont: &Ontology,
    corpus: &Corpus,
    base: &TrainConfig,
    sizes: &[usize],
    mut on_row: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>, Error> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &n_e in sizes {
        let mut cfg = base.clone();
        cfg.model.n_e = n_e;
        let model = init_model(ont, &corpus.train, &cfg)?;
        let out = train(model, &corpus.train, &corpus.dev, &cfg, |_| {})?;
        let report = evaluate(&out.model, &corpus.test)?
            .with_provenance("n_e", n_e)
            .with_provenance("seed", cfg.seed);
        let row = SweepRow {
            n_e,
            best_epoch: out.best_epoch,
            report,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}
