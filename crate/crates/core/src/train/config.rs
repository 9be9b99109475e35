//! Training hyperparameters and the flat `key=value` config format.

use std::path::PathBuf;

use crate::model::ModelConfig;
use crate::Error;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Total epochs, pretraining included.
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub minibatch_size: usize,
    pub seed: u64,
    /// Weight of the heuristic loss during the main stage.
    pub aux_heuristic_weight: f64,
    /// Optional embedding file loaded over the random initialisation.
    pub embeddings: Option<PathBuf>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.002,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 15,
            pretrain_epochs: 2,
            minibatch_size: 16,
            seed: 42,
            aux_heuristic_weight: 0.0,
            embeddings: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Epochs of the pretraining and main stages.
    pub fn stages(&self) -> (usize, usize) {
        let pre = self.pretrain_epochs.min(self.epochs);
        (pre, self.epochs - pre)
    }

    /// Applies one key; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        let bad = || Error::Config(format!("bad value {value:?} for {key}"));
        let float = || value.parse::<f64>().map_err(|_| bad());
        let int = || value.parse::<usize>().map_err(|_| bad());
        match key {
            "learning_rate" => self.learning_rate = float()?,
            "adam_beta1" => self.adam_beta1 = float()?,
            "adam_beta2" => self.adam_beta2 = float()?,
            "adam_eps" => self.adam_eps = float()?,
            "epochs" => self.epochs = int()?,
            "pretrain_epochs" => self.pretrain_epochs = int()?,
            "minibatch_size" => self.minibatch_size = int()?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "aux_heuristic_weight" => self.aux_heuristic_weight = float()?,
            "embeddings" => self.embeddings = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every line of a config file. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn apply_file(&mut self, text: &str) -> Result<(), Error> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("adam_eps", self.adam_eps),
            ("minibatch_size", self.minibatch_size as f64),
        ];
        for (k, v) in positive {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        for (k, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{k} must lie in [0, 1)")));
            }
        }
        if self.aux_heuristic_weight < 0.0 {
            return Err(Error::Config("aux_heuristic_weight must not be negative".into()));
        }
        self.model.validate()
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn resolved(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("learning_rate".into(), self.learning_rate.to_string()),
            ("adam_beta1".into(), self.adam_beta1.to_string()),
            ("adam_beta2".into(), self.adam_beta2.to_string()),
            ("adam_eps".into(), self.adam_eps.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("pretrain_epochs".into(), self.pretrain_epochs.to_string()),
            ("minibatch_size".into(), self.minibatch_size.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("aux_heuristic_weight".into(), self.aux_heuristic_weight.to_string()),
        ];
        if let Some(p) = &self.embeddings {
            out.push(("embeddings".into(), p.display().to_string()));
        }
        out.extend(self.model.to_kv());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_keys() {
        let mut c = TrainConfig::default();
        c.apply_file("# comment\nlearning_rate = 0.01\n\nn_e=4\nrnn_only=true\n").unwrap();
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.model.n_e, 4);
        assert!(c.model.ablation.no_slot_value_memory && c.model.ablation.no_external_memory);
        c.set("learning_rate", "0.5").unwrap();
        assert_eq!(c.learning_rate, 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = TrainConfig::default();
        let err = c.apply_file("epochs=3\nfoo=1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(c.apply_file("epochs").is_err());
    }

    #[test]
    fn stages_split_the_budget() {
        let mut c = TrainConfig::default();
        assert_eq!(c.stages(), (2, 13));
        c.epochs = 1;
        assert_eq!(c.stages(), (1, 0));
    }

    #[test]
    fn resolved_round_trips() {
        let mut c = TrainConfig::default();
        c.set("no_attention", "true").unwrap();
        c.set("seed", "7").unwrap();
        let mut d = TrainConfig::default();
        for (k, v) in c.resolved() {
            d.set(&k, &v).unwrap();
        }
        assert_eq!(c, d);
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }
}
