use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticTaskConfig;
use crate::decoding::DecodeConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::textproc::CbowConfig;
use crate::training::TrainConfig;

/// Metrics the sweep may select on.
pub const SELECTION_METRICS: [&str; 4] = ["bleu4", "meteor", "rouge_l", "cider_d"];

/// `0, 0.05, …, 1`.
pub fn default_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub bleu_smoothing: bool,
    /// Synonym groups for the METEOR synonym stage.
    pub synonyms: Option<PathBuf>,
    /// Per-clip SPICE values for the evaluation split.
    pub spice: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Synthetic task written by `gen-data`.
    pub data: SyntheticTaskConfig,
    pub manifest: PathBuf,
    /// Root for `seed_<s>/` run directories and aggregated outputs.
    pub out_dir: PathBuf,
    /// `vocab_size`, `d_audio_in` and `d_secondary_in` are replaced by the
    /// values the training data implies.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    /// Embedding pretraining on the training captions; `null` skips it.
    pub cbow: Option<CbowConfig>,
    pub vocab_min_count: usize,
    pub grid: Vec<f64>,
    pub selection_metric: String,
    pub n_seeds: usize,
    /// First seed; runs use `seed..seed + n_seeds`.
    pub seed: u64,
    pub metrics: MetricSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: SyntheticTaskConfig::default(),
            manifest: PathBuf::from("data/manifest.jsonl"),
            out_dir: PathBuf::from("runs"),
            model: ModelConfig {
                // synthetic captions list events in temporal order
                encoder_positions: true,
                ..ModelConfig::default()
            },
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            cbow: Some(CbowConfig::default()),
            vocab_min_count: 1,
            grid: default_grid(),
            selection_metric: "meteor".into(),
            n_seeds: 5,
            seed: 0,
            metrics: MetricSettings::default(),
        }
    }
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("mixing-weight grid is empty".into()));
    }
    if let Some(v) = grid.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Config(format!("grid value {v} outside [0, 1]")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("grid must be strictly increasing".into()));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.grid)?;
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        if self.vocab_min_count == 0 {
            return Err(Error::Config("vocab_min_count must be at least 1".into()));
        }
        if !SELECTION_METRICS.contains(&self.selection_metric.as_str()) {
            return Err(Error::Config(format!(
                "selection metric {:?} is not one of {SELECTION_METRICS:?}",
                self.selection_metric
            )));
        }
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.decode.validate()?;
        if self.decode.max_depth > self.model.max_caption_len {
            return Err(Error::Config(format!(
                "decode max_depth {} exceeds max_caption_len {}",
                self.decode.max_depth, self.model.max_caption_len
            )));
        }
        if let Some(c) = &self.cbow {
            c.validate(self.model.d_model)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|i| self.seed + i).collect()
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("seed_{seed}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.grid.len(), 21);
        assert_eq!(c.grid[3], 0.15);
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        let partial = ExperimentConfig::from_json(r#"{"n_seeds": 2, "cbow": null}"#).unwrap();
        assert_eq!(partial.seeds(), vec![0, 1]);
        assert!(partial.cbow.is_none());
        assert_eq!(partial.run_dir(1), PathBuf::from("runs/seed_1"));
    }

    #[test]
    fn rejects_bad_settings() {
        for text in [
            r#"{"grid": []}"#,
            r#"{"grid": [0.5, 0.5]}"#,
            r#"{"grid": [0.8, 0.2]}"#,
            r#"{"grid": [1.5]}"#,
            r#"{"n_seeds": 0}"#,
            r#"{"selection_metric": "spice"}"#,
            r#"{"decode": {"max_depth": 40}}"#,
            r#"{"cbow": {"embedding_dim": 64}}"#,
            r#"{"unknown": 1}"#,
        ] {
            assert!(ExperimentConfig::from_json(text).is_err(), "{text}");
        }
        assert!(matches!(ExperimentConfig::from_json("{"), Err(Error::Parse { .. })));
    }
}
