//! Adam, teacher pretraining, single training runs and the experiment sweep.

mod adam;
mod data;
mod sweep;
mod teacher;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::GeneratorConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::models::{ModalityMask, ModelConfig};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use data::Prepared;
pub use sweep::{
    ablation_cells, aggregate_rows, grid_cells, grid_search, read_results_csv, results_csv, standard_cells, sweep,
    Cell, GridPoint, ResultRow, SweepOutput, GRID_ALPHAS, GRID_BETAS, RESULTS_HEADER,
};
pub use teacher::{
    bce_with_logits_mean, cache_teacher_outputs, event_accuracy, pretrain_teacher, teacher_outputs, TeacherConfig,
    TeacherReport,
};
pub use train::{check_run, evaluate, event_embeddings, predict, train, EpochLog, Predictions, RunResult, RunSpec};

/// Samples per forward pass when no gradient is needed.
pub const EVAL_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Audio encoder and event heads start from the teacher.
    #[default]
    PretrainedTeacher,
    Random,
}

impl Init {
    pub fn as_str(self) -> &'static str {
        match self {
            Init::PretrainedTeacher => "pretrained_teacher",
            Init::Random => "random",
        }
    }
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained_teacher" => Ok(Init::PretrainedTeacher),
            "random" => Ok(Init::Random),
            _ => Err(Error::Config(format!("unknown init {s:?}"))),
        }
    }
}

/// Every hyperparameter of an experiment. Serialized as the JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: GeneratorConfig,
    /// Apply offset balancing after generation.
    pub balance: bool,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: AdamConfig,
    pub teacher: TeacherConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub modality_mask: ModalityMask,
    pub init: Init,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: GeneratorConfig::default(),
            balance: true,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: AdamConfig::default(),
            teacher: TeacherConfig::default(),
            epochs: 30,
            batch_size: 32,
            seeds: vec![1, 2, 3, 4, 5],
            modality_mask: ModalityMask::None,
            init: Init::PretrainedTeacher,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        for (what, o) in [("optimizer", &self.optimizer), ("teacher optimizer", &self.teacher.optimizer)] {
            if !(o.lr > 0.0) || !(o.weight_decay > 0.0) {
                return Err(Error::Config(format!(
                    "{what}: lr {} and weight_decay {} must be positive",
                    o.lr, o.weight_decay
                )));
            }
        }
        if self.batch_size == 0 || self.teacher.batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.model.scenes != self.dataset.scenes || self.model.events != self.dataset.events {
            return Err(Error::Config(format!(
                "model is sized for {} scenes and {} events, the dataset has {} and {}",
                self.model.scenes, self.model.events, self.dataset.scenes, self.dataset.events
            )));
        }
        Ok(())
    }

    /// The run described by the top-level fields for one seed.
    pub fn run_spec(&self, seed: u64) -> RunSpec {
        RunSpec {
            loss: self.loss.clone(),
            mask: self.modality_mask,
            init: self.init,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
        assert_eq!(c.optimizer.lr, 1e-4);
        assert_eq!(c.optimizer.weight_decay, 1e-4);
        assert_eq!((c.loss.alpha, c.loss.beta), (0.1, 0.001));
        assert_eq!((c.epochs, c.batch_size, c.seeds.len()), (30, 32, 5));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ExperimentConfig::default();
        c.seeds.clear();
        assert_eq!(c.validate().unwrap_err().class(), "CONFIG");
        let mut c = ExperimentConfig::default();
        c.optimizer.lr = 0.0;
        assert_eq!(c.validate().unwrap_err().class(), "CONFIG");
        let mut c = ExperimentConfig::default();
        c.model.scenes = 5;
        assert_eq!(c.validate().unwrap_err().class(), "CONFIG");
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"epochz": 3}"#).is_err());
        let partial: ExperimentConfig = serde_json::from_str(r#"{"epochs": 3, "loss": {"approach": "le"}}"#).unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.loss.alpha, 0.1);
    }
}
