//! Run configuration: TOML file first, explicit flags on top.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use reynet::data::TaskKind;
use reynet::model::{ModelKind, Pooling};
use reynet::nn::{AdamConfig, LossKind};
use reynet::train::TrainConfig;
use serde::Deserialize;

use crate::usage;

/// Model names accepted on the command line. `reynet` and `red-reynet` pick
/// the invariant network for invariant tasks.
pub const MODEL_NAMES: [&str; 6] = ["fnn", "maron-skip", "reynet", "red-reynet", "inv-reynet", "inv-red-reynet"];

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: String,
    pub task: String,
    pub n_train: usize,
    /// Sizes to evaluate at; empty means `n_train` only.
    pub n_test: Vec<usize>,
    pub loss: String,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub lr: f64,
    pub wd: f64,
    pub batch: usize,
    pub widths: Vec<usize>,
    pub train_count: usize,
    pub test_count: usize,
    /// Invariant models only: "orbit" or "max"; unset picks the model default.
    pub pooling: Option<String>,
    /// Channels of the equivariant body of invariant models.
    pub body_channels: usize,
    /// Reduced models only: components of depth D read only `[D]^ℓ`.
    pub restrict: bool,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: "red-reynet".into(),
            task: "symmetry".into(),
            n_train: 5,
            n_test: Vec::new(),
            loss: "mse".into(),
            seeds: (0..5).collect(),
            epochs: 100,
            lr: 1e-3,
            wd: 1e-5,
            batch: 100,
            widths: vec![128, 128],
            train_count: 1000,
            test_count: 1000,
            pooling: None,
            body_channels: 8,
            restrict: false,
            train_data: None,
            test_data: None,
            out: PathBuf::from("runs"),
        }
    }
}

/// Training-data seed for a run seed; the test set uses [`test_data_seed`] so
/// the two never share a stream.
pub fn train_data_seed(seed: u64) -> u64 {
    1000 + seed
}

pub fn test_data_seed(seed: u64) -> u64 {
    2000 + seed
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| usage(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn task_kind(&self) -> Result<TaskKind> {
        TaskKind::from_name(&self.task).ok_or_else(|| usage(format!("unknown task '{}'", self.task)))
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        LossKind::from_name(&self.loss).ok_or_else(|| usage(format!("unknown loss '{}'", self.loss)))
    }

    pub fn pooling_kind(&self) -> Result<Option<Pooling>> {
        self.pooling
            .as_deref()
            .map(|p| Pooling::from_name(p).ok_or_else(|| usage(format!("unknown pooling '{p}'"))))
            .transpose()
    }

    /// The architecture this run trains.
    pub fn model_kind(&self) -> Result<ModelKind> {
        let invariant = self.task_kind()?.is_invariant();
        let kind = match self.model.as_str() {
            "fnn" => ModelKind::Fnn,
            "maron-skip" => {
                return Err(usage(
                    "the maron-skip baseline is not implemented; use fnn, reynet or red-reynet",
                ))
            }
            "reynet" | "inv-reynet" if invariant => ModelKind::InvReyNet,
            "reynet" => ModelKind::ReyNet,
            "red-reynet" | "inv-red-reynet" if invariant => ModelKind::InvRedReyNet,
            "red-reynet" => ModelKind::RedReyNet,
            other if MODEL_NAMES.contains(&other) => {
                return Err(usage(format!("{other} needs an invariant task, not {}", self.task)))
            }
            other => return Err(usage(format!("unknown model '{other}'"))),
        };
        Ok(kind)
    }

    pub fn test_sizes(&self) -> Vec<usize> {
        if self.n_test.is_empty() {
            vec![self.n_train]
        } else {
            self.n_test.clone()
        }
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            loss: self.loss_kind()?,
            adam: AdamConfig {
                lr: self.lr,
                weight_decay: self.wd,
                ..AdamConfig::default()
            },
            seed,
        })
    }

    /// Checks that do not need data.
    pub fn validate(&self) -> Result<()> {
        let kind = self.model_kind()?;
        self.pooling_kind()?;
        if self.loss_kind()? == LossKind::CornerMse && !matches!(kind, ModelKind::ReyNet | ModelKind::RedReyNet) {
            return Err(usage("corner loss applies to equivariant ReyNet runs only"));
        }
        if self.n_train < 2 {
            return Err(usage("n_train must be at least 2"));
        }
        if self.batch == 0 || (self.train_data.is_none() && self.batch > self.train_count) {
            return Err(usage(format!(
                "batch {} must be between 1 and the dataset size {}",
                self.batch, self.train_count
            )));
        }
        if self.seeds.is_empty() {
            return Err(usage("no seeds to run"));
        }
        if self.widths.contains(&0) {
            return Err(usage("hidden widths must be positive"));
        }
        if !kind.is_reduced() && self.test_sizes().iter().any(|&n| n != self.n_train) {
            return Err(usage(format!("{} cannot be evaluated at another n", self.model)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_training_setup() {
        let c = RunConfig::default();
        assert_eq!((c.lr, c.wd, c.batch, c.epochs), (1e-3, 1e-5, 100, 100));
        assert_eq!(c.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(c.widths, vec![128, 128]);
        c.validate().unwrap();
    }

    #[test]
    fn toml_overrides_defaults() {
        let c = RunConfig::from_toml("model = \"fnn\"\ntask = \"trace\"\nn_train = 3\nseeds = [7]\n").unwrap();
        assert_eq!((c.model.as_str(), c.n_train, c.seeds.clone(), c.epochs), ("fnn", 3, vec![7], 100));
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn model_names_resolve_by_task() {
        let mut c = RunConfig {
            task: "trace".into(),
            model: "reynet".into(),
            ..RunConfig::default()
        };
        assert_eq!(c.model_kind().unwrap(), ModelKind::InvReyNet);
        c.model = "red-reynet".into();
        assert_eq!(c.model_kind().unwrap(), ModelKind::InvRedReyNet);
        c.task = "power".into();
        assert_eq!(c.model_kind().unwrap(), ModelKind::RedReyNet);
        c.model = "maron-skip".into();
        assert!(c.model_kind().is_err());
        c.model = "inv-reynet".into();
        assert!(c.model_kind().is_err());
    }

    #[test]
    fn invalid_combinations_are_usage_errors() {
        let c = RunConfig {
            loss: "corner".into(),
            model: "fnn".into(),
            ..RunConfig::default()
        };
        let e = c.validate().unwrap_err();
        assert!(e.downcast_ref::<crate::UsageError>().is_some());
        let c = RunConfig {
            batch: 2000,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            model: "reynet".into(),
            n_test: vec![7],
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
