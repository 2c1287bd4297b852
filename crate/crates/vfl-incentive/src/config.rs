//! Experiment configuration documents.
//!
//! ```json
//! {
//!   "description": "Heart",
//!   "dataset": { "csv": { "path": "../data/heart.csv" } },
//!   "partition": { "label": "target", "active": "P_a", "parties": [ ... ] },
//!   "training": { "learning_rate": 0.1, "rounds": 200, "batch_size": 64 },
//!   "rule": "talmud",
//!   "variant": { "kind": "dummy", "party": "P_h1" },
//!   "shapley": true,
//!   "budget": 10000,
//!   "seed": 7
//! }
//! ```
//!
//! Relative dataset paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vfl_incentive_core::{Rule, TrainingConfig};

use crate::data::{PartitionSpec, SyntheticParams};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv { path: PathBuf },
    Synthetic(SyntheticParams),
}

/// Structural change applied to the federation before training.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Variant {
    #[default]
    Plain,
    /// Replace this passive party's features with random noise.
    Dummy { party: String },
    /// Give `target` an exact copy of `source`'s features.
    Symmetry { source: String, target: String },
}

impl Variant {
    pub fn describe(&self) -> String {
        match self {
            Variant::Plain => "plain".into(),
            Variant::Dummy { party } => format!("dummy({party})"),
            Variant::Symmetry { source, target } => format!("symmetry({source}->{target})"),
        }
    }
}

fn default_split_ratio() -> f64 {
    0.7
}

fn default_rule() -> Rule {
    Rule::Talmud
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub description: String,
    pub dataset: DatasetSource,
    pub partition: PartitionSpec,
    /// `training.seed` is ignored; the experiment seed drives everything.
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    #[serde(default = "default_rule")]
    pub rule: Rule,
    #[serde(default)]
    pub variant: Variant,
    /// Train every coalition and report exact Shapley values.
    #[serde(default)]
    pub shapley: bool,
    pub budget: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file and resolves a relative CSV path against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        if let DatasetSource::Csv { path: csv } = &mut config.dataset {
            if csv.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new(""));
                *csv = base.join(&*csv);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Format(format!(
                "split_ratio {} outside (0, 1)",
                self.split_ratio
            )));
        }
        if let Some(b) = self.budget {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::Format(format!("budget {b} must be non-negative")));
            }
        }
        let passives = self.partition.passive_ids();
        let known = |id: &String| passives.contains(id);
        match &self.variant {
            Variant::Plain => {}
            Variant::Dummy { party } if !known(party) => {
                return Err(Error::Format(format!(
                    "dummy party `{party}` is not a passive party"
                )))
            }
            Variant::Symmetry { source, target } if !known(source) || !known(target) => {
                return Err(Error::Format(format!(
                    "symmetry parties `{source}`/`{target}` must both be passive"
                )))
            }
            Variant::Symmetry { source, target } if source == target => {
                return Err(Error::Format(
                    "symmetry source and target must differ".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn dataset_name(&self) -> String {
        match &self.dataset {
            DatasetSource::Csv { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            DatasetSource::Synthetic(_) => "synthetic".into(),
        }
    }
}
