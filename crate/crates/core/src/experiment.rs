//! A complete run description: trainer settings, supernet shape, dataset and
//! tabular-bench budget. The default is the collapse rig.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::oracle::{build_tabular, make_dataset, BenchBudget, DatasetKind, DatasetSizes, OracleError, SyntheticDataset, TabularBench};
use crate::search_space::{CellSpec, OpKind};
use crate::supernet::SupernetConfig;
use crate::trainer::{TrainConfig, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub seed: u64,
    pub sizes: DatasetSizes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiment {
    pub train: TrainConfig,
    pub net: SupernetConfig,
    pub dataset: DatasetSpec,
    pub bench: BenchBudget,
}

impl Default for Experiment {
    fn default() -> Self {
        Self::collapse_rig()
    }
}

impl Experiment {
    /// Three edges over `{skip, affine, nonlinear}` stacked eight deep on a
    /// two-stage tanh composition with four classes.
    pub fn collapse_rig() -> Self {
        let cell = CellSpec::fully_connected(2, vec![OpKind::Skip, OpKind::Affine, OpKind::Nonlinear], 8)
            .expect("valid rig cell");
        Self {
            train: TrainConfig {
                epochs: 50,
                alpha_lr: 1e-3,
                ..TrainConfig::default()
            },
            net: SupernetConfig::new(cell, 8, 4, 4),
            dataset: DatasetSpec {
                kind: DatasetKind::LayeredComposition { depth: 2, gain: 3.0 },
                seed: 7,
                sizes: DatasetSizes {
                    train: 1024,
                    val: 1024,
                    input_dim: 4,
                    classes: 4,
                },
            },
            bench: BenchBudget {
                epochs: 40,
                ..BenchBudget::default()
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let exp: Self = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        exp.validate()?;
        Ok(exp)
    }

    pub fn from_path(path: &Path) -> Result<Self, TrainError> {
        let wrap = |message: String| TrainError::ConfigFile {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| wrap(e.to_string()))?;
        Self::from_json(&text).map_err(|e| wrap(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.train.validate()?;
        self.net.validate()?;
        let s = &self.dataset.sizes;
        if s.input_dim != self.net.input_dim || s.classes != self.net.num_classes {
            return Err(TrainError::Config(format!(
                "dataset is {}-dimensional with {} classes but the net expects {} and {}",
                s.input_dim, s.classes, self.net.input_dim, self.net.num_classes
            )));
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<SyntheticDataset, OracleError> {
        make_dataset(self.dataset.kind, self.dataset.seed, self.dataset.sizes)
    }

    /// Exhaustive tabular bench for this net and dataset.
    pub fn build_bench(&self) -> Result<TabularBench, OracleError> {
        build_tabular(&self.net, &self.dataset()?, &self.bench)
    }

    /// Whether `bench` was built for exactly this net, dataset and budget.
    pub fn matches_bench(&self, bench: &TabularBench) -> bool {
        bench.net == self.net
            && bench.dataset_kind == self.dataset.kind
            && bench.dataset_seed == self.dataset.seed
            && bench.budget == self.bench
    }
}
