use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetKind, SyntheticDataset};
use super::OracleError;
use crate::data::Split;
use crate::search_space::{enumerate_genotypes, CellSpec, Genotype, DEFAULT_GENOTYPE_CAP};
use crate::supernet::{ProbMatrix, SupernetConfig, SupernetState};
use crate::trainer::{cosine_lr, NesterovSgd};

/// Standalone training schedule for every genotype.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchBudget {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables it.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for BenchBudget {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            grad_clip: Some(5.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub val_accuracy: f64,
    pub train_loss: f64,
    pub param_count: usize,
}

/// Ground-truth accuracy of every genotype in a cell space.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularBench {
    pub net: SupernetConfig,
    pub dataset_kind: DatasetKind,
    pub dataset_seed: u64,
    pub budget: BenchBudget,
    pub entries: BTreeMap<Genotype, BenchEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchFile {
    spec_hash: String,
    net: SupernetConfig,
    dataset_kind: DatasetKind,
    dataset_seed: u64,
    budget: BenchBudget,
    entries: BTreeMap<String, BenchEntry>,
}

/// Dense rank (1 = best) and `1 − (rank − 1)/total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rank {
    pub rank: usize,
    pub percentile: f64,
}

impl TabularBench {
    pub fn spec(&self) -> &CellSpec {
        &self.net.cell
    }

    pub fn get(&self, genotype: &Genotype) -> Option<&BenchEntry> {
        self.entries.get(genotype)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Genotypes from best to worst (ties by genotype order).
    pub fn ranked(&self) -> Vec<(&Genotype, &BenchEntry)> {
        let mut all: Vec<_> = self.entries.iter().collect();
        all.sort_by(|a, b| b.1.val_accuracy.total_cmp(&a.1.val_accuracy).then(a.0.cmp(b.0)));
        all
    }

    pub fn to_json(&self) -> String {
        let file = BenchFile {
            spec_hash: self.spec().hash(),
            net: self.net.clone(),
            dataset_kind: self.dataset_kind,
            dataset_seed: self.dataset_seed,
            budget: self.budget,
            entries: self.entries.iter().map(|(g, e)| (g.to_string(), *e)).collect(),
        };
        serde_json::to_string_pretty(&file).expect("bench serializes")
    }

    /// Parses a bench file, checking its spec hash and that it covers every
    /// genotype exactly once.
    pub fn from_json(text: &str) -> Result<Self, OracleError> {
        let file: BenchFile = serde_json::from_str(text).map_err(|e| OracleError::BenchFormat(e.to_string()))?;
        if file.net.cell.hash() != file.spec_hash {
            return Err(OracleError::BenchFormat(format!(
                "spec hash {} does not match the embedded cell ({})",
                file.spec_hash,
                file.net.cell.hash()
            )));
        }
        let mut entries = BTreeMap::new();
        for (text, entry) in file.entries {
            let g: Genotype = text
                .parse()
                .map_err(|e| OracleError::BenchFormat(format!("genotype {text:?}: {e}")))?;
            g.validate(&file.net.cell)?;
            if !(0.0..=1.0).contains(&entry.val_accuracy) {
                return Err(OracleError::BenchFormat(format!("accuracy of {text} outside [0, 1]")));
            }
            entries.insert(g, entry);
        }
        let expected = enumerate_genotypes(&file.net.cell, DEFAULT_GENOTYPE_CAP)?;
        if entries.len() != expected.len() || expected.iter().any(|g| !entries.contains_key(g)) {
            return Err(OracleError::BenchFormat(format!(
                "covers {} of {} genotypes",
                entries.len(),
                expected.len()
            )));
        }
        Ok(Self {
            net: file.net,
            dataset_kind: file.dataset_kind,
            dataset_seed: file.dataset_seed,
            budget: file.budget,
            entries,
        })
    }
}

/// Trains `genotype` alone (one-hot mixture in every layer) and scores it.
pub fn train_genotype(
    net: &SupernetConfig,
    genotype: &Genotype,
    dataset: &SyntheticDataset,
    budget: &BenchBudget,
) -> Result<BenchEntry, OracleError> {
    genotype.validate(&net.cell)?;
    let mut state = SupernetState::init(net.clone(), budget.seed)?;
    let probs = ProbMatrix::repeat(&genotype.one_hot(&net.cell), net.layers);
    let mut sgd = NesterovSgd::new(state.omega().len(), budget.momentum, budget.weight_decay);
    for epoch in 0..budget.epochs {
        let lr = cosine_lr(epoch, budget.epochs, budget.lr, 0.0);
        for batch in dataset.epoch_batches(Split::Train, budget.batch_size, budget.seed, epoch) {
            let mut g = state.layer_grads(&probs, &batch)?.omega_grad;
            if let Some(clip) = budget.grad_clip {
                clip_norm(&mut g, clip);
            }
            sgd.step(state.omega_mut(), &g, lr);
        }
    }
    Ok(BenchEntry {
        val_accuracy: state.accuracy(&probs, &dataset.val)?,
        train_loss: state.loss(&probs, &dataset.train)?,
        param_count: state.genotype_param_count(genotype),
    })
}

/// Rescales `g` in place so its Euclidean norm is at most `max`.
pub fn clip_norm(g: &mut [f64], max: f64) {
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > max {
        let s = max / n;
        g.iter_mut().for_each(|v| *v *= s);
    }
}

/// Exhaustively trains every genotype of `net.cell`, in parallel.
pub fn build_tabular(
    net: &SupernetConfig,
    dataset: &SyntheticDataset,
    budget: &BenchBudget,
) -> Result<TabularBench, OracleError> {
    let genotypes = enumerate_genotypes(&net.cell, DEFAULT_GENOTYPE_CAP)?;
    let scored: Vec<(Genotype, BenchEntry)> = genotypes
        .into_par_iter()
        .map(|g| train_genotype(net, &g, dataset, budget).map(|e| (g, e)))
        .collect::<Result<_, _>>()?;
    Ok(TabularBench {
        net: net.clone(),
        dataset_kind: dataset.kind,
        dataset_seed: dataset.seed,
        budget: *budget,
        entries: scored.into_iter().collect(),
    })
}

pub fn rank_of(genotype: &Genotype, bench: &TabularBench) -> Result<Rank, OracleError> {
    let entry = bench
        .get(genotype)
        .ok_or_else(|| OracleError::UnknownGenotype(genotype.to_string()))?;
    let mut better: Vec<f64> = bench
        .entries
        .values()
        .map(|e| e.val_accuracy)
        .filter(|&a| a > entry.val_accuracy)
        .collect();
    better.sort_by(f64::total_cmp);
    better.dedup();
    let rank = better.len() + 1;
    Ok(Rank {
        rank,
        percentile: 1.0 - (rank - 1) as f64 / bench.len() as f64,
    })
}
