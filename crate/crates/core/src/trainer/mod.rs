//! Bi-level first-order search with the layer-alignment regularizer.
//!
//! Each step takes one `ω` update on a train batch,
//!
//! ```text
//! ω ← SGD-Nesterov(ω, ∇_ω𝓛 − λ_t · ∇_ωΛ)
//! ```
//!
//! followed by one `α` update on a validation batch with Adam. `∇_ωΛ` comes
//! from a central difference in the probability matrix along `Δ`
//! ([`reg_grad_fd`]), costing two extra forward-backward passes.

mod estimator;
mod optim;
mod search;

pub use estimator::{reg_grad_fd, RegGrad, RegGradEstimate, DELTA_FLOOR};
pub use optim::{Adam, NesterovSgd, OptimizerState};
pub use search::{initial_alpha, search, EpochRecord, OpGradSample, SearchResult, Searcher};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::AlignmentKind;
use crate::supernet::SupernetError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Supernet(#[from] SupernetError),
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("non-finite value at step {step}; diagnostic checkpoint attached")]
    Diverged { step: u64, checkpoint: Vec<u8> },
    #[error("cannot read config {path}: {message}")]
    ConfigFile { path: String, message: String },
}

/// Which regularizer the inner step applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Cosine,
    Sign,
    None,
}

impl Variant {
    pub fn alignment_kind(self) -> Option<AlignmentKind> {
        match self {
            Variant::Cosine => Some(AlignmentKind::Cosine),
            Variant::Sign => Some(AlignmentKind::Sign),
            Variant::None => None,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cosine" => Ok(Variant::Cosine),
            "sign" => Ok(Variant::Sign),
            "none" => Ok(Variant::None),
            other => Err(format!("unknown variant {other:?}; expected cosine, sign or none")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Cosine => "cosine",
            Variant::Sign => "sign",
            Variant::None => "none",
        })
    }
}

/// Search hyperparameters. Missing keys take their defaults; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_max: f64,
    pub epsilon0: f64,
    pub epochs: usize,
    pub variant: Variant,
    pub omega_lr: f64,
    pub omega_lr_min: f64,
    pub omega_momentum: f64,
    pub omega_weight_decay: f64,
    pub alpha_lr: f64,
    pub alpha_beta1: f64,
    pub alpha_beta2: f64,
    pub alpha_weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_max: 0.125,
            epsilon0: 1e-4,
            epochs: 100,
            variant: Variant::Cosine,
            omega_lr: 0.025,
            omega_lr_min: 0.001,
            omega_momentum: 0.9,
            omega_weight_decay: 5e-4,
            alpha_lr: 1e-4,
            alpha_beta1: 0.5,
            alpha_beta2: 0.999,
            alpha_weight_decay: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        let reals = [
            self.lambda_max,
            self.epsilon0,
            self.omega_lr,
            self.omega_lr_min,
            self.omega_momentum,
            self.omega_weight_decay,
            self.alpha_lr,
            self.alpha_beta1,
            self.alpha_beta2,
            self.alpha_weight_decay,
        ];
        if reals.iter().any(|v| !v.is_finite()) {
            return bad("all real-valued fields must be finite");
        }
        if self.lambda_max < 0.0 {
            return bad("lambda_max must be ≥ 0");
        }
        if self.epsilon0 <= 0.0 {
            return bad("epsilon0 must be > 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1");
        }
        if self.omega_lr < 0.0 || self.omega_lr_min < 0.0 || self.alpha_lr < 0.0 {
            return bad("learning rates must be ≥ 0");
        }
        if !(0.0..1.0).contains(&self.omega_momentum) {
            return bad("omega_momentum must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.alpha_beta1) || !(0.0..1.0).contains(&self.alpha_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.omega_weight_decay < 0.0 || self.alpha_weight_decay < 0.0 {
            return bad("weight decay must be ≥ 0");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let config: Self = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::ConfigFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| TrainError::ConfigFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// `λ_t = λ · t / T`.
pub fn lambda_schedule(t: usize, total: usize, lambda_max: f64) -> f64 {
    lambda_max * t as f64 / total as f64
}

/// `lr_min + (lr_max − lr_min)(1 + cos(πt/T))/2`.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    lr_min + (lr_max - lr_min) * (1.0 + phase.cos()) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Inner,
    Outer,
}

/// One line of `trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub step: u64,
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    pub lambda_t: f64,
    #[serde(rename = "Lambda")]
    pub lambda: Option<f64>,
    #[serde(rename = "Lambda_sign")]
    pub lambda_sign: Option<f64>,
    pub grad_norm_alpha: f64,
    pub min_layer_grad_norm: f64,
    pub skipped_reg: bool,
}

impl TraceRecord {
    pub const FIELDS: [&'static str; 10] = [
        "step",
        "epoch",
        "phase",
        "loss",
        "lambda_t",
        "Lambda",
        "Lambda_sign",
        "grad_norm_alpha",
        "min_layer_grad_norm",
        "skipped_reg",
    ];
}
