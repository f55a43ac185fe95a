use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::estimator::reg_grad_fd;
use super::optim::{Adam, NesterovSgd, OptimizerState};
use super::{cosine_lr, lambda_schedule, Phase, TraceRecord, TrainConfig, TrainError};
use crate::alignment::{alignment_report, lambda_alignment, lambda_sign, min_row_norm, AlignmentReport};
use crate::autodiff::AdError;
use crate::data::{Dataset, Split};
use crate::diagnostics::l1_change;
use crate::search_space::{discretize, ArchParams, Genotype, SpaceError};
use crate::supernet::{
    alpha_grad, save_checkpoint, Batch, LayerGradMatrix, ProbMatrix, SupernetConfig, SupernetError, SupernetState,
};

const ALPHA_SEED_TAG: u64 = 0xa1fa;
/// Scale of the initial architecture logits.
pub(crate) const ALPHA_INIT_SCALE: f64 = 1e-3;

/// Per-op sums of one inner step's layer gradients, over the first and the
/// second half of the layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpGradSample {
    pub step: u64,
    pub shallow: Vec<f64>,
    pub deep: Vec<f64>,
}

impl OpGradSample {
    pub fn from_grads(step: u64, grads: &LayerGradMatrix, num_ops: usize) -> Self {
        let half = grads.layers() / 2;
        let mut shallow = vec![0.0; num_ops];
        let mut deep = vec![0.0; num_ops];
        for (l, row) in grads.iter_rows().enumerate() {
            let target = if l < half { &mut shallow } else { &mut deep };
            for (i, v) in row.iter().enumerate() {
                target[i % num_ops] += v;
            }
        }
        Self { step, shallow, deep }
    }
}

/// End-of-epoch summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda_t: f64,
    pub omega_lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Alignment of the layer gradients on the whole train split.
    pub alignment: Option<AlignmentReport>,
    /// Sum over this epoch's `α` steps of `‖p_after − p_before‖₁`.
    pub l1_change: f64,
    pub cumulative_l1: f64,
    pub genotype: Genotype,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub config: TrainConfig,
    pub net: SupernetConfig,
    pub genotype: Genotype,
    pub alpha: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    pub epochs: Vec<EpochRecord>,
    pub op_grads: Vec<OpGradSample>,
    #[serde(skip)]
    pub checkpoint: Vec<u8>,
}

impl SearchResult {
    /// `Λ` of the last epoch's whole-train-split evaluation.
    pub fn final_lambda(&self) -> Option<f64> {
        self.epochs.last()?.alignment.as_ref().map(|a| a.lambda)
    }
}

/// Mutable search state: weights, architecture, optimizer buffers and the
/// global step counter.
#[derive(Debug, Clone)]
pub struct Searcher {
    config: TrainConfig,
    state: SupernetState,
    alpha: ArchParams,
    optim: OptimizerState,
    step: u64,
}

pub fn initial_alpha(net: &SupernetConfig, seed: u64) -> ArchParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ALPHA_SEED_TAG);
    let values = (0..net.cell.alpha_len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            ALPHA_INIT_SCALE * z
        })
        .collect();
    ArchParams::new(&net.cell, values).expect("finite")
}

fn is_non_finite(e: &SupernetError) -> bool {
    matches!(
        e,
        SupernetError::Tensor(AdError::NonFinite { .. }) | SupernetError::Space(SpaceError::Tensor(AdError::NonFinite { .. }))
    )
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Searcher {
    pub fn new(config: TrainConfig, net: SupernetConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let state = SupernetState::init(net.clone(), config.seed)?;
        let alpha = initial_alpha(&net, config.seed);
        Ok(Self::from_parts(config, state, alpha))
    }

    pub fn from_parts(config: TrainConfig, state: SupernetState, alpha: ArchParams) -> Self {
        let optim = OptimizerState {
            omega: NesterovSgd::new(state.omega().len(), config.omega_momentum, config.omega_weight_decay),
            alpha: Adam::new(
                alpha.len(),
                config.alpha_lr,
                config.alpha_beta1,
                config.alpha_beta2,
                config.alpha_weight_decay,
            ),
        };
        Self {
            config,
            state,
            alpha,
            optim,
            step: 0,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &SupernetState {
        &self.state
    }

    pub fn alpha(&self) -> &ArchParams {
        &self.alpha
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optim
    }

    /// Number of trace records emitted so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> Vec<u8> {
        save_checkpoint(&self.state, &self.alpha)
    }

    fn diverged(&self, step: u64) -> TrainError {
        TrainError::Diverged {
            step,
            checkpoint: self.checkpoint(),
        }
    }

    fn guard<T>(&self, r: Result<T, SupernetError>) -> Result<T, TrainError> {
        r.map_err(|e| if is_non_finite(&e) { self.diverged(self.step) } else { e.into() })
    }

    /// One regularized `ω` step on `batch` during epoch `epoch`.
    pub fn inner_step(&mut self, batch: &Batch, epoch: usize) -> Result<(TraceRecord, OpGradSample), TrainError> {
        let lambda_t = lambda_schedule(epoch, self.config.epochs, self.config.lambda_max);
        let lr = cosine_lr(epoch, self.config.epochs, self.config.omega_lr, self.config.omega_lr_min);
        let probs = ProbMatrix::broadcast(&self.alpha, self.state.layers());

        let kind = self.config.variant.alignment_kind().filter(|_| lambda_t > 0.0);
        let (base, reg, skipped) = match kind {
            Some(kind) => {
                let est = self.guard(reg_grad_fd(&self.state, &probs, batch, kind, self.config.epsilon0))?;
                match est.reg {
                    Ok(r) => (est.base, Some(r.grad), false),
                    Err(_) => (est.base, None, true),
                }
            }
            None => (self.guard(self.state.layer_grads(&probs, batch))?, None, false),
        };
        if !base.loss.is_finite() {
            return Err(self.diverged(self.step));
        }

        let mut direction = base.omega_grad;
        if let Some(reg) = &reg {
            for (d, r) in direction.iter_mut().zip(reg) {
                *d -= lambda_t * r;
            }
        }
        if direction.iter().any(|v| !v.is_finite()) {
            return Err(self.diverged(self.step));
        }
        self.optim.omega.step(self.state.omega_mut(), &direction, lr);

        let record = TraceRecord {
            step: self.step,
            epoch,
            phase: Phase::Inner,
            loss: base.loss,
            lambda_t,
            lambda: lambda_alignment(&base.grads).ok(),
            lambda_sign: lambda_sign(&base.grads).ok(),
            grad_norm_alpha: norm(&alpha_grad(&self.alpha, &base.grads)),
            min_layer_grad_norm: min_row_norm(&base.grads),
            skipped_reg: skipped,
        };
        let sample = OpGradSample::from_grads(self.step, &base.grads, self.alpha.num_ops());
        self.step += 1;
        Ok((record, sample))
    }

    /// One `α` step on the validation `batch`. Also returns the `ℓ1` change
    /// of the softmax weights.
    pub fn outer_step(&mut self, batch: &Batch, epoch: usize) -> Result<(TraceRecord, f64), TrainError> {
        let lambda_t = lambda_schedule(epoch, self.config.epochs, self.config.lambda_max);
        let probs = ProbMatrix::broadcast(&self.alpha, self.state.layers());
        let lg = self.guard(self.state.layer_grads(&probs, batch))?;
        if !lg.loss.is_finite() {
            return Err(self.diverged(self.step));
        }
        let grad = alpha_grad(&self.alpha, &lg.grads);
        let before = self.alpha.probabilities();
        self.optim.alpha.step(self.alpha.as_mut_slice(), &grad);
        if !self.alpha.is_finite() {
            return Err(self.diverged(self.step));
        }
        let change = l1_change(&before, &self.alpha.probabilities()).expect("same architecture");
        let record = TraceRecord {
            step: self.step,
            epoch,
            phase: Phase::Outer,
            loss: lg.loss,
            lambda_t,
            lambda: lambda_alignment(&lg.grads).ok(),
            lambda_sign: lambda_sign(&lg.grads).ok(),
            grad_norm_alpha: norm(&grad),
            min_layer_grad_norm: min_row_norm(&lg.grads),
            skipped_reg: false,
        };
        self.step += 1;
        Ok((record, change))
    }

    /// Alignment of the layer gradients over a whole split.
    pub fn evaluate_alignment(&self, batch: &Batch) -> Result<Option<AlignmentReport>, TrainError> {
        let probs = ProbMatrix::broadcast(&self.alpha, self.state.layers());
        let lg = self.guard(self.state.layer_grads(&probs, batch))?;
        Ok(alignment_report(&lg.grads).ok())
    }
}

/// Full search: for each epoch, paired inner/outer steps over reshuffled
/// train and validation batches, then an epoch summary.
pub fn search(config: &TrainConfig, net: &SupernetConfig, dataset: &Dataset) -> Result<SearchResult, TrainError> {
    let mut searcher = Searcher::new(config.clone(), net.clone())?;
    let mut trace = Vec::new();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut op_grads = Vec::new();
    let mut cumulative_l1 = 0.0;
    for epoch in 0..config.epochs {
        let trains = dataset.epoch_batches(Split::Train, config.batch_size, config.seed, epoch);
        let vals = dataset.epoch_batches(Split::Val, config.batch_size, config.seed, epoch);
        let (mut train_loss, mut val_loss, mut l1_change) = (0.0, 0.0, 0.0);
        for (tb, vb) in trains.iter().zip(&vals) {
            let (inner, sample) = searcher.inner_step(tb, epoch)?;
            train_loss += inner.loss;
            trace.push(inner);
            op_grads.push(sample);
            let (outer, change) = searcher.outer_step(vb, epoch)?;
            val_loss += outer.loss;
            l1_change += change;
            trace.push(outer);
        }
        cumulative_l1 += l1_change;
        let n = trains.len() as f64;
        epochs.push(EpochRecord {
            epoch,
            lambda_t: lambda_schedule(epoch, config.epochs, config.lambda_max),
            omega_lr: cosine_lr(epoch, config.epochs, config.omega_lr, config.omega_lr_min),
            train_loss: train_loss / n,
            val_loss: val_loss / n,
            alignment: searcher.evaluate_alignment(&dataset.train)?,
            l1_change,
            cumulative_l1,
            genotype: discretize(searcher.alpha()),
            probabilities: searcher.alpha().probabilities(),
        });
    }
    Ok(SearchResult {
        config: config.clone(),
        net: net.clone(),
        genotype: discretize(searcher.alpha()),
        alpha: searcher.alpha().as_slice().to_vec(),
        trace,
        epochs,
        op_grads,
        checkpoint: searcher.checkpoint(),
    })
}
