//! Weight-sharing supernet: `L` stacked copies of one cell, each with its own
//! operation weights and its own row of mixture probabilities.
//!
//! Macro-architecture:
//!
//! ```text
//! h₀ = x·W_stem + b_stem
//! layer ℓ:  node₀ = h_ℓ
//!           node_j = Σ_{(i,j)∈E} Σ_o P[ℓ, (i,j), o] · o(node_i)
//!           h_{ℓ+1} = mean(node₁ … node_N) · W_proj,ℓ
//! logits = h_L·W_head + b_head
//! ```

mod checkpoint;
mod layout;

use std::ops::Deref;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use layout::{LayerSlots, ParamLayout, Slot};

use crate::alignment::jacobian_vector_product;
use crate::autodiff::{AdError, Tape, Tensor, Var};
use crate::matrix::RowMatrix;
use crate::search_space::{apply_op, softmax_per_edge, ArchParams, CellSpec, Genotype, OpParams, SpaceError};

#[derive(Debug, Error)]
pub enum SupernetError {
    #[error(transparent)]
    Tensor(#[from] AdError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("invalid supernet config: {0}")]
    Config(String),
    #[error("probability matrix is {got_rows}×{got_cols}, expected {rows}×{cols}")]
    ProbShape {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("batch has {features} features and {labels} labels for {rows} rows; expected {expected} features")]
    Batch {
        rows: usize,
        features: usize,
        labels: usize,
        expected: usize,
    },
    #[error("parameter vector has length {got}, expected {expected}")]
    OmegaLength { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Shape of the stacked network around the searched cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupernetConfig {
    pub cell: CellSpec,
    pub layers: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Multiplier on the `1/√fan_in` standard deviation of candidate-op weights.
    #[serde(default = "default_gain")]
    pub op_init_gain: f64,
}

fn default_gain() -> f64 {
    1.0
}

impl SupernetConfig {
    pub fn new(cell: CellSpec, layers: usize, input_dim: usize, num_classes: usize) -> Self {
        Self {
            cell,
            layers,
            input_dim,
            num_classes,
            op_init_gain: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), SupernetError> {
        if self.layers < 2 {
            return Err(SupernetError::Config(format!("need at least 2 layers, got {}", self.layers)));
        }
        if self.input_dim == 0 || self.num_classes < 2 {
            return Err(SupernetError::Config("input_dim must be positive and num_classes ≥ 2".into()));
        }
        if !(self.op_init_gain.is_finite() && self.op_init_gain > 0.0) {
            return Err(SupernetError::Config("op_init_gain must be positive".into()));
        }
        Ok(())
    }
}

/// A labelled mini-batch: `x` is `[rows × input_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(x: Tensor, labels: Vec<usize>) -> Self {
        Self { x, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `L × |α|` matrix of per-layer mixture probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix(pub RowMatrix);

impl Deref for ProbMatrix {
    type Target = RowMatrix;
    fn deref(&self) -> &RowMatrix {
        &self.0
    }
}

impl ProbMatrix {
    /// Every row equals `σ(α)`.
    pub fn broadcast(alpha: &ArchParams, layers: usize) -> Self {
        let p = softmax_per_edge(alpha);
        Self::repeat(&p, layers)
    }

    pub fn repeat(row: &[f64], layers: usize) -> Self {
        let rows = vec![row.to_vec(); layers];
        Self(RowMatrix::from_rows(&rows).expect("equal rows"))
    }
}

/// `L × |α|` matrix whose row `ℓ` is the gradient of the loss with respect to
/// layer `ℓ`'s probability row.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradMatrix(pub RowMatrix);

impl Deref for LayerGradMatrix {
    type Target = RowMatrix;
    fn deref(&self) -> &RowMatrix {
        &self.0
    }
}

impl LayerGradMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        RowMatrix::from_rows(rows).map(Self)
    }

    pub fn layers(&self) -> usize {
        self.0.rows()
    }
}

/// Output of one forward+backward pass.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub loss: f64,
    pub grads: LayerGradMatrix,
    pub omega_grad: Vec<f64>,
}

/// Operation weights `ω` of a supernet, stored flat according to its layout.
#[derive(Debug, Clone)]
pub struct SupernetState {
    config: SupernetConfig,
    layout: Arc<ParamLayout>,
    omega: Vec<f64>,
    passes: Arc<AtomicU64>,
}

impl SupernetState {
    /// Fresh weights: normal with std `gain/√fan_in` for matrices, zero biases.
    pub fn init(config: SupernetConfig, seed: u64) -> Result<Self, SupernetError> {
        config.validate()?;
        let layout = Arc::new(ParamLayout::new(&config));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut omega = vec![0.0; layout.total()];
        let mut fill = |slot: &Slot, gain: f64, omega: &mut [f64]| {
            let fan_in = slot.shape[0] as f64;
            let normal = Normal::new(0.0, gain / fan_in.sqrt()).expect("positive std");
            for v in &mut omega[slot.range()] {
                *v = normal.sample(&mut rng);
            }
        };
        fill(&layout.stem_w, 1.0, &mut omega);
        for layer in &layout.layers {
            for slots in layer.ops.iter().flatten().flatten() {
                fill(&slots.0, config.op_init_gain, &mut omega);
            }
            fill(&layer.proj, 1.0, &mut omega);
        }
        fill(&layout.head_w, 1.0, &mut omega);
        Ok(Self {
            config,
            layout,
            omega,
            passes: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn from_omega(config: SupernetConfig, omega: Vec<f64>) -> Result<Self, SupernetError> {
        config.validate()?;
        let layout = Arc::new(ParamLayout::new(&config));
        if omega.len() != layout.total() {
            return Err(SupernetError::OmegaLength {
                expected: layout.total(),
                got: omega.len(),
            });
        }
        Ok(Self {
            config,
            layout,
            omega,
            passes: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn config(&self) -> &SupernetConfig {
        &self.config
    }

    pub fn cell(&self) -> &CellSpec {
        &self.config.cell
    }

    pub fn layers(&self) -> usize {
        self.config.layers
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn omega_mut(&mut self) -> &mut [f64] {
        &mut self.omega
    }

    /// Copy of this state with different weights (same counter).
    pub fn with_omega(&self, omega: Vec<f64>) -> Self {
        assert_eq!(omega.len(), self.omega.len());
        Self {
            config: self.config.clone(),
            layout: self.layout.clone(),
            omega,
            passes: self.passes.clone(),
        }
    }

    /// Number of forward+backward passes run through [`layer_grads`] on this
    /// state or any copy sharing its counter.
    pub fn pass_count(&self) -> u64 {
        self.passes.load(Ordering::SeqCst)
    }

    /// Detaches this state from its pass counter.
    pub fn with_fresh_counter(mut self) -> Self {
        self.passes = Arc::new(AtomicU64::new(0));
        self
    }

    /// Number of trainable weights a discretized network actually uses.
    pub fn genotype_param_count(&self, genotype: &Genotype) -> usize {
        let l = &self.layout;
        let mut count = l.stem_w.len() + l.stem_b.len() + l.head_w.len() + l.head_b.len();
        for layer in &l.layers {
            count += layer.proj.len();
            for (edge, &op) in genotype.choice.iter().enumerate() {
                if let Some((w, b)) = &layer.ops[edge][op] {
                    count += w.len() + b.len();
                }
            }
        }
        count
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), SupernetError> {
        let (rows, features) = batch.x.dims2().unwrap_or((0, 0));
        if features != self.config.input_dim || rows != batch.labels.len() || rows == 0 {
            return Err(SupernetError::Batch {
                rows,
                features,
                labels: batch.labels.len(),
                expected: self.config.input_dim,
            });
        }
        Ok(())
    }

    fn check_probs(&self, probs: &ProbMatrix) -> Result<(), SupernetError> {
        let (rows, cols) = (self.config.layers, self.config.cell.alpha_len());
        if probs.rows() != rows || probs.cols() != cols {
            return Err(SupernetError::ProbShape {
                rows,
                cols,
                got_rows: probs.rows(),
                got_cols: probs.cols(),
            });
        }
        Ok(())
    }

    fn leaf(&self, tape: &mut Tape, slot: &Slot) -> Var {
        let t = Tensor::new(slot.shape.clone(), self.omega[slot.range()].to_vec())
            .expect("weights are finite and match their slot");
        tape.leaf(t)
    }

    /// Records the network on `tape`. `rows[ℓ]` supplies layer `ℓ`'s mixture
    /// weights; passing the same handle for every layer shares them.
    fn build(&self, tape: &mut Tape, rows: &[Var], batch: &Batch) -> Result<Built, SupernetError> {
        self.check_batch(batch)?;
        let cell = &self.config.cell;
        let layout = &self.layout;
        let mut omega_vars = Vec::with_capacity(layout.slots().len());
        let mut leaf = |tape: &mut Tape, slot: &Slot| {
            let v = self.leaf(tape, slot);
            omega_vars.push((slot.clone(), v));
            v
        };

        let x = tape.leaf(batch.x.clone());
        let stem_w = leaf(tape, &layout.stem_w);
        let stem_b = leaf(tape, &layout.stem_b);
        let xs = tape.matmul(x, stem_w)?;
        let mut h = tape.add_row_bias(xs, stem_b)?;

        let intermediate = cell.node_count() - 1;
        for (layer, &row) in layout.layers.iter().zip(rows) {
            let mut nodes = vec![h];
            for j in 1..cell.node_count() {
                let mut terms = Vec::new();
                for (edge, &(i, _)) in cell.edges().iter().enumerate().filter(|(_, &(_, t))| t == j) {
                    for (o, &kind) in cell.ops().iter().enumerate() {
                        let params = layer.ops[edge][o].as_ref().map(|(w, b)| OpParams {
                                weight: leaf(tape, w),
                                bias: leaf(tape, b),
                            });
                        let out = apply_op(tape, kind, params, nodes[i])?;
                        terms.push((cell.alpha_index(edge, o), out));
                    }
                }
                nodes.push(tape.scalar_combine(row, &terms)?);
            }
            let inv = 1.0 / intermediate as f64;
            let mean_terms: Vec<(f64, Var)> = nodes[1..].iter().map(|&n| (inv, n)).collect();
            let pooled = tape.weighted_sum(&mean_terms)?;
            let proj = leaf(tape, &layer.proj);
            h = tape.matmul(pooled, proj)?;
        }

        let head_w = leaf(tape, &layout.head_w);
        let head_b = leaf(tape, &layout.head_b);
        let z = tape.matmul(h, head_w)?;
        let logits = tape.add_row_bias(z, head_b)?;
        let loss = tape.softmax_cross_entropy(logits, &batch.labels)?;
        Ok(Built {
            loss,
            logits,
            omega_vars,
        })
    }

    fn prob_leaves(&self, tape: &mut Tape, probs: &ProbMatrix) -> Result<Vec<Var>, SupernetError> {
        self.check_probs(probs)?;
        probs
            .iter_rows()
            .map(|r| Ok(tape.leaf(Tensor::vector(r.to_vec())?)))
            .collect()
    }

    fn collect_omega_grad(&self, grads: &crate::autodiff::Gradients, built: &Built) -> Vec<f64> {
        let mut out = vec![0.0; self.omega.len()];
        for (slot, var) in &built.omega_vars {
            grads.copy_into(*var, &mut out[slot.range()]);
        }
        out
    }

    /// Scalar loss at `(ω, P)` and the tape that produced it.
    pub fn forward(&self, probs: &ProbMatrix, batch: &Batch) -> Result<(f64, Tape), SupernetError> {
        let mut tape = Tape::new();
        let rows = self.prob_leaves(&mut tape, probs)?;
        let built = self.build(&mut tape, &rows, batch)?;
        let loss = tape.value(built.loss).data()[0];
        Ok((loss, tape))
    }

    pub fn loss(&self, probs: &ProbMatrix, batch: &Batch) -> Result<f64, SupernetError> {
        self.forward(probs, batch).map(|(l, _)| l)
    }

    /// Class logits `[rows × classes]`.
    pub fn logits(&self, probs: &ProbMatrix, batch: &Batch) -> Result<Tensor, SupernetError> {
        let mut tape = Tape::new();
        let rows = self.prob_leaves(&mut tape, probs)?;
        let built = self.build(&mut tape, &rows, batch)?;
        Ok(tape.value(built.logits).clone())
    }

    /// Fraction of rows whose argmax logit (lowest index on ties) is the label.
    pub fn accuracy(&self, probs: &ProbMatrix, batch: &Batch) -> Result<f64, SupernetError> {
        let logits = self.logits(probs, batch)?;
        Ok(accuracy_of(&logits, &batch.labels))
    }

    /// One forward+backward pass: loss, every layer's probability gradient and
    /// `∇_ω` of the loss together.
    pub fn layer_grads(&self, probs: &ProbMatrix, batch: &Batch) -> Result<LayerGrads, SupernetError> {
        self.passes.fetch_add(1, Ordering::SeqCst);
        let mut tape = Tape::new();
        let rows = self.prob_leaves(&mut tape, probs)?;
        let built = self.build(&mut tape, &rows, batch)?;
        let grads = tape.backward(built.loss)?;
        let g_rows: Vec<Vec<f64>> = rows.iter().map(|&r| grads.get(r).into_data()).collect();
        Ok(LayerGrads {
            loss: tape.value(built.loss).data()[0],
            grads: LayerGradMatrix::from_rows(&g_rows).expect("rows share |α|"),
            omega_grad: self.collect_omega_grad(&grads, &built),
        })
    }

    /// Loss and `∇_p` when a single probability vector is shared by every layer.
    pub fn shared_prob_grad(&self, p: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>), SupernetError> {
        let cols = self.config.cell.alpha_len();
        if p.len() != cols {
            return Err(SupernetError::ProbShape {
                rows: 1,
                cols,
                got_rows: 1,
                got_cols: p.len(),
            });
        }
        let mut tape = Tape::new();
        let shared = tape.leaf(Tensor::vector(p.to_vec())?);
        let rows = vec![shared; self.config.layers];
        let built = self.build(&mut tape, &rows, batch)?;
        let grads = tape.backward(built.loss)?;
        Ok((tape.value(built.loss).data()[0], grads.get(shared).into_data()))
    }

    /// Loss and `∇_α` with the per-edge softmax recorded on the tape.
    pub fn alpha_grad_on_tape(&self, alpha: &ArchParams, batch: &Batch) -> Result<(f64, Vec<f64>), SupernetError> {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(alpha.as_slice().to_vec())?);
        let p = tape.softmax_blocks(a, alpha.num_ops())?;
        let rows = vec![p; self.config.layers];
        let built = self.build(&mut tape, &rows, batch)?;
        let grads = tape.backward(built.loss)?;
        Ok((tape.value(built.loss).data()[0], grads.get(a).into_data()))
    }

    /// Loss of the discretized network that evaluates only the chosen op on
    /// each edge, without any mixture.
    pub fn genotype_loss(&self, genotype: &Genotype, batch: &Batch) -> Result<f64, SupernetError> {
        genotype.validate(&self.config.cell)?;
        self.check_batch(batch)?;
        let cell = &self.config.cell;
        let layout = &self.layout;
        let mut tape = Tape::new();
        let x = tape.leaf(batch.x.clone());
        let (sw, sb) = (self.leaf(&mut tape, &layout.stem_w), self.leaf(&mut tape, &layout.stem_b));
        let xs = tape.matmul(x, sw)?;
        let mut h = tape.add_row_bias(xs, sb)?;
        for layer in &layout.layers {
            let mut nodes = vec![h];
            for j in 1..cell.node_count() {
                let mut acc: Option<Var> = None;
                for (edge, &(i, _)) in cell.edges().iter().enumerate().filter(|(_, &(_, t))| t == j) {
                    let o = genotype.choice[edge];
                    let params = layer.ops[edge][o].as_ref().map(|(w, b)| OpParams {
                        weight: self.leaf(&mut tape, w),
                        bias: self.leaf(&mut tape, b),
                    });
                    let out = apply_op(&mut tape, cell.ops()[o], params, nodes[i])?;
                    acc = Some(match acc {
                        Some(a) => tape.add(a, out)?,
                        None => out,
                    });
                }
                nodes.push(acc.expect("every node has an input edge"));
            }
            let mut sum = nodes[1];
            for &n in &nodes[2..] {
                sum = tape.add(sum, n)?;
            }
            let pooled = tape.scale(sum, 1.0 / (nodes.len() - 1) as f64)?;
            let proj = self.leaf(&mut tape, &layer.proj);
            h = tape.matmul(pooled, proj)?;
        }
        let (hw, hb) = (self.leaf(&mut tape, &layout.head_w), self.leaf(&mut tape, &layout.head_b));
        let z = tape.matmul(h, hw)?;
        let logits = tape.add_row_bias(z, hb)?;
        let loss = tape.softmax_cross_entropy(logits, &batch.labels)?;
        Ok(tape.value(loss).data()[0])
    }
}

struct Built {
    loss: Var,
    logits: Var,
    omega_vars: Vec<(Slot, Var)>,
}

pub(crate) fn accuracy_of(logits: &Tensor, labels: &[usize]) -> f64 {
    let (rows, cols) = logits.dims2().expect("logits are a matrix");
    let correct = logits
        .data()
        .chunks(cols)
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best == y
        })
        .count();
    correct as f64 / rows as f64
}

/// `∇_α = J_σ(α) · Σ_ℓ G[ℓ]`, computed block by block without forming `J_σ`.
pub fn alpha_grad(alpha: &ArchParams, grads: &LayerGradMatrix) -> Vec<f64> {
    jacobian_vector_product(alpha, &grads.column_sums())
}
