//! Brute-force oracles, synthetic datasets and the exhaustive tabular
//! benchmark used as ground truth.

mod bench;
mod dataset;
mod reference;

pub use bench::{build_tabular, rank_of, train_genotype, BenchBudget, BenchEntry, Rank, TabularBench};
pub use dataset::{make_dataset, DatasetKind, DatasetSizes, SyntheticDataset};
pub use reference::vanilla_reference;

use rayon::prelude::*;
use thiserror::Error;

use crate::alignment::{lambda_alignment, lambda_sign, AlignmentError, AlignmentKind};
use crate::matrix::RowMatrix;
use crate::search_space::SpaceError;
use crate::supernet::{Batch, LayerGradMatrix, ProbMatrix, SupernetError, SupernetState};

/// Largest `|ω|` the coordinate-wise oracles accept.
pub const ORACLE_MAX_WEIGHTS: usize = 5000;
pub const DEFAULT_ORACLE_STEP: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Supernet(#[from] SupernetError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("degenerate gradients at probe {probe}: {source}")]
    Degenerate { probe: usize, source: AlignmentError },
    #[error("{count} coordinates exceeds the oracle limit of {limit}")]
    TooLarge { count: usize, limit: usize },
    #[error("unknown genotype {0}")]
    UnknownGenotype(String),
    #[error("bench file: {0}")]
    BenchFormat(String),
    #[error("invalid dataset request: {0}")]
    Dataset(String),
}

fn alignment_value(g: &LayerGradMatrix, kind: AlignmentKind) -> Result<f64, AlignmentError> {
    match kind {
        AlignmentKind::Cosine => lambda_alignment(g),
        AlignmentKind::Sign => lambda_sign(g),
    }
}

/// `Λ` (or `Λ±`) at weights `omega`.
pub fn alignment_at(
    state: &SupernetState,
    omega: &[f64],
    probs: &ProbMatrix,
    batch: &Batch,
    kind: AlignmentKind,
) -> Result<Result<f64, AlignmentError>, SupernetError> {
    let probe = state.with_omega(omega.to_vec());
    let g = probe.layer_grads(probs, batch)?;
    Ok(alignment_value(&g.grads, kind))
}

/// `∇_ωΛ` by coordinate central differences of `Λ` itself.
pub fn oracle_reg_grad(
    state: &SupernetState,
    probs: &ProbMatrix,
    batch: &Batch,
    kind: AlignmentKind,
    h: f64,
) -> Result<Vec<f64>, OracleError> {
    let n = state.omega().len();
    if n > ORACLE_MAX_WEIGHTS {
        return Err(OracleError::TooLarge {
            count: n,
            limit: ORACLE_MAX_WEIGHTS,
        });
    }
    let quiet = state.clone().with_fresh_counter();
    (0..n)
        .into_par_iter()
        .map(|k| {
            let mut w = quiet.omega().to_vec();
            let mut eval = |value: f64| -> Result<f64, OracleError> {
                w[k] = value;
                alignment_at(&quiet, &w, probs, batch, kind)?
                    .map_err(|source| OracleError::Degenerate { probe: k, source })
            };
            let centre = quiet.omega()[k];
            let up = eval(centre + h)?;
            let down = eval(centre - h)?;
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// `max_k |a_k − b_k| / max(‖a‖∞, ‖b‖∞)`, with the scale floored at `1e-12`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "compared vectors differ in length");
    let inf = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let scale = inf(a).max(inf(b)).max(1e-12);
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// `∂𝓛/∂P[ℓ, i]` by central differences of the forward loss.
pub fn oracle_layer_grad(
    state: &SupernetState,
    probs: &ProbMatrix,
    batch: &Batch,
    h: f64,
) -> Result<LayerGradMatrix, OracleError> {
    let (rows, cols) = (probs.rows(), probs.cols());
    if rows * cols > ORACLE_MAX_WEIGHTS {
        return Err(OracleError::TooLarge {
            count: rows * cols,
            limit: ORACLE_MAX_WEIGHTS,
        });
    }
    let values: Vec<f64> = (0..rows * cols)
        .into_par_iter()
        .map(|idx| {
            let probe = |delta: f64| {
                let mut data = probs.data().to_vec();
                data[idx] += delta;
                let p = ProbMatrix(RowMatrix::new(rows, cols, data).expect("same shape"));
                state.loss(&p, batch)
            };
            Ok((probe(h)? - probe(-h)?) / (2.0 * h))
        })
        .collect::<Result<_, SupernetError>>()?;
    Ok(LayerGradMatrix(RowMatrix::new(rows, cols, values).expect("shape")))
}
