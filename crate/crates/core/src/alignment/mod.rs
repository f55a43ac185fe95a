//! Layer alignment `Λ`, sign alignment `Λ±`, their per-pair gradient
//! directions, and softmax-Jacobian analytics.
//!
//! For per-layer gradients `g_ℓ = ∇_{ℓp}𝓛`:
//!
//! ```text
//! Λ  = mean_{ℓ<ℓ'} ⟨g_ℓ, g_ℓ'⟩ / (‖g_ℓ‖ ‖g_ℓ'‖)
//! Λ± = mean_{ℓ<ℓ'} ⟨g_ℓ, g_ℓ'⟩ / ⟨|g_ℓ|, |g_ℓ'|⟩
//! ```
//!
//! `δ^{ℓ,ℓ'}` is the gradient of one pair term with respect to `g_ℓ`, and row
//! `ℓ` of `Δ` sums it over `ℓ' ≠ ℓ`, so `∂Λ/∂g_ℓ = Δ_ℓ / C(L,2)`.

mod prop1;
mod spectrum;

pub use prop1::{prop1_check, Prop1Check, PROP1_ORTHOGONALITY_TOL};
pub use spectrum::{
    jacobian_vector_product, nullspace_residual, softmax_jacobian_block, softmax_jacobian_spectrum,
    symmetric_eigenvalues, JacobianSpectrum,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::RowMatrix;
use crate::supernet::LayerGradMatrix;

/// Norms (and absolute inner products) at or below this are degenerate.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignmentError {
    #[error("layer {layer} gradient norm {norm:e} is at or below the floor")]
    DegenerateRow { layer: usize, norm: f64 },
    #[error("layers {0} and {1} have vanishing absolute inner product")]
    DegeneratePair(usize, usize),
    #[error("alignment needs at least 2 layers, got {0}")]
    TooFewLayers(usize),
    #[error("vectors have lengths {0} and {1}")]
    Length(usize, usize),
}

/// Which alignment measure a regularizer follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentKind {
    Cosine,
    Sign,
}

/// Alignment summary of one layer-gradient matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub lambda: f64,
    /// `None` when some pair has disjoint support.
    pub lambda_sign: Option<f64>,
    pub pairwise: RowMatrix,
    pub min_layer_grad_norm: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn abs_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x * y).abs()).sum()
}

fn pairs(layers: usize) -> f64 {
    (layers * (layers - 1) / 2) as f64
}

fn checked_norms(g: &LayerGradMatrix) -> Result<Vec<f64>, AlignmentError> {
    if g.rows() < 2 {
        return Err(AlignmentError::TooFewLayers(g.rows()));
    }
    g.iter_rows()
        .enumerate()
        .map(|(layer, r)| {
            let n = norm(r);
            if n > NORM_FLOOR {
                Ok(n)
            } else {
                Err(AlignmentError::DegenerateRow { layer, norm: n })
            }
        })
        .collect()
}

/// Symmetric matrix of pairwise cosine similarities, unit diagonal.
pub fn pairwise_cosines(g: &LayerGradMatrix) -> Result<RowMatrix, AlignmentError> {
    let norms = checked_norms(g)?;
    let l = g.rows();
    let mut out = RowMatrix::zeros(l, l);
    for i in 0..l {
        out.row_mut(i)[i] = 1.0;
        for j in i + 1..l {
            let c = dot(g.row(i), g.row(j)) / (norms[i] * norms[j]);
            out.row_mut(i)[j] = c;
            out.row_mut(j)[i] = c;
        }
    }
    Ok(out)
}

/// Mean pairwise cosine similarity of the layer gradients.
pub fn lambda_alignment(g: &LayerGradMatrix) -> Result<f64, AlignmentError> {
    let cos = pairwise_cosines(g)?;
    let l = g.rows();
    let sum: f64 = (0..l).flat_map(|i| (i + 1..l).map(move |j| (i, j))).map(|(i, j)| cos.get(i, j)).sum();
    Ok(sum / pairs(l))
}

/// Mean pairwise sign correlation `⟨g, g'⟩ / ⟨|g|, |g'|⟩`.
pub fn lambda_sign(g: &LayerGradMatrix) -> Result<f64, AlignmentError> {
    let l = g.rows();
    if l < 2 {
        return Err(AlignmentError::TooFewLayers(l));
    }
    let mut sum = 0.0;
    for i in 0..l {
        for j in i + 1..l {
            let d = abs_dot(g.row(i), g.row(j));
            if d <= NORM_FLOOR {
                return Err(AlignmentError::DegeneratePair(i, j));
            }
            sum += dot(g.row(i), g.row(j)) / d;
        }
    }
    Ok(sum / pairs(l))
}

pub fn alignment_report(g: &LayerGradMatrix) -> Result<AlignmentReport, AlignmentError> {
    let pairwise = pairwise_cosines(g)?;
    let l = g.rows();
    let upper: f64 = (0..l).flat_map(|i| (i + 1..l).map(move |j| (i, j))).map(|(i, j)| pairwise.get(i, j)).sum();
    let min_layer_grad_norm = g.iter_rows().map(norm).fold(f64::INFINITY, f64::min);
    Ok(AlignmentReport {
        lambda: upper / pairs(l),
        lambda_sign: lambda_sign(g).ok(),
        pairwise,
        min_layer_grad_norm,
    })
}

/// Smallest row norm of `g`.
pub fn min_row_norm(g: &LayerGradMatrix) -> f64 {
    g.iter_rows().map(norm).fold(f64::INFINITY, f64::min)
}

/// Gradient of one pair term with respect to `g`.
///
/// Cosine: `(I − g gᵀ/‖g‖²) g2 / (‖g‖‖g2‖)`.
/// Sign: `(I − c·diag(sign g)·diag(sign g2)) g2 / D` with `D = ⟨|g|, |g2|⟩`,
/// `c = ⟨g, g2⟩ / D` and `sign(0) = 0`.
pub fn delta_pair(g: &[f64], g2: &[f64], kind: AlignmentKind) -> Result<Vec<f64>, AlignmentError> {
    if g.len() != g2.len() {
        return Err(AlignmentError::Length(g.len(), g2.len()));
    }
    match kind {
        AlignmentKind::Cosine => {
            let (n1, n2) = (norm(g), norm(g2));
            if n1 <= NORM_FLOOR {
                return Err(AlignmentError::DegenerateRow { layer: 0, norm: n1 });
            }
            if n2 <= NORM_FLOOR {
                return Err(AlignmentError::DegenerateRow { layer: 1, norm: n2 });
            }
            let proj = dot(g, g2) / (n1 * n1);
            let scale = 1.0 / (n1 * n2);
            Ok(g.iter().zip(g2).map(|(a, b)| (b - proj * a) * scale).collect())
        }
        AlignmentKind::Sign => {
            let d = abs_dot(g, g2);
            if d <= NORM_FLOOR {
                return Err(AlignmentError::DegeneratePair(0, 1));
            }
            let c = dot(g, g2) / d;
            Ok(g.iter()
                .zip(g2)
                .map(|(a, b)| (b - c * sign(*a) * b.abs()) / d)
                .collect())
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `Δ` and its Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMatrix {
    pub delta: RowMatrix,
    pub frobenius_norm: f64,
}

/// Row `ℓ` = `Σ_{ℓ'≠ℓ} δ^{ℓ,ℓ'}`.
pub fn build_delta(g: &LayerGradMatrix, kind: AlignmentKind) -> Result<DeltaMatrix, AlignmentError> {
    let l = g.rows();
    if l < 2 {
        return Err(AlignmentError::TooFewLayers(l));
    }
    if kind == AlignmentKind::Cosine {
        checked_norms(g)?;
    }
    let mut delta = RowMatrix::zeros(l, g.cols());
    for i in 0..l {
        for j in (0..l).filter(|&j| j != i) {
            let d = delta_pair(g.row(i), g.row(j), kind).map_err(|e| match e {
                AlignmentError::DegeneratePair(..) => AlignmentError::DegeneratePair(i.min(j), i.max(j)),
                other => other,
            })?;
            for (o, v) in delta.row_mut(i).iter_mut().zip(&d) {
                *o += v;
            }
        }
    }
    let frobenius_norm = delta.frobenius_norm();
    Ok(DeltaMatrix { delta, frobenius_norm })
}
