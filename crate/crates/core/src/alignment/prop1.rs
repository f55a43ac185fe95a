use serde::{Deserialize, Serialize};

use super::spectrum::{jacobian_vector_product, softmax_jacobian_spectrum};
use super::{dot, norm};
use crate::search_space::ArchParams;
use crate::supernet::LayerGradMatrix;

/// Maximum `|cos|` between two rows still treated as orthogonal.
pub const PROP1_ORTHOGONALITY_TOL: f64 = 1e-8;

/// Slack allowed on `lhs ≥ rhs`.
const BOUND_SLACK: f64 = 1e-10;

/// Outcome of checking `‖J_σ Σ_ℓ g_ℓ‖² ≥ (min λ)² · L · min_ℓ ‖g_ℓ‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Prop1Check {
    Checked { lhs: f64, rhs: f64, holds: bool },
    Skipped { reason: String },
}

impl Prop1Check {
    pub fn holds(&self) -> Option<bool> {
        match self {
            Prop1Check::Checked { holds, .. } => Some(*holds),
            Prop1Check::Skipped { .. } => None,
        }
    }
}

/// Verifies the preconditions (pairwise-orthogonal rows, each free of the
/// per-edge-constant null space) and then evaluates both sides of the bound.
pub fn prop1_check(alpha: &ArchParams, g: &LayerGradMatrix) -> Prop1Check {
    if g.cols() != alpha.len() {
        return Prop1Check::Skipped {
            reason: format!("gradient rows have {} entries, α has {}", g.cols(), alpha.len()),
        };
    }
    let norms: Vec<f64> = g.iter_rows().map(norm).collect();
    for i in 0..g.rows() {
        for j in i + 1..g.rows() {
            let scale = norms[i] * norms[j];
            if scale > 0.0 && dot(g.row(i), g.row(j)).abs() > PROP1_ORTHOGONALITY_TOL * scale {
                return Prop1Check::Skipped {
                    reason: format!("rows {i} and {j} are not orthogonal"),
                };
            }
        }
    }
    let k = alpha.num_ops();
    for (layer, (row, n)) in g.iter_rows().zip(&norms).enumerate() {
        for (edge, block) in row.chunks(k).enumerate() {
            let s: f64 = block.iter().sum();
            if s.abs() > PROP1_ORTHOGONALITY_TOL * n.max(1.0) * (k as f64).sqrt() {
                return Prop1Check::Skipped {
                    reason: format!("row {layer} has a null-space component on edge {edge}"),
                };
            }
        }
    }
    let total = g.column_sums();
    let lhs = jacobian_vector_product(alpha, &total).iter().map(|v| v * v).sum::<f64>();
    let spectrum = softmax_jacobian_spectrum(alpha);
    let min_eig = if spectrum.min_nonzero_eig.is_finite() {
        spectrum.min_nonzero_eig.max(0.0)
    } else {
        0.0
    };
    let min_norm = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let rhs = min_eig * min_eig * g.rows() as f64 * min_norm * min_norm;
    Prop1Check::Checked {
        lhs,
        rhs,
        holds: lhs >= rhs - BOUND_SLACK,
    }
}
