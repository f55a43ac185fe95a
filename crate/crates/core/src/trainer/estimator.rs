use crate::alignment::{
    build_delta, lambda_alignment, lambda_sign, AlignmentError, AlignmentKind, DeltaMatrix,
};
use crate::supernet::{Batch, LayerGrads, ProbMatrix, SupernetError, SupernetState};

/// `‖Δ‖_F` below which the regularizer gradient is taken to be zero.
pub const DELTA_FLOOR: f64 = 1e-12;

/// A successful estimate of `∇_ωΛ`.
#[derive(Debug, Clone)]
pub struct RegGrad {
    pub grad: Vec<f64>,
    pub value: f64,
    pub delta: DeltaMatrix,
    /// Step size along `Δ`; zero when `Δ` vanished and no probes ran.
    pub epsilon: f64,
}

/// Pass-1 results plus the regularizer gradient, or the reason it was skipped.
#[derive(Debug, Clone)]
pub struct RegGradEstimate {
    pub base: LayerGrads,
    pub reg: Result<RegGrad, AlignmentError>,
}

/// Central difference of `∇_ω𝓛` along `Δ`:
///
/// ```text
/// ∇_ωΛ ≈ [∇_ω𝓛(ω, P + εΔ) − ∇_ω𝓛(ω, P − εΔ)] / (2ε · C(L,2)),  ε = ε₀/‖Δ‖_F
/// ```
///
/// Runs exactly three forward-backward passes, all on `batch`, unless `Δ`
/// vanishes or the layer gradients are degenerate (then only the first).
pub fn reg_grad_fd(
    state: &SupernetState,
    probs: &ProbMatrix,
    batch: &Batch,
    kind: AlignmentKind,
    epsilon0: f64,
) -> Result<RegGradEstimate, SupernetError> {
    let base = state.layer_grads(probs, batch)?;
    let value = match kind {
        AlignmentKind::Cosine => lambda_alignment(&base.grads),
        AlignmentKind::Sign => lambda_sign(&base.grads),
    };
    let value = match value {
        Ok(v) => v,
        Err(e) => return Ok(RegGradEstimate { base, reg: Err(e) }),
    };
    let delta = match build_delta(&base.grads, kind) {
        Ok(d) => d,
        Err(e) => return Ok(RegGradEstimate { base, reg: Err(e) }),
    };
    if delta.frobenius_norm < DELTA_FLOOR {
        let reg = RegGrad {
            grad: vec![0.0; state.omega().len()],
            value,
            delta,
            epsilon: 0.0,
        };
        return Ok(RegGradEstimate { base, reg: Ok(reg) });
    }
    let epsilon = epsilon0 / delta.frobenius_norm;
    let plus = probs.add_scaled(&delta.delta, epsilon);
    let minus = probs.add_scaled(&delta.delta, -epsilon);
    let up = state.layer_grads(&ProbMatrix(plus), batch)?;
    let down = state.layer_grads(&ProbMatrix(minus), batch)?;
    let l = state.layers();
    let denom = 2.0 * epsilon * (l * (l - 1) / 2) as f64;
    let grad = up
        .omega_grad
        .iter()
        .zip(&down.omega_grad)
        .map(|(a, b)| (a - b) / denom)
        .collect();
    Ok(RegGradEstimate {
        base,
        reg: Ok(RegGrad {
            grad,
            value,
            delta,
            epsilon,
        }),
    })
}
