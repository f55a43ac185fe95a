//! Self-checks that compare each approximated quantity against an
//! independent oracle. Each returns a named pass/fail outcome.

use serde::Serialize;

use crate::alignment::{
    nullspace_residual, prop1_check, softmax_jacobian_spectrum, AlignmentKind, Prop1Check,
};
use crate::autodiff::{central_difference, AdError};
use crate::fixtures::{orthogonal_layer_grads, random_alpha, random_batch, toy_cell, toy_net, toy_state};
use crate::matrix::RowMatrix;
use crate::oracle::{make_dataset, max_relative_error, oracle_reg_grad, vanilla_reference, DatasetKind, DatasetSizes};
use crate::search_space::{ArchParams, CellSpec, OpKind};
use crate::supernet::{Batch, LayerGradMatrix, ProbMatrix, SupernetConfig, SupernetState};
use crate::trainer::{reg_grad_fd, search, Searcher, TrainConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn failed(name: &str, err: impl std::fmt::Display) -> Self {
        Self::new(name, false, format!("error: {err}"))
    }
}

fn loss_probe<'a>(
    state: &'a SupernetState,
    rows: usize,
    cols: usize,
    batch: &'a Batch,
) -> impl Fn(&[f64]) -> Result<f64, AdError> + 'a {
    move |flat: &[f64]| {
        let p = ProbMatrix(RowMatrix::new(rows, cols, flat.to_vec()).expect("shape"));
        state.loss(&p, batch).map_err(|_| AdError::NonFinite { op: "loss" })
    }
}

/// Relative error (∞-norm scaled, see [`max_relative_error`]) of the `ω`,
/// `α` and `P` gradients against central differences for one random instance.
pub fn gradient_errors(seed: u64) -> Result<[f64; 3], AdError> {
    let layers = 2 + (seed % 3) as usize;
    let cell = if seed.is_multiple_of(2) {
        toy_cell()
    } else {
        CellSpec::fully_connected(2, OpKind::ALL.to_vec(), 2).expect("valid")
    };
    let state = toy_state(cell.clone(), layers, seed);
    let batch = random_batch(5, 2, 2, seed + 100);
    let alpha = random_alpha(&cell, 1.5, seed + 200);
    let probs = ProbMatrix::broadcast(&alpha, layers);
    let h = 1e-5;
    let bad = |_| AdError::NonFinite { op: "loss" };

    let ad = state.layer_grads(&probs, &batch).map_err(bad)?;
    let omega_fd = central_difference(|w| state.with_omega(w.to_vec()).loss(&probs, &batch).map_err(bad), state.omega(), h)?;
    let (_, alpha_ad) = state.alpha_grad_on_tape(&alpha, &batch).map_err(bad)?;
    let alpha_fd = central_difference(
        |a| {
            let a = ArchParams::new(&cell, a.to_vec()).map_err(|_| AdError::NonFinite { op: "alpha" })?;
            state.alpha_grad_on_tape(&a, &batch).map(|(v, _)| v).map_err(bad)
        },
        alpha.as_slice(),
        h,
    )?;
    let p_fd = central_difference(loss_probe(&state, probs.rows(), probs.cols(), &batch), probs.data(), h)?;
    Ok([
        max_relative_error(&ad.omega_grad, &omega_fd),
        max_relative_error(&alpha_ad, &alpha_fd),
        max_relative_error(ad.grads.data(), &p_fd),
    ])
}

pub fn gradient_check(instances: u64, tol: f64) -> CheckOutcome {
    let name = "AD gradients vs finite differences";
    let mut worst = [0.0_f64; 3];
    for seed in 0..instances {
        match gradient_errors(seed) {
            Ok(e) => (0..3).for_each(|i| worst[i] = worst[i].max(e[i])),
            Err(e) => return CheckOutcome::failed(name, e),
        }
    }
    let passed = worst.iter().all(|&e| e <= tol);
    let detail = format!(
        "{instances} instances, worst rel err ω {:.1e} α {:.1e} P {:.1e} (tol {tol:.0e})",
        worst[0], worst[1], worst[2]
    );
    CheckOutcome::new(name, passed, detail)
}

/// `Σ_ℓ ∇_{ℓp}𝓛` against the gradient of the shared probability vector.
pub fn decomposition_check(tol: f64) -> CheckOutcome {
    let name = "layer-gradient sum equals shared gradient";
    let mut worst: f64 = 0.0;
    for layers in [2, 4, 8] {
        let cell = CellSpec::tabular(3);
        let state = SupernetState::init(SupernetConfig::new(cell.clone(), layers, 3, 3), layers as u64).expect("valid");
        let batch = random_batch(6, 3, 3, layers as u64);
        let p = random_alpha(&cell, 1.0, 7).probabilities();
        let per_layer = state.layer_grads(&ProbMatrix::repeat(&p, layers), &batch);
        let shared = state.shared_prob_grad(&p, &batch);
        match (per_layer, shared) {
            (Ok(a), Ok((_, b))) => {
                for (x, y) in a.grads.column_sums().iter().zip(&b) {
                    worst = worst.max((x - y).abs());
                }
            }
            (Err(e), _) | (_, Err(e)) => return CheckOutcome::failed(name, e),
        }
    }
    CheckOutcome::new(name, worst <= tol, format!("L ∈ {{2,4,8}}, max abs diff {worst:.1e} (tol {tol:.0e})"))
}

/// A toy-net draw whose layer gradients stay at least `1e-7` away from zero
/// in every coordinate, so sign alignment is differentiable there.
pub fn estimator_draw(seed: u64, kind: AlignmentKind) -> (SupernetState, ProbMatrix, Batch) {
    let mut s = seed;
    loop {
        let state = toy_net(s);
        let probs = ProbMatrix::broadcast(&random_alpha(&toy_cell(), 1.0, s + 1000), 2);
        let batch = random_batch(6, 2, 2, s + 2000);
        let safe = match kind {
            AlignmentKind::Cosine => true,
            AlignmentKind::Sign => state
                .layer_grads(&probs, &batch)
                .map(|g| g.grads.data().iter().all(|v| v.abs() > 1e-7))
                .unwrap_or(false),
        };
        if safe {
            return (state, probs, batch);
        }
        s += 1_000_000;
    }
}

/// Worst relative error of `reg_grad_fd` against the coordinate oracle over
/// `draws` toy-net draws.
pub fn estimator_error(kind: AlignmentKind, draws: u64, epsilon0: f64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..draws {
        let (state, probs, batch) = estimator_draw(seed, kind);
        let oracle = oracle_reg_grad(&state, &probs, &batch, kind, 1e-5).map_err(|e| e.to_string())?;
        let est = reg_grad_fd(&state, &probs, &batch, kind, epsilon0).map_err(|e| e.to_string())?;
        let reg = est.reg.map_err(|e| e.to_string())?;
        worst = worst.max(max_relative_error(&reg.grad, &oracle));
    }
    Ok(worst)
}

pub fn estimator_check(kind: AlignmentKind, draws: u64, tol: f64) -> CheckOutcome {
    let name = match kind {
        AlignmentKind::Cosine => "regularizer estimator vs oracle (cosine)",
        AlignmentKind::Sign => "regularizer estimator vs oracle (sign)",
    };
    match estimator_error(kind, draws, 1e-4) {
        Ok(e) => CheckOutcome::new(name, e <= tol, format!("{draws} draws, worst rel err {e:.2e} (tol {tol:.0e})")),
        Err(e) => CheckOutcome::failed(name, e),
    }
}

/// Forward-backward passes used by one regularized inner step.
pub fn passes_per_regularized_step(layers: usize, cell: CellSpec) -> Result<u64, String> {
    let config = TrainConfig {
        variant: Variant::Cosine,
        lambda_max: 0.5,
        epochs: 4,
        ..TrainConfig::default()
    };
    let mut s = Searcher::new(config, SupernetConfig::new(cell, layers, 2, 2)).map_err(|e| e.to_string())?;
    let batch = random_batch(6, 2, 2, 4);
    let before = s.state().pass_count();
    let (record, _) = s.inner_step(&batch, 1).map_err(|e| e.to_string())?;
    if record.skipped_reg {
        return Err("regularizer was skipped".into());
    }
    Ok(s.state().pass_count() - before)
}

pub fn cost_check() -> CheckOutcome {
    let name = "three passes per regularized step";
    let cells = [
        CellSpec::fully_connected(2, vec![OpKind::Zero, OpKind::Skip, OpKind::Affine, OpKind::Nonlinear], 3),
        CellSpec::fully_connected(3, OpKind::ALL.to_vec(), 3),
    ];
    let mut seen = Vec::new();
    for layers in [2, 8] {
        for cell in &cells {
            let cell = cell.clone().expect("valid");
            let alpha_len = cell.alpha_len();
            match passes_per_regularized_step(layers, cell) {
                Ok(n) => seen.push(format!("L={layers} |α|={alpha_len}: {n}")),
                Err(e) => return CheckOutcome::failed(name, e),
            }
        }
    }
    let passed = seen.iter().all(|s| s.ends_with(": 3"));
    CheckOutcome::new(name, passed, seen.join(", "))
}

/// Randomized valid instances of the Jacobian lower bound. Returns
/// `(held, checked, worst slack)`.
pub fn prop1_trials(trials: u64) -> (u64, u64, f64) {
    let (mut held, mut checked, mut worst) = (0, 0, f64::INFINITY);
    for trial in 0..trials {
        let intermediate = 2 + (trial % 3) as usize;
        let spec = CellSpec::fully_connected(intermediate, OpKind::ALL.to_vec(), 2).expect("valid");
        let layers = 1 + (trial as usize * 7) % (spec.alpha_len() - spec.num_edges()).min(8);
        let alpha = random_alpha(&spec, 3.0, trial);
        let rows = orthogonal_layer_grads(&spec, layers, trial ^ 0xabc);
        let g = LayerGradMatrix::from_rows(&rows).expect("rectangular");
        if let Prop1Check::Checked { lhs, rhs, holds } = prop1_check(&alpha, &g) {
            checked += 1;
            held += u64::from(holds);
            worst = worst.min(lhs - rhs);
        }
    }
    (held, checked, worst)
}

pub fn prop1_check_outcome(trials: u64) -> CheckOutcome {
    let (held, checked, slack) = prop1_trials(trials);
    CheckOutcome::new(
        "Jacobian lower bound for orthogonal layer gradients",
        held == trials && checked == trials && slack >= -1e-10,
        format!("{held}/{checked} held of {trials}, min slack {slack:.2e}"),
    )
}

/// Largest `‖J_σ v‖` over per-edge-constant `v`, and the largest
/// `min_nonzero_eig` over saturated architectures.
pub fn null_space_values(instances: u64) -> (f64, f64) {
    use rand::{Rng, SeedableRng};
    let spec = CellSpec::tabular(2);
    let (mut residual, mut eig): (f64, f64) = (0.0, 0.0);
    for seed in 0..instances {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let alpha = random_alpha(&spec, 4.0, seed);
        let mut v = Vec::with_capacity(spec.alpha_len());
        for _ in 0..spec.num_edges() {
            let c: f64 = rng.random_range(-3.0..3.0);
            v.extend(std::iter::repeat_n(c, spec.num_ops()));
        }
        residual = residual.max(nullspace_residual(&alpha, &v));

        let mut sat = vec![0.0; spec.alpha_len()];
        for e in 0..spec.num_edges() {
            let winner = rng.random_range(0..spec.num_ops());
            for o in 0..spec.num_ops() {
                sat[spec.alpha_index(e, o)] = if o == winner { 20.0 } else { rng.random_range(-5.0..0.0) };
            }
        }
        let sat = ArchParams::new(&spec, sat).expect("finite");
        eig = eig.max(softmax_jacobian_spectrum(&sat).min_nonzero_eig);
    }
    (residual, eig)
}

pub fn null_space_check(instances: u64) -> CheckOutcome {
    let (residual, eig) = null_space_values(instances);
    CheckOutcome::new(
        "softmax Jacobian null space and saturation",
        residual <= 1e-12 && eig <= 1e-6,
        format!("{instances} draws, max ‖Jv‖ {residual:.1e}, max saturated min eig {eig:.1e}"),
    )
}

/// Trace of a `lambda_max = 0` search against the plain reference loop.
pub fn lambda_zero_check() -> CheckOutcome {
    let name = "zero-lambda search equals plain reference";
    let sizes = DatasetSizes {
        train: 48,
        val: 48,
        input_dim: 2,
        classes: 2,
    };
    let ds = match make_dataset(DatasetKind::LayeredComposition { depth: 2, gain: 2.0 }, 3, sizes) {
        Ok(d) => d,
        Err(e) => return CheckOutcome::failed(name, e),
    };
    let net = SupernetConfig::new(toy_cell(), 3, 2, 2);
    let config = TrainConfig {
        epochs: 3,
        batch_size: 16,
        lambda_max: 0.0,
        alpha_lr: 3e-3,
        ..TrainConfig::default()
    };
    match (search(&config, &net, &ds), vanilla_reference(&config, &net, &ds)) {
        (Ok(r), Ok(reference)) => CheckOutcome::new(
            name,
            r.trace == reference,
            format!("{} records compared bit-for-bit", reference.len()),
        ),
        (Err(e), _) | (_, Err(e)) => CheckOutcome::failed(name, e),
    }
}

/// The quick suite run by `lambda-nas verify`.
pub fn run_suite() -> Vec<CheckOutcome> {
    vec![
        gradient_check(20, 1e-5),
        decomposition_check(1e-10),
        estimator_check(AlignmentKind::Cosine, 20, 1e-3),
        estimator_check(AlignmentKind::Sign, 20, 5e-3),
        cost_check(),
        prop1_check_outcome(1000),
        null_space_check(100),
        lambda_zero_check(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for c in run_suite() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
