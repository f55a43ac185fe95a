//! Small deterministic networks, batches and architectures for checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::search_space::{ArchParams, CellSpec, OpKind};
use crate::supernet::{Batch, SupernetConfig, SupernetState};

/// Standard-normal features with labels cycling through the classes.
pub fn random_batch(rows: usize, input_dim: usize, classes: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..rows * input_dim).map(|_| rng.sample(StandardNormal)).collect();
    let labels = (0..rows).map(|i| i % classes).collect();
    Batch::new(Tensor::matrix(rows, input_dim, x).expect("finite"), labels)
}

/// Logits drawn uniformly from `[-scale, scale]`.
pub fn random_alpha(spec: &CellSpec, scale: f64, seed: u64) -> ArchParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = (0..spec.alpha_len()).map(|_| rng.random_range(-scale..=scale)).collect();
    ArchParams::new(spec, alpha).expect("finite and sized")
}

/// Two-node-deep cell (3 edges) with `{skip, nonlinear}` at width 2, input 2,
/// two classes. With `L = 2` it has 56 weights.
pub fn toy_cell() -> CellSpec {
    CellSpec::fully_connected(2, vec![OpKind::Skip, OpKind::Nonlinear], 2).expect("valid")
}

pub fn toy_state(cell: CellSpec, layers: usize, seed: u64) -> SupernetState {
    let config = SupernetConfig::new(cell, layers, 2, 2);
    SupernetState::init(config, seed).expect("valid toy config")
}

/// The `L = 2` estimator-validation net.
pub fn toy_net(seed: u64) -> SupernetState {
    toy_state(toy_cell(), 2, seed)
}

/// `layers` random rows of length `|α|` that are pairwise orthogonal and sum
/// to zero on every edge block (Gram-Schmidt against the per-edge ones
/// vectors and earlier rows). Row norms are drawn from `[0.1, 3]`.
/// Requires `layers + num_edges ≤ |α|`.
pub fn orthogonal_layer_grads(spec: &CellSpec, layers: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = spec.alpha_len();
    let k = spec.num_ops();
    assert!(layers + spec.num_edges() <= n, "not enough dimensions");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = (0..spec.num_edges())
        .map(|e| {
            let mut v = vec![0.0; n];
            v[e * k..(e + 1) * k].fill(1.0 / (k as f64).sqrt());
            v
        })
        .collect();
    let mut rows = Vec::with_capacity(layers);
    while rows.len() < layers {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for b in &basis {
                let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= len);
        basis.push(v.clone());
        let scale: f64 = rng.random_range(0.1..=3.0);
        rows.push(v.into_iter().map(|x| x * scale).collect());
    }
    rows
}
