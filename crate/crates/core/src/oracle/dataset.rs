//! Synthetic classification data.
//!
//! Features are i.i.d. standard normal. A scalar teacher score `s(x)` is
//! computed and each split is cut into `C` equal-count quantile bins of `s`,
//! so labels are balanced to within one sample.
//!
//! * teacher-net: `s(x) = vᵀx`.
//! * layered-composition: `h₀ = x`, `h_{k+1} = tanh(gain · A_k h_k / √d + b_k)`
//!   for `k < depth`, `s(x) = vᵀh_depth`, with `A_k`, `v` standard normal and
//!   `b_k ~ N(0, 0.25)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::OracleError;
use crate::autodiff::Tensor;
use crate::data::Dataset;
use crate::supernet::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetKind {
    TeacherNet,
    LayeredComposition { depth: usize, gain: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub train: usize,
    pub val: usize,
    pub input_dim: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub kind: DatasetKind,
    pub seed: u64,
    pub sizes: DatasetSizes,
    pub data: Dataset,
}

impl std::ops::Deref for SyntheticDataset {
    type Target = Dataset;
    fn deref(&self) -> &Dataset {
        &self.data
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

type ScoreFn = Box<dyn Fn(&[f64]) -> f64>;

fn teacher_score(kind: DatasetKind, d: usize, rng: &mut ChaCha8Rng) -> ScoreFn {
    match kind {
        DatasetKind::TeacherNet => {
            let v = normal_vec(rng, d);
            Box::new(move |x| x.iter().zip(&v).map(|(a, b)| a * b).sum())
        }
        DatasetKind::LayeredComposition { depth, gain } => {
            let bias = Normal::new(0.0, 0.5).expect("valid");
            let layers: Vec<(Vec<f64>, Vec<f64>)> = (0..depth)
                .map(|_| (normal_vec(rng, d * d), (0..d).map(|_| bias.sample(rng)).collect()))
                .collect();
            let v = normal_vec(rng, d);
            let scale = gain / (d as f64).sqrt();
            Box::new(move |x| {
                let mut h = x.to_vec();
                for (a, b) in &layers {
                    h = (0..d)
                        .map(|i| {
                            let z: f64 = a[i * d..(i + 1) * d].iter().zip(&h).map(|(w, v)| w * v).sum();
                            (scale * z + b[i]).tanh()
                        })
                        .collect();
                }
                h.iter().zip(&v).map(|(a, b)| a * b).sum()
            })
        }
    }
}

/// Labels from equal-count quantile bins of `scores` (ties broken by index).
fn quantile_labels(scores: &[f64], classes: usize) -> Vec<usize> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut labels = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = rank * classes / n;
    }
    labels
}

fn split(features: &[f64], scores: &[f64], d: usize, classes: usize) -> Batch {
    let n = scores.len();
    let x = Tensor::matrix(n, d, features.to_vec()).expect("finite features");
    Batch::new(x, quantile_labels(scores, classes))
}

pub fn make_dataset(kind: DatasetKind, seed: u64, sizes: DatasetSizes) -> Result<SyntheticDataset, OracleError> {
    let DatasetSizes {
        train,
        val,
        input_dim: d,
        classes,
    } = sizes;
    if train == 0 || val == 0 || d == 0 || classes < 2 {
        return Err(OracleError::Dataset("sizes must be positive and classes ≥ 2".into()));
    }
    if let DatasetKind::LayeredComposition { gain, .. } = kind {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(OracleError::Dataset("gain must be positive".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let score = teacher_score(kind, d, &mut rng);
    let features = normal_vec(&mut rng, (train + val) * d);
    let scores: Vec<f64> = features.chunks(d).map(score).collect();
    let (tf, vf) = features.split_at(train * d);
    let (ts, vs) = scores.split_at(train);
    Ok(SyntheticDataset {
        kind,
        seed,
        sizes,
        data: Dataset::new(split(tf, ts, d, classes), split(vf, vs, d, classes)),
    })
}
