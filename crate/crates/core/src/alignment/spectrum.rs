use serde::{Deserialize, Serialize};

use crate::search_space::{softmax_per_edge, ArchParams};

/// Eigenvalues of each per-edge block of `J_σ(α) = diag(p) − p pᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianSpectrum {
    /// Ascending eigenvalues, one list per edge.
    pub blocks: Vec<Vec<f64>>,
    /// Smallest eigenvalue once each block's structural null direction
    /// (the all-ones vector, always in the kernel) is set aside.
    pub min_nonzero_eig: f64,
}

impl JacobianSpectrum {
    /// Number of eigenvalues with magnitude at most `tol`, per block.
    pub fn near_zero_counts(&self, tol: f64) -> Vec<usize> {
        self.blocks
            .iter()
            .map(|b| b.iter().filter(|v| v.abs() <= tol).count())
            .collect()
    }
}

/// Dense `diag(p) − p pᵀ` for one edge.
pub fn softmax_jacobian_block(p: &[f64]) -> Vec<Vec<f64>> {
    (0..p.len())
        .map(|i| {
            (0..p.len())
                .map(|j| if i == j { p[i] - p[i] * p[i] } else { -p[i] * p[j] })
                .collect()
        })
        .collect()
}

pub fn softmax_jacobian_spectrum(alpha: &ArchParams) -> JacobianSpectrum {
    let p = softmax_per_edge(alpha);
    let blocks: Vec<Vec<f64>> = p
        .chunks(alpha.num_ops())
        .map(|pb| symmetric_eigenvalues(softmax_jacobian_block(pb)))
        .collect();
    let min_nonzero_eig = blocks
        .iter()
        .flat_map(|b| b.iter().skip(1))
        .cloned()
        .fold(f64::INFINITY, f64::min);
    JacobianSpectrum {
        blocks,
        min_nonzero_eig,
    }
}

/// `J_σ(α) · v`, block by block: `p ⊙ (v − ⟨p, v⟩)`.
pub fn jacobian_vector_product(alpha: &ArchParams, v: &[f64]) -> Vec<f64> {
    assert_eq!(v.len(), alpha.len(), "vector length must equal |α|");
    let p = softmax_per_edge(alpha);
    let k = alpha.num_ops();
    let mut out = vec![0.0; p.len()];
    for ((o, pb), vb) in out.chunks_mut(k).zip(p.chunks(k)).zip(v.chunks(k)) {
        let inner: f64 = pb.iter().zip(vb).map(|(a, b)| a * b).sum();
        for ((oi, pi), vi) in o.iter_mut().zip(pb).zip(vb) {
            *oi = pi * (vi - inner);
        }
    }
    out
}

/// `‖J_σ(α) v‖₂`.
pub fn nullspace_residual(alpha: &ArchParams, v: &[f64]) -> f64 {
    jacobian_vector_product(alpha, v).iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Ascending eigenvalues of a symmetric matrix: Householder reduction to
/// tridiagonal form followed by implicit QL with Wilkinson shifts.
pub fn symmetric_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    if n == 0 {
        return Vec::new();
    }
    let (mut d, mut e) = tridiagonalize(&mut a);
    tridiagonal_ql(&mut d, &mut e);
    d.sort_by(|x, y| x.total_cmp(y));
    d
}

/// Returns the diagonal and sub-diagonal (`e[0] = 0`, `e[i]` couples `i-1, i`).
#[allow(clippy::needless_range_loop)]
fn tridiagonalize(a: &mut [Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = a.len();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = a[i][..=l].iter().map(|v| v.abs()).sum();
            if scale == 0.0 {
                e[i] = a[i][l];
            } else {
                for k in 0..=l {
                    a[i][k] /= scale;
                    h += a[i][k] * a[i][k];
                }
                let f = a[i][l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[i][l] = f - g;
                let mut f = 0.0;
                for j in 0..=l {
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += a[j][k] * a[i][k];
                    }
                    for k in j + 1..=l {
                        g += a[k][j] * a[i][k];
                    }
                    e[j] = g / h;
                    f += e[j] * a[i][j];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = a[i][j];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[j][k] -= f * e[k] + g * a[i][k];
                    }
                }
            }
        } else {
            e[i] = a[i][l];
        }
        d[i] = h;
    }
    e[0] = 0.0;
    for i in 0..n {
        d[i] = a[i][i];
    }
    (d, e)
}

fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iterations = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > 60 {
                // blocks are tiny; this only guards against pathological input
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
}
