//! Tape-based reverse-mode differentiation.
//!
//! Every op appends one node holding its forward value; because nodes can
//! only reference earlier nodes, the tape is topologically ordered by
//! construction and `backward` is a single reverse sweep.

use super::{AdError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRowBias(usize, usize),
    Add(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    WeightedSum(Vec<(f64, usize)>),
    /// Mixture whose weights are entries of a vector node.
    Combine {
        weights: usize,
        terms: Vec<(usize, usize)>,
    },
    SoftmaxBlocks {
        input: usize,
        block: usize,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Dot(usize, usize),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::Tanh(..) => "tanh",
            Op::WeightedSum(..) => "weighted_sum",
            Op::Combine { .. } => "scalar_combine",
            Op::SoftmaxBlocks { .. } => "softmax_blocks",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Dot(..) => "dot",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A single-use recording of a computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]. Adjoints are retained for leaf nodes only.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; zeros when `var` does not
    /// influence the root.
    pub fn get(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::checked("gradient", shape, g.clone())
                .expect("backward only produces finite adjoints"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Gradient data of `var` as a flat slice, or `None` when it is identically zero.
    pub fn data(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }

    /// Copies the gradient of `var` into `out`, writing zeros when absent.
    pub fn copy_into(&self, var: Var, out: &mut [f64]) {
        match &self.grads[var.0] {
            Some(g) => out.copy_from_slice(g),
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Op-kind tag of a node, for diagnostics.
    pub fn op_name(&self, var: Var) -> &'static str {
        self.nodes[var.0].op.name()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> AdError {
        AdError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (m, k) = self.value(a).dims2().ok_or_else(|| self.mismatch("matmul", a, b))?;
        let (k2, n) = self.value(b).dims2().ok_or_else(|| self.mismatch("matmul", a, b))?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::checked("matmul", vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a.0, b.0)))
    }

    /// Adds the vector `bias[n]` to every row of `x[m×n]`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var, AdError> {
        let (m, n) = self
            .value(x)
            .dims2()
            .ok_or_else(|| self.mismatch("add_row_bias", x, bias))?;
        if self.value(bias).len() != n {
            return Err(self.mismatch("add_row_bias", x, bias));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            for (v, bj) in row.iter_mut().zip(b) {
                *v += bj;
            }
        }
        let value = Tensor::checked("add_row_bias", vec![m, n], out)?;
        Ok(self.push(value, Op::AddRowBias(x.0, bias.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::checked("add", self.shape(a).to_vec(), out)?;
        Ok(self.push(value, Op::Add(a.0, b.0)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, AdError> {
        let out = self.value(x).data().iter().map(|v| v * factor).collect();
        let value = Tensor::checked("scale", self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::Scale(x.0, factor)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AdError> {
        let out = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::checked("tanh", self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::Tanh(x.0)))
    }

    /// `Σ cᵢ tᵢ` with constant coefficients.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Result<Var, AdError> {
        let (_, first) = *terms.first().ok_or(AdError::EmptyCombine)?;
        let shape = self.shape(first).to_vec();
        let mut out = vec![0.0; self.value(first).len()];
        for &(c, t) in terms {
            if self.shape(t) != shape.as_slice() {
                return Err(self.mismatch("weighted_sum", first, t));
            }
            for (o, v) in out.iter_mut().zip(self.value(t).data()) {
                *o += c * v;
            }
        }
        let value = Tensor::checked("weighted_sum", shape, out)?;
        let terms = terms.iter().map(|&(c, t)| (c, t.0)).collect();
        Ok(self.push(value, Op::WeightedSum(terms)))
    }

    /// `Σ weights[kᵢ] · tᵢ`, where `weights` is a vector node on the tape.
    ///
    /// The backward rule deposits `⟨tᵢ, upstream⟩` into `weights[kᵢ]`, so the
    /// gradient of each mixture weight is read straight off the tape.
    pub fn scalar_combine(&mut self, weights: Var, terms: &[(usize, Var)]) -> Result<Var, AdError> {
        let (_, first) = *terms.first().ok_or(AdError::EmptyCombine)?;
        let shape = self.shape(first).to_vec();
        let w = self.value(weights).data();
        let mut out = vec![0.0; self.value(first).len()];
        for &(k, t) in terms {
            if self.shape(t) != shape.as_slice() {
                return Err(self.mismatch("scalar_combine", first, t));
            }
            let wk = *w.get(k).ok_or(AdError::WeightIndex { index: k, len: w.len() })?;
            for (o, v) in out.iter_mut().zip(self.value(t).data()) {
                *o += wk * v;
            }
        }
        let value = Tensor::checked("scalar_combine", shape, out)?;
        let terms = terms.iter().map(|&(k, t)| (k, t.0)).collect();
        Ok(self.push(
            value,
            Op::Combine {
                weights: weights.0,
                terms,
            },
        ))
    }

    /// Softmax applied independently to consecutive blocks of `block` entries.
    pub fn softmax_blocks(&mut self, x: Var, block: usize) -> Result<Var, AdError> {
        let len = self.value(x).len();
        if block == 0 || !len.is_multiple_of(block) {
            return Err(AdError::BlockSize { len, block });
        }
        let mut out = self.value(x).data().to_vec();
        for chunk in out.chunks_mut(block) {
            softmax_in_place(chunk);
        }
        let value = Tensor::checked("softmax_blocks", self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::SoftmaxBlocks { input: x.0, block }))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, AdError> {
        let (batch, classes) = self.value(logits).dims2().ok_or(AdError::ShapeMismatch {
            op: "softmax_cross_entropy",
            left: self.shape(logits).to_vec(),
            right: vec![labels.len()],
        })?;
        if batch != labels.len() || batch == 0 {
            return Err(AdError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: vec![batch, classes],
                right: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(AdError::LabelOutOfRange { label, classes });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = 0.0;
        for (row, &y) in probs.chunks_mut(classes).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
            for z in row.iter_mut() {
                *z = (*z - lse).exp();
            }
        }
        let value = Tensor::checked("softmax_cross_entropy", vec![1], vec![total / batch as f64])?;
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Inner product of two same-shape tensors, as a scalar node.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("dot", a, b));
        }
        let v = self.value(a).dot(self.value(b));
        let value = Tensor::checked("dot", vec![1], vec![v])?;
        Ok(self.push(value, Op::Dot(a.0, b.0)))
    }

    /// Exact reverse-mode gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Result<Gradients, AdError> {
        if !self.value(root).is_scalar() {
            return Err(AdError::NonScalarRoot {
                shape: self.shape(root).to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(up) = grads[id].take() else { continue };
            if up.iter().any(|v| !v.is_finite()) {
                return Err(AdError::NonFinite { op: "backward" });
            }
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let (m, k) = av.dims2().unwrap();
                    let (_, n) = bv.dims2().unwrap();
                    // dA = dC·Bᵀ, dB = Aᵀ·dC
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = up[i * n + j];
                            if g == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += g * bv.data()[p * n + j];
                            }
                        }
                    }
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let a_ip = av.data()[i * k + p];
                            for j in 0..n {
                                db[p * n + j] += a_ip * up[i * n + j];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::AddRowBias(x, b) => {
                    let n = self.nodes[*b].value.len();
                    let mut db = vec![0.0; n];
                    for row in up.chunks(n) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads, *x, &up);
                    accumulate(&mut grads, *b, &db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &up);
                    accumulate(&mut grads, *b, &up);
                }
                Op::Scale(x, c) => {
                    let d: Vec<f64> = up.iter().map(|g| g * c).collect();
                    accumulate(&mut grads, *x, &d);
                }
                Op::Tanh(x) => {
                    let d: Vec<f64> = up
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, *x, &d);
                }
                Op::WeightedSum(terms) => {
                    for &(c, t) in terms {
                        let d: Vec<f64> = up.iter().map(|g| g * c).collect();
                        accumulate(&mut grads, t, &d);
                    }
                }
                Op::Combine { weights, terms } => {
                    let w = self.nodes[*weights].value.data();
                    let mut dw = vec![0.0; w.len()];
                    for &(k, t) in terms {
                        let tv = self.nodes[t].value.data();
                        dw[k] += tv.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
                        let d: Vec<f64> = up.iter().map(|g| g * w[k]).collect();
                        accumulate(&mut grads, t, &d);
                    }
                    accumulate(&mut grads, *weights, &dw);
                }
                Op::SoftmaxBlocks { input, block } => {
                    let p = node.value.data();
                    let mut d = vec![0.0; p.len()];
                    for ((dc, pc), uc) in d.chunks_mut(*block).zip(p.chunks(*block)).zip(up.chunks(*block)) {
                        let inner: f64 = pc.iter().zip(uc).map(|(a, b)| a * b).sum();
                        for ((di, pi), ui) in dc.iter_mut().zip(pc).zip(uc) {
                            *di = pi * (ui - inner);
                        }
                    }
                    accumulate(&mut grads, *input, &d);
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let batch = labels.len();
                    let classes = probs.len() / batch;
                    let scale = up[0] / batch as f64;
                    let mut d = probs.clone();
                    for (i, &y) in labels.iter().enumerate() {
                        d[i * classes + y] -= 1.0;
                    }
                    d.iter_mut().for_each(|v| *v *= scale);
                    accumulate(&mut grads, *logits, &d);
                }
                Op::Dot(a, b) => {
                    let g = up[0];
                    let da: Vec<f64> = self.nodes[*b].value.data().iter().map(|v| g * v).collect();
                    let db: Vec<f64> = self.nodes[*a].value.data().iter().map(|v| g * v).collect();
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
            }
            // interior adjoints are consumed; leaves keep theirs
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(up);
            }
        }

        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, delta: &[f64]) {
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(delta) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let row = &b[p * n..(p + 1) * n];
            for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o += a_ip * bv;
            }
        }
    }
    out
}

/// Max-shifted softmax of one block.
pub(crate) fn softmax_in_place(block: &mut [f64]) {
    let max = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in block.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in block.iter_mut() {
        *v /= sum;
    }
}
