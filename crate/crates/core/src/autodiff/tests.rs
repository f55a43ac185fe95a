use proptest::prelude::*;
use proptest::test_runner::RngSeed;

use super::*;

fn mat(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

/// Column-at-a-time product, written independently of the tape kernel.
fn reference_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k) = a.dims2().unwrap();
    let (_, n) = b.dims2().unwrap();
    let mut out = vec![0.0; m * n];
    for j in 0..n {
        for i in 0..m {
            out[i * n + j] = (0..k).map(|p| a.get2(i, p) * b.get2(p, j)).sum();
        }
    }
    out
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let eye = tape.leaf(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let m = tape.leaf(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let out = tape.matmul(eye, m).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.leaf(mat(&[&[1.0, 0.0]]));
    let z = tape.leaf(mat(&[&[0.0], &[0.0]]));
    let out = tape.matmul(a, z).unwrap();
    assert_eq!(tape.value(out).shape(), &[1, 1]);
    assert_eq!(tape.value(out).data(), &[0.0]);

    let ones = tape.leaf(mat(&[&[1.0], &[1.0]]));
    let out = tape.matmul(m, ones).unwrap();
    assert_eq!(tape.value(out).data(), &[3.0, 7.0]);
    assert_eq!(
        tape.value(out).data(),
        reference_matmul(tape.value(m), tape.value(ones)).as_slice()
    );
}

#[test]
fn matmul_shape_mismatch() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[2, 3]));
    let b = tape.leaf(Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(AdError::ShapeMismatch { op: "matmul", .. })));
}

#[test]
fn scalar_combine_examples() {
    let mut tape = Tape::new();
    let t = tape.leaf(Tensor::vector(vec![1.5, -2.0]).unwrap());
    let w = tape.leaf(Tensor::vector(vec![1.0]).unwrap());
    let out = tape.scalar_combine(w, &[(0, t)]).unwrap();
    assert_eq!(tape.value(out).data(), tape.value(t).data());

    let half = tape.leaf(Tensor::vector(vec![0.5, 0.5]).unwrap());
    let out = tape.scalar_combine(half, &[(0, t), (1, t)]).unwrap();
    assert_eq!(tape.value(out).data(), tape.value(t).data());

    let t1 = tape.leaf(Tensor::vector(vec![1.0, 0.0]).unwrap());
    let t2 = tape.leaf(Tensor::vector(vec![0.0, 1.0]).unwrap());
    let w = tape.leaf(Tensor::vector(vec![0.3, 0.7]).unwrap());
    let out = tape.scalar_combine(w, &[(0, t1), (1, t2)]).unwrap();
    assert_eq!(tape.value(out).data(), &[0.3, 0.7]);

    // weight gradient is ⟨t, upstream⟩
    let probe = tape.leaf(Tensor::vector(vec![2.0, -5.0]).unwrap());
    let loss = tape.dot(out, probe).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(w).data(), &[2.0, -5.0]);
    assert_eq!(grads.get(t1).data(), &[0.6, -1.5]);
}

#[test]
fn scalar_combine_errors() {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::vector(vec![1.0, 1.0]).unwrap());
    assert_eq!(tape.scalar_combine(w, &[]), Err(AdError::EmptyCombine));
    let a = tape.leaf(Tensor::zeros(&[2]));
    let b = tape.leaf(Tensor::zeros(&[3]));
    assert!(matches!(
        tape.scalar_combine(w, &[(0, a), (1, b)]),
        Err(AdError::ShapeMismatch { .. })
    ));
    assert!(matches!(
        tape.scalar_combine(w, &[(5, a)]),
        Err(AdError::WeightIndex { index: 5, len: 2 })
    ));
}

#[test]
fn tanh_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.0, 50.0]).unwrap());
    let y = tape.tanh(x).unwrap();
    assert_eq!(tape.value(y).data()[0], 0.0);
    assert!((tape.value(y).data()[1] - 1.0).abs() < 1e-12);
    let ones = tape.leaf(Tensor::vector(vec![1.0, 0.0]).unwrap());
    let loss = tape.dot(y, ones).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).data()[0], 1.0);
}

#[test]
fn softmax_cross_entropy_examples() {
    let mut tape = Tape::new();
    let uniform = tape.leaf(Tensor::zeros(&[3, 4]));
    let loss = tape.softmax_cross_entropy(uniform, &[0, 1, 3]).unwrap();
    assert!((tape.value(loss).data()[0] - 4f64.ln()).abs() < 1e-15);

    let sat = tape.leaf(mat(&[&[1000.0, 0.0, 0.0]]));
    let loss = tape.softmax_cross_entropy(sat, &[0]).unwrap();
    assert!(tape.value(loss).data()[0].abs() < 1e-12);

    let l = tape.leaf(mat(&[&[1.0, 0.0]]));
    let loss = tape.softmax_cross_entropy(l, &[0]).unwrap();
    let expected = (1.0 + (-1f64).exp()).ln();
    assert!((tape.value(loss).data()[0] - expected).abs() < 1e-15);
    assert!((expected - 0.3133).abs() < 1e-4);

    assert_eq!(
        tape.softmax_cross_entropy(l, &[2]),
        Err(AdError::LabelOutOfRange { label: 2, classes: 2 })
    );
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::vector(vec![0.5, -1.0, 2.0]).unwrap());
    let c = tape.leaf(Tensor::scalar(4.0).unwrap());
    let g = tape.backward(c).unwrap();
    assert_eq!(g.get(w).data(), &[0.0, 0.0, 0.0]);

    let ww = tape.dot(w, w).unwrap();
    let half = tape.scale(ww, 0.5).unwrap();
    let g = tape.backward(half).unwrap();
    assert_eq!(g.get(w).data(), &[0.5, -1.0, 2.0]);

    assert!(matches!(tape.backward(w), Err(AdError::NonScalarRoot { .. })));
}

#[test]
fn softmax_blocks_normalizes_each_block() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![2f64.ln(), 0.0, 1000.0, 0.0, 0.0]).unwrap());
    assert!(matches!(tape.softmax_blocks(x, 2), Err(AdError::BlockSize { .. })));
    let x = tape.leaf(Tensor::vector(vec![2f64.ln(), 0.0, 5.0, -1.0]).unwrap());
    let p = tape.softmax_blocks(x, 2).unwrap();
    let d = tape.value(p).data();
    assert!((d[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((d[2] + d[3] - 1.0).abs() < 1e-15);
}

/// Two-layer net `ce(tanh(x·W1 + b1)·W2 + b2)` as a function of flat params.
fn two_layer(theta: &[f64], x: &Tensor, labels: &[usize], hidden: usize, classes: usize) -> Result<(f64, Vec<f64>), AdError> {
    let (_, d) = x.dims2().unwrap();
    let sizes = [d * hidden, hidden, hidden * classes, classes];
    let shapes = [vec![d, hidden], vec![hidden], vec![hidden, classes], vec![classes]];
    let mut tape = Tape::new();
    let xin = tape.leaf(x.clone());
    let mut vars = Vec::new();
    let mut off = 0;
    for (n, s) in sizes.iter().zip(shapes) {
        vars.push(tape.leaf(Tensor::new(s, theta[off..off + n].to_vec())?));
        off += n;
    }
    let h = tape.matmul(xin, vars[0])?;
    let h = tape.add_row_bias(h, vars[1])?;
    let h = tape.tanh(h)?;
    let z = tape.matmul(h, vars[2])?;
    let z = tape.add_row_bias(z, vars[3])?;
    let loss = tape.softmax_cross_entropy(z, labels)?;
    let g = tape.backward(loss)?;
    let mut grad = Vec::new();
    for v in vars {
        grad.extend_from_slice(g.get(v).data());
    }
    Ok((tape.value(loss).data()[0], grad))
}

#[test]
fn two_layer_net_matches_finite_differences() {
    let x = mat(&[&[0.3, -1.2, 0.5], &[1.1, 0.4, -0.7], &[-0.2, 0.9, 1.3], &[0.6, -0.5, -1.0]]);
    let labels = [0, 2, 1, 2];
    let n = 3 * 4 + 4 + 4 * 3 + 3;
    let theta: Vec<f64> = (0..n).map(|i| ((i * 37 % 17) as f64 / 8.0) - 1.0).collect();
    let err = finite_diff_gradcheck(|t| two_layer(t, &x, &labels, 4, 3), &theta, 1e-5).unwrap();
    assert!(err < 1e-6, "err = {err}");
}

#[test]
fn backward_is_bitwise_deterministic() {
    let x = mat(&[&[0.3, -1.2], &[1.1, 0.4]]);
    let theta: Vec<f64> = (0..(2 * 3 + 3 + 3 * 2 + 2)).map(|i| (i as f64 * 0.37).sin()).collect();
    let a = two_layer(&theta, &x, &[0, 1], 3, 2).unwrap();
    let b = two_layer(&theta, &x, &[0, 1], 3, 2).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert!(a.1.iter().zip(&b.1).all(|(p, q)| p.to_bits() == q.to_bits()));
}

/// Exercises every op: combine, weighted sum, softmax blocks, tanh, matmul,
/// bias, add, scale, dot and cross-entropy.
fn composite(theta: &[f64], rows: usize, cols: usize) -> Result<(f64, Vec<f64>), AdError> {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(rows, cols, theta[..rows * cols].to_vec())?);
    let mut off = rows * cols;
    let w = tape.leaf(Tensor::matrix(cols, cols, theta[off..off + cols * cols].to_vec())?);
    off += cols * cols;
    let b = tape.leaf(Tensor::vector(theta[off..off + cols].to_vec())?);
    off += cols;
    let logits = tape.leaf(Tensor::vector(theta[off..off + 4].to_vec())?);
    let leaves = [x, w, b, logits];

    let p = tape.softmax_blocks(logits, 2)?;
    let xw = tape.matmul(x, w)?;
    let aff = tape.add_row_bias(xw, b)?;
    let nl = tape.tanh(aff)?;
    let half = tape.scale(x, 0.5)?;
    let mix = tape.scalar_combine(p, &[(0, x), (1, nl), (2, half), (3, aff)])?;
    let sum = tape.add(mix, x)?;
    let ws = tape.weighted_sum(&[(0.7, sum), (-0.2, nl)])?;
    let sq = tape.dot(ws, ws)?;
    let labels: Vec<usize> = (0..rows).map(|i| i % cols).collect();
    let ce = tape.softmax_cross_entropy(ws, &labels)?;
    let small = tape.scale(sq, 0.05)?;
    let loss = tape.weighted_sum(&[(1.0, ce), (1.0, small)])?;

    let g = tape.backward(loss)?;
    let grad = leaves.iter().flat_map(|&v| g.get(v).into_data()).collect();
    Ok((tape.value(loss).data()[0], grad))
}

fn composite_case() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..4, 2usize..4).prop_flat_map(|(rows, cols)| {
        let n = rows * cols + cols * cols + cols + 4;
        (Just(rows), Just(cols), proptest::collection::vec(-2.0f64..2.0, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, rng_seed: RngSeed::Fixed(0x5eed), ..ProptestConfig::default() })]

    #[test]
    fn every_op_matches_central_differences((rows, cols, theta) in composite_case()) {
        let err = finite_diff_gradcheck(|t| composite(t, rows, cols), &theta, 1e-5).unwrap();
        prop_assert!(err <= 1e-5, "err = {}", err);
    }

    #[test]
    fn ops_stay_finite_on_bounded_inputs(v in proptest::collection::vec(-1e3f64..1e3, 6)) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 3, v.clone()).unwrap());
        let t = tape.tanh(x).unwrap();
        let sm = tape.softmax_blocks(x, 3).unwrap();
        let ce = tape.softmax_cross_entropy(x, &[0, 2]).unwrap();
        let w = tape.leaf(Tensor::matrix(3, 3, v.iter().chain(&v).chain(&v).take(9).cloned().collect()).unwrap());
        let mm = tape.matmul(x, w).unwrap();
        for node in [t, sm, ce, mm] {
            prop_assert!(tape.value(node).data().iter().all(|z| z.is_finite()));
        }
        prop_assert!(tape.backward(ce).is_ok());
    }
}
