use super::AdError;

/// Relative error with the `max(|a|, |b|, 1e-8)` denominator guard.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central differences `(f(θ+h·eₖ) − f(θ−h·eₖ)) / 2h` for every coordinate.
pub fn central_difference<F>(f: F, theta: &[f64], h: f64) -> Result<Vec<f64>, AdError>
where
    F: Fn(&[f64]) -> Result<f64, AdError>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(AdError::BadStep(h));
    }
    let mut probe = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        probe[k] = theta[k] + h;
        let plus = f(&probe)?;
        probe[k] = theta[k] - h;
        let minus = f(&probe)?;
        probe[k] = theta[k];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(AdError::NonFinite { op: "finite_diff" });
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Worst per-coordinate relative error between the reverse-mode gradient and
/// central finite differences.
///
/// `f` returns the value and its AD gradient; only the gradient at `theta`
/// is used, the probes use the value alone.
pub fn finite_diff_gradcheck<F>(f: F, theta: &[f64], h: f64) -> Result<f64, AdError>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>), AdError>,
{
    let (value, analytic) = f(theta)?;
    if !value.is_finite() {
        return Err(AdError::NonFinite { op: "finite_diff" });
    }
    if analytic.len() != theta.len() {
        return Err(AdError::ShapeMismatch {
            op: "finite_diff_gradcheck",
            left: vec![analytic.len()],
            right: vec![theta.len()],
        });
    }
    let numeric = central_difference(|t| f(t).map(|(v, _)| v), theta, h)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = [0.5, -2.0, 3.25];
        let f = |t: &[f64]| Ok((t.iter().zip(&w).map(|(a, b)| a * b).sum(), w.to_vec()));
        let err = finite_diff_gradcheck(f, &[0.3, 1.1, -0.7], 1e-5).unwrap();
        assert!(err < 1e-10, "err = {err}");
    }

    #[test]
    fn cubic_taylor_error() {
        // FD of θ³ at 1 is 3 + h²
        let f = |t: &[f64]| Ok((t[0].powi(3), vec![3.0 * t[0] * t[0]]));
        let err = finite_diff_gradcheck(f, &[1.0], 1e-3).unwrap();
        assert!(err <= 1e-5, "err = {err}");
        assert!((err - 1e-6 / 3.000001).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        let f = |t: &[f64]| Ok((t[0], vec![1.0]));
        assert_eq!(finite_diff_gradcheck(f, &[0.0], 0.0), Err(AdError::BadStep(0.0)));
        let g = |t: &[f64]| Ok((if t[0] == 0.0 { 0.0 } else { f64::NAN }, vec![0.0]));
        assert!(matches!(
            finite_diff_gradcheck(g, &[0.0], 1e-5),
            Err(AdError::NonFinite { .. })
        ));
    }

    #[test]
    fn denominator_guard() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
    }
}
