//! Central finite-difference helpers shared by the gradient tests across the
//! workspace.

/// Central-difference gradient of `f` with respect to `xs`, one entry at a
/// time. `f` must be a pure function of the slice contents.
pub fn finite_diff(xs: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut grads = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let fp = f(xs);
        xs[i] = orig - h;
        let fm = f(xs);
        xs[i] = orig;
        grads.push((fp - fm) / (2.0 * h));
    }
    grads
}

/// Largest relative error between analytic and numeric gradients, with an
/// absolute floor so near-zero entries do not blow up the ratio.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
