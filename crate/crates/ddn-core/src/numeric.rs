//! Scalar numeric kernels shared by every model: stable logistic functions,
//! log-sum-exp, and a central-finite-difference gradient oracle used by the
//! gradient-check tests.

/// Logistic function `1 / (1 + e^-z)`, stable over the whole f64 range:
/// large `|z|` saturates to exactly 0 or 1 instead of overflowing.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(z)`, computed as `-softplus(-z)` so that large negative `z`
/// gives `z` rather than `ln 0`.
pub fn ln_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `ln Σ e^{x_i}` with max-subtraction. Panics on empty input: an empty sum
/// is a caller bug, not a quantity this crate ever means to take the log of.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "log_sum_exp of empty slice");
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY; // all terms are exactly e^-inf = 0
    }
    let sum: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Dot product; lengths must match.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central finite-difference gradient of `f` at `theta`:
/// `g_k = (f(theta + h e_k) - f(theta - h e_k)) / 2h`.
///
/// Panics if `f` returns a non-finite value, naming the coordinate being
/// probed, since a silent NaN here would poison every downstream check.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(mut f: F, theta: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "finite_diff_grad needs h > 0");
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let orig = point[k];
        point[k] = orig + h;
        let up = f(&point);
        point[k] = orig - h;
        let down = f(&point);
        point[k] = orig;
        assert!(
            up.is_finite() && down.is_finite(),
            "finite_diff_grad: f non-finite at coordinate {k} (f+ = {up}, f- = {down})"
        );
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Outcome of comparing an analytic gradient against the finite-difference
/// oracle.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `|analytic_k - numeric_k| / max(1, |analytic_k|, |numeric_k|)` per
    /// coordinate. The unit floor keeps round-off in near-zero coordinates
    /// from masquerading as a huge relative error.
    pub per_param: Vec<f64>,
    pub max_rel_err: f64,
    /// Coordinate attaining `max_rel_err` (0 when the gradient is empty).
    pub worst_index: usize,
}

/// Compares `analytic` against the central finite difference of `f` at
/// `theta` with step `h`.
pub fn grad_check<F: FnMut(&[f64]) -> f64>(
    f: F,
    analytic: &[f64],
    theta: &[f64],
    h: f64,
) -> GradCheckReport {
    assert_eq!(analytic.len(), theta.len(), "gradient/parameter length mismatch");
    let numeric = finite_diff_grad(f, theta, h);
    let mut per_param = Vec::with_capacity(theta.len());
    let mut max_rel_err = 0.0f64;
    let mut worst_index = 0;
    for k in 0..theta.len() {
        let denom = 1.0f64.max(analytic[k].abs()).max(numeric[k].abs());
        let err = (analytic[k] - numeric[k]).abs() / denom;
        if err > max_rel_err {
            max_rel_err = err;
            worst_index = k;
        }
        per_param.push(err);
    }
    GradCheckReport {
        per_param,
        max_rel_err,
        worst_index,
    }
}
