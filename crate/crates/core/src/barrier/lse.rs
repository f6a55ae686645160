//! Shifted log-sum-exp and its softmax weights.

/// `sigma + ln(sum exp(rho (v_k - sigma))) / rho` with `sigma = max v_k`.
/// Returns negative infinity for an empty slice.
pub fn log_sum_exp(values: &[f64], rho: f64) -> f64 {
    let sigma = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !sigma.is_finite() {
        return sigma;
    }
    let sum: f64 = values.iter().map(|v| (rho * (v - sigma)).exp()).sum();
    sigma + sum.ln() / rho
}

/// Softmax weights `exp(rho v_k) / sum exp(rho v_l)`, the gradient of
/// [`log_sum_exp`] with respect to its arguments.
pub fn softmax_weights(values: &[f64], rho: f64) -> Vec<f64> {
    let sigma = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = values.iter().map(|v| (rho * (v - sigma)).exp()).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    w
}
