//! Log-domain reductions and small summary statistics. All reductions walk
//! their input in order, so results never depend on worker count.

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// `(sum w)^2 / sum w^2` for `w = exp(log_w)`.
pub fn effective_sample_size(log_w: &[f64]) -> f64 {
    if log_w.is_empty() {
        return 0.0;
    }
    let doubled: Vec<f64> = log_w.iter().map(|x| 2.0 * x).collect();
    (2.0 * log_sum_exp(log_w) - log_sum_exp(&doubled)).exp()
}

/// Sample mean and (n - 1)-normalized standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
