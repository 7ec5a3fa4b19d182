//! Scalar helpers shared by the likelihood evaluators and the variational updates.

/// Logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Log-density of a Bernoulli outcome with success log-odds `eta`.
#[inline]
pub fn log_bernoulli_logit(x: u8, eta: f64) -> f64 {
    if x == 1 {
        log_sigmoid(eta)
    } else {
        log_sigmoid(-eta)
    }
}

/// Curvature of the quadratic logistic bound, `(1/2 - σ(ξ)) / (2ξ)`.
///
/// Written as `-tanh(ξ/2) / (4ξ)` to avoid cancellation; below `1e-4` the
/// series `-1/8 + ξ²/96` is used. Always negative and even in ξ.
#[inline]
pub fn jj_lambda(xi: f64) -> f64 {
    let a = xi.abs();
    if a < 1e-4 {
        -0.125 + a * a / 96.0
    } else {
        -(0.5 * a).tanh() / (4.0 * a)
    }
}

/// `ln Σ exp(v)`; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalizes `log_weights` in place into probabilities and returns their log-normalizer.
pub fn softmax_in_place(log_weights: &mut [f64]) -> f64 {
    let lse = log_sum_exp(log_weights);
    for v in log_weights.iter_mut() {
        *v = (*v - lse).exp();
    }
    lse
}

/// `x ln x` with the `0 ln 0 = 0` convention.
#[inline]
pub fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}
