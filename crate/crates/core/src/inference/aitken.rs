/// Projected limit `ℓ1 + (ℓ2 - ℓ1) / (1 - a)` with `a = (ℓ2 - ℓ1) / (ℓ1 - ℓ0)`.
///
/// `None` when the first increment is zero, so the rate is undefined.
pub fn aitken_limit(l0: f64, l1: f64, l2: f64) -> Option<f64> {
    let prev = l1 - l0;
    if prev == 0.0 {
        return None;
    }
    let a = (l2 - l1) / prev;
    Some(l1 + (l2 - l1) / (1.0 - a))
}

/// Aitken stopping rule on a log-likelihood trace.
///
/// Stops when two successive projected limits differ by less than `tol`,
/// which needs the last four values. A trace whose last three values are
/// equal is treated as converged; non-finite projections never stop.
pub fn aitken_stop(trace: &[f64], tol: f64) -> bool {
    let n = trace.len();
    if n < 3 {
        return false;
    }
    let (l1, l2, l3) = (trace[n - 3], trace[n - 2], trace[n - 1]);
    if l1 == l2 && l2 == l3 {
        return true;
    }
    if n < 4 {
        return false;
    }
    match (aitken_limit(trace[n - 4], l1, l2), aitken_limit(l1, l2, l3)) {
        (Some(a), Some(b)) => (b - a).abs() < tol,
        // Stalled then moving again: keep going.
        _ => false,
    }
}
