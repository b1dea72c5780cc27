//! Small scalar kernels shared by the divergences and the log-domain solvers.

/// `a ln(a / b)` with the conventions `0 ln(0/b) = 0` and `0 ln(0/0) = 0`.
/// Returns `+inf` when `a > 0` and `b = 0`.
#[inline]
pub fn xlogxy(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else if b == 0.0 {
        f64::INFINITY
    } else {
        a * (a / b).ln()
    }
}

/// `ln Σ exp(x_i)`, shifted by the maximum. Empty or all `-inf` input gives `-inf`.
pub fn logsumexp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.into_iter().map(|x| (x - max).exp()).sum();
    max + s.ln()
}

/// Safe natural log for weights: `ln 0 = -inf`.
#[inline]
pub fn ln_weight(w: f64) -> f64 {
    if w == 0.0 {
        f64::NEG_INFINITY
    } else {
        w.ln()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest entrywise relative gap `|a - b| / max(|a|, |b|)`, with `0/0 = 0`.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let scale = x.abs().max(y.abs());
            if scale == 0.0 {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_is_overflow_safe() {
        let v = logsumexp([1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp([f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(std::iter::empty::<f64>()), f64::NEG_INFINITY);
    }

    #[test]
    fn xlogxy_conventions() {
        assert_eq!(xlogxy(0.0, 0.0), 0.0);
        assert_eq!(xlogxy(0.0, 3.0), 0.0);
        assert_eq!(xlogxy(1.0, 0.0), f64::INFINITY);
        assert!((xlogxy(1.0, 0.5) - 2f64.ln()).abs() < 1e-15);
    }
}
