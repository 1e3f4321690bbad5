//! Small descriptive-statistics helpers.

/// Type-7 (linear interpolation) quantile of an ascending slice.
pub fn quantile_type7(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation with the `K - 1` divisor.
pub fn sample_sd(values: &[f64]) -> f64 {
    let k = values.len();
    if k < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((quantile_type7(&v, 0.025) - 3.475).abs() < 1e-12);
        assert!((quantile_type7(&v, 0.975) - 97.525).abs() < 1e-12);
        assert_eq!(quantile_type7(&[2.0], 0.3), 2.0);
    }
}
