use statrs::distribution::{ContinuousCDF, StudentsT};

/// Two-sided 95% Student-t quantile with `df` degrees of freedom.
pub(crate) fn t_quantile_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// 95% half-width of the mean of independent batch values; `None` with
/// fewer than two batches.
pub(crate) fn half_width(values: &[f64]) -> Option<f64> {
    let b = values.len();
    if b < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / b as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    Some(t_quantile_975(b - 1) * (var / b as f64).sqrt())
}

/// Half-width of `c / x` given the half-width of `x` (first-order delta method).
pub(crate) fn reciprocal_half_width(c: f64, x: f64, hw: Option<f64>) -> Option<f64> {
    hw.map(|h| c.abs() * h / (x * x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_quantiles() {
        assert!((t_quantile_975(19) - 2.093).abs() < 1e-3);
        assert!((t_quantile_975(1000) - 1.962).abs() < 1e-3);
    }

    #[test]
    fn half_width_of_constant_is_zero() {
        assert_eq!(half_width(&[2.0; 10]), Some(0.0));
        assert_eq!(half_width(&[1.0]), None);
        let hw = half_width(&[1.0, 3.0]).unwrap();
        // sd = sqrt(2), t_1 = 12.706
        assert!((hw - 12.706 * 1.0).abs() < 1e-2);
    }
}
