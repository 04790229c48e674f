//! Standard normal distribution function.

/// Standard normal CDF via the Abramowitz-Stegun 26.2.17 polynomial,
/// absolute error below 7.5e-8 everywhere. Accurate enough for the
/// Kolmogorov-Smirnov distances computed against it in this crate.
pub fn normal_cdf(z: f64) -> f64 {
    if z == 0.0 {
        return 0.5;
    }
    if z < 0.0 {
        return 1.0 - normal_cdf(-z);
    }
    let t = 1.0 / (1.0 + 0.231_641_9 * z);
    let poly = t
        * (0.319_381_530
            + t * (-0.356_563_782
                + t * (1.781_477_937 + t * (-1.821_255_978 + t * 1.330_274_429))));
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    1.0 - pdf * poly
}
