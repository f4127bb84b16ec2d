//! Tail probabilities for the chi-square and standard normal laws.

use statrs::function::{erf, gamma};

/// `P(chi2_df > x)` via the regularized upper incomplete gamma function.
pub fn chisq_sf(x: f64, df: u32) -> f64 {
    assert!(df >= 1, "chi-square degrees of freedom must be positive");
    assert!(x >= 0.0 || x.is_nan(), "chi-square argument must be nonnegative");
    if x == 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma::gamma_ur(0.5 * df as f64, 0.5 * x)
}

/// `P(N(0,1) > z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile, `p` in the open unit interval.
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let z = -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p);
    // one Halley step against the accurate tail polishes the last digits
    let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let e = normal_sf(-z) - p;
    let u = e / density;
    z - u / (1.0 + 0.5 * z * u)
}
