//! Expected Improvement for maximization.

use statrs::function::erf::erfc;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `E[max(f - best - xi, 0)]` for `f ~ N(mean, stddev^2)`. Never negative.
pub fn expected_improvement(mean: f64, stddev: f64, best: f64, xi: f64) -> f64 {
    let gain = mean - best - xi;
    if !(stddev > 0.0) {
        return gain.max(0.0);
    }
    let z = gain / stddev;
    (stddev * (normal_pdf(z) + z * normal_cdf(z))).max(0.0)
}
