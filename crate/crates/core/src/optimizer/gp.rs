//! Zero-mean Gaussian-process regression with a squared-exponential kernel.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("no observations")]
    Empty,
    #[error("{inputs} inputs but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("expected dimension {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("non-finite target at index {0}")]
    NonFiniteTarget(usize),
    #[error("invalid hyperparameter: {0}")]
    InvalidParams(String),
    #[error("kernel matrix not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },
}

/// Largest jitter tried before giving up on a factorization.
pub const MAX_JITTER: f64 = 1e-2;
const FIRST_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpParams {
    pub lengthscale: f64,
    /// Observation noise variance added to the kernel diagonal.
    pub noise: f64,
    /// Lower bound on the signal variance.
    pub signal_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<Vec<f64>>,
    lengthscale: f64,
    signal_variance: f64,
    noise: f64,
    jitter: f64,
    /// Row-major lower-triangular Cholesky factor of K + (noise + jitter) I.
    chol: Vec<f64>,
    /// (K + (noise + jitter) I)^-1 y
    alpha: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// In-place Cholesky of a dense symmetric matrix. Returns false on a
/// non-positive pivot.
fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

/// Solves L x = b for lower-triangular L.
fn forward(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves L^T x = b for lower-triangular L.
fn backward(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Population variance.
pub fn variance(y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

impl GpModel {
    /// Conditions the GP on `(inputs, targets)`. The signal variance is
    /// `max(variance(targets), signal_floor)`. If the kernel matrix fails to
    /// factor, jitter starting at 1e-10 is added to the diagonal and grown
    /// tenfold per retry up to [`MAX_JITTER`].
    pub fn fit(inputs: Vec<Vec<f64>>, targets: &[f64], params: &GpParams) -> Result<Self, GpError> {
        if inputs.is_empty() {
            return Err(GpError::Empty);
        }
        if inputs.len() != targets.len() {
            return Err(GpError::LengthMismatch { inputs: inputs.len(), targets: targets.len() });
        }
        let dim = inputs[0].len();
        if let Some(bad) = inputs.iter().find(|x| x.len() != dim) {
            return Err(GpError::Dimension { expected: dim, found: bad.len() });
        }
        if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
            return Err(GpError::NonFiniteTarget(i));
        }
        if !(params.lengthscale > 0.0) || !params.lengthscale.is_finite() {
            return Err(GpError::InvalidParams(format!("lengthscale {}", params.lengthscale)));
        }
        if !(params.noise > 0.0) {
            return Err(GpError::InvalidParams(format!("noise {}", params.noise)));
        }
        if !(params.signal_floor > 0.0) {
            return Err(GpError::InvalidParams(format!("signal floor {}", params.signal_floor)));
        }

        let n = inputs.len();
        let signal_variance = variance(targets).max(params.signal_floor);
        let inv_two_l2 = 1.0 / (2.0 * params.lengthscale * params.lengthscale);
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = signal_variance * (-sq_dist(&inputs[i], &inputs[j]) * inv_two_l2).exp();
                gram[i * n + j] = k;
                gram[j * n + i] = k;
            }
        }

        let mut jitter = 0.0;
        let chol = loop {
            let mut a = gram.clone();
            for i in 0..n {
                a[i * n + i] += params.noise + jitter;
            }
            if cholesky(&mut a, n) {
                break a;
            }
            jitter = if jitter == 0.0 { FIRST_JITTER } else { jitter * 10.0 };
            if jitter > MAX_JITTER * (1.0 + 1e-9) {
                return Err(GpError::NotPositiveDefinite { jitter: jitter / 10.0 });
            }
            log::debug!("cholesky failed; retrying with jitter {jitter:e}");
        };

        let mut alpha = targets.to_vec();
        forward(&chol, n, &mut alpha);
        backward(&chol, n, &mut alpha);

        Ok(Self {
            inputs,
            lengthscale: params.lengthscale,
            signal_variance,
            noise: params.noise,
            jitter,
            chol,
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Jitter that was needed to factor the kernel matrix (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        self.signal_variance * (-sq_dist(a, b) / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    /// Posterior mean and standard deviation of the latent function at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction, GpError> {
        if x.len() != self.dim() {
            return Err(GpError::Dimension { expected: self.dim(), found: x.len() });
        }
        let n = self.len();
        let mut k: Vec<f64> = self.inputs.iter().map(|xi| self.kernel(xi, x)).collect();
        let mean = k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        forward(&self.chol, n, &mut k);
        let explained: f64 = k.iter().map(|v| v * v).sum();
        let var = (self.signal_variance - explained).max(0.0);
        Ok(Prediction { mean, stddev: var.sqrt() })
    }
}
