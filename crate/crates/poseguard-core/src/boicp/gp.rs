//! Exact Gaussian-process surrogate with a squared-exponential kernel and
//! per-dimension length-scales, over parameters normalized to [0,1].
//! Observations are standardized before fitting; ill-conditioned solves
//! retry with growing diagonal jitter.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("surrogate failure: Cholesky did not succeed after {attempts} jitter retries")]
    SurrogateFailure { attempts: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub struct Gp {
    points: Vec<Vec<f64>>,
    length_scales: Vec<f64>,
    alpha: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    y_mean: f64,
    y_std: f64,
}

fn kernel(a: &[f64], b: &[f64], length_scales: &[f64]) -> f64 {
    let mut sum = 0.0;
    for ((x, y), l) in a.iter().zip(b).zip(length_scales) {
        let d = (x - y) / l;
        sum += d * d;
    }
    (-0.5 * sum).exp()
}

impl Gp {
    /// Fits the surrogate on normalized inputs and raw objective values.
    pub fn fit(
        points: Vec<Vec<f64>>,
        values: &[f64],
        length_scales: &[f64],
        noise_var: f64,
    ) -> Result<Gp, GpError> {
        if points.is_empty() || points.len() != values.len() {
            return Err(GpError::InvalidInput("empty or mismatched observations".into()));
        }
        let dim = points[0].len();
        if length_scales.len() != dim || length_scales.iter().any(|l| !(*l > 0.0)) {
            return Err(GpError::InvalidInput("length scales must be positive per dimension".into()));
        }
        let n = points.len();
        let y_mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        let y = DVector::from_iterator(n, values.iter().map(|v| (v - y_mean) / y_std));

        let base = DMatrix::from_fn(n, n, |i, j| kernel(&points[i], &points[j], length_scales));
        let mut jitter = noise_var.max(1e-10);
        let mut attempts = 0usize;
        loop {
            attempts += 1;
            let k = &base + DMatrix::identity(n, n) * jitter;
            if let Some(chol) = Cholesky::new(k) {
                let alpha = chol.solve(&y);
                return Ok(Gp { points, length_scales: length_scales.to_vec(), alpha, chol, y_mean, y_std });
            }
            if attempts >= 8 {
                return Err(GpError::SurrogateFailure { attempts });
            }
            jitter *= 10.0;
        }
    }

    /// Posterior mean and variance at one normalized point, in the raw
    /// objective scale.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let n = self.points.len();
        let k_star =
            DVector::from_iterator(n, self.points.iter().map(|p| kernel(p, x, &self.length_scales)));
        let mean_std = k_star.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&k_star).expect("triangular solve");
        let var_std = (1.0 - v.dot(&v)).max(0.0);
        (
            mean_std * self.y_std + self.y_mean,
            var_std * self.y_std * self.y_std,
        )
    }

    /// Expected improvement for maximization over `best` observed value.
    pub fn expected_improvement(&self, x: &[f64], best: f64) -> f64 {
        let (mean, var) = self.predict(x);
        let sigma = var.sqrt();
        let gap = mean - best;
        if sigma < 1e-12 {
            return gap.max(0.0);
        }
        let z = gap / sigma;
        gap * normal_cdf(z) + sigma * normal_pdf(z)
    }
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Φ(z) via the Abramowitz–Stegun 7.1.26 erf approximation (|ε| < 1.5e-7).
fn normal_cdf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-x * x).exp();
    0.5 * (1.0 + sign * erf)
}
