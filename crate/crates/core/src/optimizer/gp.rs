//! Gaussian-process regression with a squared-exponential kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const DEFAULT_LENGTH_SCALE: f64 = 0.5;
pub const INITIAL_JITTER: f64 = 1e-6;
pub const MAX_JITTER: f64 = 1e-4;
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct GpState {
    pub observations: Vec<(Vec<f64>, f64)>,
    pub length_scale: f64,
    /// Population variance of the observed values.
    pub signal_variance: f64,
    /// Diagonal jitter that made the Gram matrix factorizable.
    pub noise_jitter: f64,
    /// Constant prior mean (the observation mean).
    pub prior_mean: f64,
    factor: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl GpState {
    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        se_kernel(a, b, self.signal_variance, self.length_scale)
    }

    /// Lower-triangular Cholesky factor of `K + jitter * I`.
    pub fn factor_l(&self) -> DMatrix<f64> {
        self.factor.l()
    }
}

/// `sigma2 * exp(-|a - b|^2 / (2 l^2))`.
pub fn se_kernel(a: &[f64], b: &[f64], signal_variance: f64, length_scale: f64) -> f64 {
    signal_variance * (-sq_dist(a, b) / (2.0 * length_scale * length_scale)).exp()
}

/// Fits the GP. Exact duplicate points with equal values are merged;
/// duplicates with different values are rejected.
pub fn gp_fit(observations: &[(Vec<f64>, f64)], length_scale: f64) -> Result<GpState> {
    if observations.is_empty() {
        return Err(Error::Numerical("cannot fit a GP to zero observations".into()));
    }
    let mut obs: Vec<(Vec<f64>, f64)> = Vec::with_capacity(observations.len());
    for (p, v) in observations {
        match obs.iter().find(|(q, _)| q == p) {
            Some((_, w)) if w == v => {}
            Some((_, w)) => {
                return Err(Error::Numerical(format!(
                    "conflicting values {w} and {v} for the same point"
                )))
            }
            None => obs.push((p.clone(), *v)),
        }
    }
    let n = obs.len();
    let prior_mean = obs.iter().map(|(_, v)| v).sum::<f64>() / n as f64;
    let signal_variance = (obs
        .iter()
        .map(|(_, v)| (v - prior_mean).powi(2))
        .sum::<f64>()
        / n as f64)
        .max(VARIANCE_FLOOR);

    let gram = DMatrix::from_fn(n, n, |i, j| {
        se_kernel(&obs[i].0, &obs[j].0, signal_variance, length_scale)
    });
    let y = DVector::from_iterator(n, obs.iter().map(|(_, v)| v - prior_mean));

    let mut jitter = INITIAL_JITTER;
    loop {
        let mut k = gram.clone();
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        if let Some(factor) = Cholesky::new(k) {
            let alpha = factor.solve(&y);
            return Ok(GpState {
                observations: obs,
                length_scale,
                signal_variance,
                noise_jitter: jitter,
                prior_mean,
                factor,
                alpha,
            });
        }
        jitter *= 10.0;
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::Numerical(format!(
                "Gram matrix of {n} points not positive definite with jitter up to {MAX_JITTER:e}"
            )));
        }
    }
}

/// Posterior mean and variance at `point`; variance is clamped at zero.
pub fn gp_predict(state: &GpState, point: &[f64]) -> (f64, f64) {
    let n = state.observations.len();
    let k_star = DVector::from_iterator(n, state.observations.iter().map(|(p, _)| state.kernel(p, point)));
    let mean = state.prior_mean + k_star.dot(&state.alpha);
    let v = state
        .factor
        .l_dirty()
        .solve_lower_triangular(&k_star)
        .unwrap_or_else(|| DVector::zeros(n));
    let variance = (state.signal_variance - v.dot(&v)).max(0.0);
    (mean, variance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_observation_interpolates() {
        let s = gp_fit(&[(vec![0.2, 0.4], 3.5)], DEFAULT_LENGTH_SCALE).unwrap();
        let (m, v) = gp_predict(&s, &[0.2, 0.4]);
        assert!((m - 3.5).abs() < 1e-6);
        assert!(v <= 1e-3 * s.signal_variance + s.noise_jitter);
        let (m, v) = gp_predict(&s, &[10.0, 10.0]);
        assert!((m - s.prior_mean).abs() < 1e-9);
        assert!((v - s.signal_variance).abs() < 1e-9);
    }

    #[test]
    fn duplicates() {
        let a = gp_fit(&[(vec![0.0], 1.0), (vec![1.0], 2.0)], 0.5).unwrap();
        let b = gp_fit(&[(vec![0.0], 1.0), (vec![1.0], 2.0), (vec![0.0], 1.0)], 0.5).unwrap();
        for x in [0.0, 0.3, 0.7, 2.0] {
            assert_eq!(gp_predict(&a, &[x]), gp_predict(&b, &[x]));
        }
        assert!(gp_fit(&[(vec![0.0], 1.0), (vec![0.0], 2.0)], 0.5).is_err());
        assert!(gp_fit(&[], 0.5).is_err());
    }

    #[test]
    fn refit_is_idempotent() {
        let obs = vec![(vec![0.0, 0.0], 1.0), (vec![0.5, 0.25], -2.0), (vec![1.0, 1.0], 4.0)];
        let a = gp_fit(&obs, 0.5).unwrap();
        let b = gp_fit(&a.observations, 0.5).unwrap();
        assert_eq!(a.factor_l(), b.factor_l());
        assert_eq!(gp_predict(&a, &[0.3, 0.3]), gp_predict(&b, &[0.3, 0.3]));
    }

    #[test]
    fn factor_is_lower_triangular() {
        let obs: Vec<_> = (0..6).map(|i| (vec![i as f64 * 0.2], (i * i) as f64)).collect();
        let s = gp_fit(&obs, 0.5).unwrap();
        let l = s.factor_l();
        for i in 0..6 {
            for j in i + 1..6 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }
}
