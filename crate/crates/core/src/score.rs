//! Noise schedule, the score-function interface consumed by the sampler,
//! and an exact Gaussian score oracle for verification.
//!
//! Complex grids are treated as 2-channel real fields throughout: sigmas
//! are per-real-component standard deviations and noise grids carry i.i.d.
//! standard-normal real and imaginary parts.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::freq::OperatorTag;
use crate::grid::ComplexGrid;

/// Geometric sequence of noise levels, descending from sigma_max to
/// sigma_min.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    sigma_max: f64,
    sigma_min: f64,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn geometric(sigma_max: f64, sigma_min: f64, levels: usize) -> Result<Self> {
        if !(sigma_max > sigma_min && sigma_min > 0.0) {
            return Err(CoreError::InvalidInput(format!(
                "need sigma_max > sigma_min > 0, got {sigma_max} and {sigma_min}"
            )));
        }
        if levels < 2 {
            return Err(CoreError::InvalidInput(format!(
                "schedule needs at least 2 levels, got {levels}"
            )));
        }
        let ratio = (sigma_min / sigma_max).powf(1.0 / (levels - 1) as f64);
        let mut sigmas: Vec<f64> = (0..levels)
            .map(|i| sigma_max * ratio.powi(i as i32))
            .collect();
        // Pin the endpoints exactly.
        sigmas[0] = sigma_max;
        sigmas[levels - 1] = sigma_min;
        Ok(Self {
            sigma_max,
            sigma_min,
            sigmas,
        })
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigma(&self, level: usize) -> f64 {
        self.sigmas[level]
    }

    /// Same sigma range, resampled to a different level count.
    pub fn resampled(&self, levels: usize) -> Result<Self> {
        Self::geometric(self.sigma_max, self.sigma_min, levels)
    }
}

/// Approximation of the noise-perturbed score field grad log p_sigma.
pub trait ScoreModel {
    /// Evaluate the score at noise level sigma. Output shape equals input
    /// shape and must be finite for finite input.
    fn evaluate(&self, k: &ComplexGrid, sigma: f64) -> ComplexGrid;

    /// Extractor the model was trained under, when it has one.
    fn operator_tag(&self) -> Option<&OperatorTag> {
        None
    }

    /// Grid shape the model is bound to, when it has one.
    fn expected_shape(&self) -> Option<(usize, usize)> {
        None
    }
}

/// Exact score of an isotropic Gaussian N(mean, variance I) convolved with
/// level-sigma noise: (mean - k) / (variance + sigma^2), per real component.
#[derive(Debug, Clone)]
pub struct GaussianScoreOracle {
    pub mean: ComplexGrid,
    pub variance: f64,
}

impl GaussianScoreOracle {
    pub fn new(mean: ComplexGrid, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(CoreError::InvalidInput("oracle variance must be positive".into()));
        }
        Ok(Self { mean, variance })
    }
}

impl ScoreModel for GaussianScoreOracle {
    fn evaluate(&self, k: &ComplexGrid, sigma: f64) -> ComplexGrid {
        let denom = self.variance + sigma * sigma;
        self.mean.sub(k).scale(1.0 / denom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{noise_grid, substream};

    #[test]
    fn three_level_schedule_is_decade_spaced() {
        let s = NoiseSchedule::geometric(1.0, 0.01, 3).unwrap();
        let expect = [1.0, 0.1, 0.01];
        for (a, b) in s.sigmas().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn thousand_level_ratio_closed_form() {
        let s = NoiseSchedule::geometric(1.0, 0.01, 1000).unwrap();
        let ratio = s.sigma(499) / s.sigma(500);
        let expect = 100.0_f64.powf(1.0 / 999.0);
        assert!((ratio - expect).abs() < 1e-12);
    }

    #[test]
    fn endpoints_exact_and_strictly_decreasing() {
        let s = NoiseSchedule::geometric(2.5, 0.003, 57).unwrap();
        assert_eq!(s.sigma(0), 2.5);
        assert_eq!(s.sigma(56), 0.003);
        for w in s.sigmas().windows(2) {
            assert!(w[1] < w[0] && w[1] > 0.0);
        }
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(NoiseSchedule::geometric(0.01, 1.0, 10).is_err());
        assert!(NoiseSchedule::geometric(1.0, 0.0, 10).is_err());
        assert!(NoiseSchedule::geometric(1.0, 0.01, 1).is_err());
    }

    #[test]
    fn oracle_matches_finite_differences_of_log_density() {
        let mut rng = substream(17, "score-fd");
        let mean = noise_grid(&mut rng, 3, 3);
        let oracle = GaussianScoreOracle::new(mean.clone(), 0.3).unwrap();
        let sigma = 0.45;
        let vtot = 0.3 + sigma * sigma;
        let point = noise_grid(&mut rng, 3, 3);

        // log p up to a constant, over the real representation.
        let log_p = |g: &ComplexGrid| -> f64 { -g.sub(&mean).norm_sqr() / (2.0 * vtot) };

        let score = oracle.evaluate(&point, sigma);
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut plus = point.clone();
                plus.set(i, j, point.get(i, j) + num_complex::Complex64::new(h, 0.0));
                let mut minus = point.clone();
                minus.set(i, j, point.get(i, j) - num_complex::Complex64::new(h, 0.0));
                let fd_re = (log_p(&plus) - log_p(&minus)) / (2.0 * h);
                let mut plus_i = point.clone();
                plus_i.set(i, j, point.get(i, j) + num_complex::Complex64::new(0.0, h));
                let mut minus_i = point.clone();
                minus_i.set(i, j, point.get(i, j) - num_complex::Complex64::new(0.0, h));
                let fd_im = (log_p(&plus_i) - log_p(&minus_i)) / (2.0 * h);
                let s = score.get(i, j);
                assert!((s.re - fd_re).abs() / s.re.abs().max(1e-9) < 1e-6);
                assert!((s.im - fd_im).abs() / s.im.abs().max(1e-9) < 1e-6);
            }
        }
    }

    #[test]
    fn oracle_is_pure() {
        let mut rng = substream(18, "score-pure");
        let oracle = GaussianScoreOracle::new(noise_grid(&mut rng, 4, 4), 0.1).unwrap();
        let k = noise_grid(&mut rng, 4, 4);
        let a = oracle.evaluate(&k, 0.2);
        let b = oracle.evaluate(&k, 0.2);
        assert_eq!(a, b);
    }
}
