//! Continuous-time noise schedule with `alpha_t = 1`, `sigma_t = t`,
//! logistic log-noise sampling and denoiser preconditioning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nnkit::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdmSchedule {
    pub sigma_data: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Location of `ln sigma`; `ln sigma_data` unless overridden.
    pub logistic_location: f64,
    pub logistic_scale: f64,
}

impl Default for EdmSchedule {
    fn default() -> Self {
        Self::new(0.5, 0.002, 80.0, 0.5).expect("default schedule is valid")
    }
}

/// Preconditioning and loss weight at one noise level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
    pub lambda: f64,
}

impl EdmSchedule {
    pub fn new(sigma_data: f64, sigma_min: f64, sigma_max: f64, logistic_scale: f64) -> Result<Self> {
        let s = Self {
            sigma_data,
            sigma_min,
            sigma_max,
            logistic_location: sigma_data.ln(),
            logistic_scale,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return Err(Error::Config(format!(
                "need 0 < sigma_min < sigma_max, got {} / {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.sigma_data > 0.0) || !(self.logistic_scale > 0.0) {
            return Err(Error::Config("sigma_data and logistic_scale must be positive".into()));
        }
        Ok(())
    }

    /// `ln sigma` drawn from the logistic distribution, before clamping.
    pub fn sample_log_sigma<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // inverse CDF; open interval keeps the logit finite
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        self.logistic_location + self.logistic_scale * (u / (1.0 - u)).ln()
    }

    /// Noise level for one training example, clamped into `[sigma_min, sigma_max]`.
    pub fn sample_sigma<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sample_log_sigma(rng).exp().clamp(self.sigma_min, self.sigma_max)
    }

    /// CDF of the unclamped `ln sigma`.
    pub fn log_sigma_cdf(&self, x: f64) -> f64 {
        1.0 / (1.0 + (-(x - self.logistic_location) / self.logistic_scale).exp())
    }

    pub fn coefficients(&self, sigma: f64) -> Result<Coefficients> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!("sigma must be positive and finite, got {sigma}")));
        }
        Ok(self.coefficients_unchecked(sigma))
    }

    pub(crate) fn coefficients_unchecked(&self, sigma: f64) -> Coefficients {
        let sd2 = self.sigma_data * self.sigma_data;
        let total = sigma * sigma + sd2;
        let c_out = sigma * self.sigma_data / total.sqrt();
        Coefficients {
            c_skip: sd2 / total,
            c_out,
            c_in: 1.0 / total.sqrt(),
            c_noise: 0.25 * sigma.ln(),
            lambda: 1.0 / (c_out * c_out),
        }
    }

    /// `SNR(t) = alpha_t^2 / sigma_t^2 = 1 / t^2`.
    pub fn snr(t: f64) -> f64 {
        1.0 / (t * t)
    }

    /// `-dSNR/dt = 2 / t^3`.
    pub fn elbo_weight(t: f64) -> f64 {
        2.0 / (t * t * t)
    }
}

/// `a0 + sigma * eps` (`alpha_t = 1`).
pub fn perturb(a0: &Tensor, sigma: f64, eps: &Tensor) -> Result<Tensor> {
    if a0.shape() != eps.shape() {
        return Err(Error::shape(
            "perturb",
            format!("{:?}", a0.shape()),
            format!("{:?}", eps.shape()),
        ));
    }
    Ok(a0.zip_map(eps, |a, e| a + sigma * e))
}

/// One `(sigma, eps)` pair per batch row, drawn up front so a loss can be
/// re-evaluated under identical noise (finite-difference checks, SDS vs TR).
#[derive(Clone, Debug)]
pub struct NoiseDraw {
    pub sigmas: Vec<f64>,
    pub eps: Tensor,
}

impl NoiseDraw {
    pub fn sample<R: Rng + ?Sized>(schedule: &EdmSchedule, rows: usize, dim: usize, rng: &mut R) -> Self {
        let sigmas = (0..rows).map(|_| schedule.sample_sigma(rng)).collect();
        let eps = Tensor::randn(rows, dim, rng);
        Self { sigmas, eps }
    }

    /// Same sigma on every row.
    pub fn fixed_sigma<R: Rng + ?Sized>(sigma: f64, rows: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            sigmas: vec![sigma; rows],
            eps: Tensor::randn(rows, dim, rng),
        }
    }

    pub fn rows(&self) -> usize {
        self.sigmas.len()
    }
}
