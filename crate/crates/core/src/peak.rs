//! Streaming peak detection on a working-set series.
//!
//! The detector keeps an exponential moving average `mu` and variance `var`
//! and flags a sample `x` when its distance `e = |x - mu|` exceeds
//!
//! ```text
//! E = c * g * var + (1 - c) * g * mu,   c = 1 - exp(-F / 2),   F = var / mu
//! ```
//!
//! `F` is the Fano factor of the stream. Low dispersion weights the threshold
//! toward a multiple of the mean, high dispersion toward the variance. While
//! a sample is flagged, the value folded into the statistics is pulled toward
//! the mean by `phi` so that a single spike does not mask the next one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakParams {
    /// EMA decay per sample, in (0, 1].
    pub alpha: f64,
    /// Sensitivity `g`, > 0.
    pub g: f64,
    /// Filter strength during a peak, in (0, 1].
    pub phi: f64,
    /// Means at or below this are treated as zero when computing `F`.
    pub eps: f64,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            g: 1.0,
            phi: 0.2,
            eps: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum PeakParamError {
    #[error("alpha must be in (0, 1], got {0}")]
    Alpha(f64),
    #[error("phi must be in (0, 1], got {0}")]
    Phi(f64),
    #[error("sensitivity must be positive and finite, got {0}")]
    Sensitivity(f64),
    #[error("eps must be non-negative and finite, got {0}")]
    Eps(f64),
}

fn unit_interval(v: f64) -> bool {
    v > 0.0 && v <= 1.0
}

impl PeakParams {
    pub fn validate(&self) -> Result<(), PeakParamError> {
        if !unit_interval(self.alpha) {
            return Err(PeakParamError::Alpha(self.alpha));
        }
        if !unit_interval(self.phi) {
            return Err(PeakParamError::Phi(self.phi));
        }
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(PeakParamError::Sensitivity(self.g));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(PeakParamError::Eps(self.eps));
        }
        Ok(())
    }
}

/// Outcome of feeding one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakVerdict {
    pub is_peak: bool,
    /// Distance `|x - mu|` from the pre-update mean.
    pub e: f64,
    /// Threshold `E`.
    pub threshold_e: f64,
    /// Fano factor `F`.
    pub fano: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeakDetector {
    params: PeakParams,
    mu: f64,
    var: f64,
    peak_active: bool,
    initialized: bool,
}

impl PeakDetector {
    pub fn new(params: PeakParams) -> Result<Self, PeakParamError> {
        params.validate()?;
        Ok(Self {
            params,
            mu: 0.0,
            var: 0.0,
            peak_active: false,
            initialized: false,
        })
    }

    pub fn params(&self) -> &PeakParams {
        &self.params
    }

    pub fn mean(&self) -> f64 {
        self.mu
    }

    pub fn variance(&self) -> f64 {
        self.var
    }

    pub fn peak_active(&self) -> bool {
        self.peak_active
    }

    pub fn update(&mut self, x: f64) -> PeakVerdict {
        if !self.initialized {
            self.initialized = true;
            self.mu = x;
            self.var = 0.0;
            self.peak_active = false;
            return PeakVerdict {
                is_peak: false,
                e: 0.0,
                threshold_e: 0.0,
                fano: 0.0,
            };
        }

        let PeakParams { alpha, g, phi, eps } = self.params;
        let mu_prev = self.mu;
        let e = (x - mu_prev).abs();
        let fano = if mu_prev > eps { self.var / mu_prev } else { 0.0 };
        let c = 1.0 - (-fano / 2.0).exp();
        let threshold_e = c * g * self.var + (1.0 - c) * g * mu_prev;
        let is_peak = e > threshold_e;

        let x_eff = if is_peak {
            phi * x + (1.0 - phi) * mu_prev
        } else {
            x
        };
        let dev = x_eff - mu_prev;
        self.mu = alpha * x_eff + (1.0 - alpha) * mu_prev;
        self.var = alpha * dev * dev + (1.0 - alpha) * self.var;
        self.peak_active = is_peak;

        PeakVerdict {
            is_peak,
            e,
            threshold_e,
            fano,
        }
    }
}

/// Folds [`PeakDetector::update`] over `series` with a fresh detector.
pub fn detect_series(series: &[f64], params: PeakParams) -> Result<Vec<PeakVerdict>, PeakParamError> {
    let mut det = PeakDetector::new(params)?;
    Ok(series.iter().map(|&x| det.update(x)).collect())
}
