use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tuning of the particle filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub n_min: usize,
    /// Particle budget; also the size of the initial particle set.
    pub n_max: usize,
    /// Per-update pose noise covariance over `(x [m], y [m], theta [rad])`.
    pub sigma_p: [[f64; 3]; 3],
    /// Log-space scale noise variance at the start of a run.
    pub sigma_s: f64,
    /// Additive regularizer on the measurement likelihood.
    pub gamma: f64,
    /// Per-class cost weights.
    pub alpha: Vec<f64>,
    pub s_min: f64,
    pub s_max: f64,
    /// Scales tried per sampled road cell at initialization.
    pub k_s: usize,
    /// Headings tried per initial particle.
    pub k_theta: usize,
    /// Log-space scale variance under which the scale is frozen.
    pub scale_freeze_var: f64,
    /// Trace of the position covariance (m²) under which the filter reports
    /// convergence.
    pub conv_cov_threshold: f64,
    pub gmm_components: usize,
    /// The particle count is re-evaluated every this many updates.
    pub adapt_every: usize,
    pub rng_seed: u64,
    /// Disables scale estimation and pins every particle to this scale.
    pub fixed_scale: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let n_max = 10_000;
        FilterConfig {
            n_min: 1_000,
            n_max,
            sigma_p: [[0.05 * 0.05, 0.0, 0.0], [0.0, 0.05 * 0.05, 0.0], [0.0, 0.0, 0.01 * 0.01]],
            sigma_s: 0.01,
            gamma: 0.1 / n_max as f64,
            alpha: vec![1.0; 4],
            s_min: 1.0,
            s_max: 10.0,
            k_s: 10,
            k_theta: 100,
            scale_freeze_var: 1e-4,
            conv_cov_threshold: 4.0,
            gmm_components: 3,
            adapt_every: 5,
            rng_seed: 0,
            fixed_scale: None,
        }
    }
}

impl FilterConfig {
    /// Checks the structural invariants. Zero noise is allowed here so that
    /// deterministic runs can be configured programmatically;
    /// [`FilterConfig::validate_strict`] additionally requires positive noise.
    pub fn validate(&self) -> Result<()> {
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(Error::Config(format!(
                "n_min ({}) must be positive and not exceed n_max ({})",
                self.n_min, self.n_max
            )));
        }
        if !(self.s_min > 0.0 && self.s_min <= self.s_max && self.s_max.is_finite()) {
            return Err(Error::Config(format!(
                "s_min ({}) must be positive and not exceed s_max ({})",
                self.s_min, self.s_max
            )));
        }
        if let Some(s) = self.fixed_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("fixed_scale must be positive, got {s}")));
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let v = self.sigma_p[i][j];
                if !v.is_finite() || (v - self.sigma_p[j][i]).abs() > 1e-12 {
                    return Err(Error::Config("sigma_p must be a finite symmetric matrix".into()));
                }
            }
            if self.sigma_p[i][i] < 0.0 {
                return Err(Error::Config("sigma_p has a negative variance".into()));
            }
        }
        if !(self.sigma_s >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::Config("sigma_s and gamma must be non-negative".into()));
        }
        if self.alpha.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Config("alpha weights must be non-negative".into()));
        }
        if self.k_s == 0 || self.k_theta == 0 || self.gmm_components == 0 || self.adapt_every == 0 {
            return Err(Error::Config(
                "k_s, k_theta, gmm_components and adapt_every must be positive".into(),
            ));
        }
        if self.s_min == self.s_max && self.k_s > 1 && self.fixed_scale.is_none() {
            return Err(Error::Config("k_s > 1 requires s_min < s_max".into()));
        }
        if !(self.scale_freeze_var >= 0.0) || !(self.conv_cov_threshold > 0.0) {
            return Err(Error::Config(
                "scale_freeze_var must be non-negative and conv_cov_threshold positive".into(),
            ));
        }
        Ok(())
    }

    /// Configuration-file validation: structural checks plus strictly
    /// positive noise and `s_min < s_max`.
    pub fn validate_strict(&self) -> Result<()> {
        self.validate()?;
        if self.fixed_scale.is_none() && self.s_min >= self.s_max {
            return Err(Error::Config(format!(
                "s_min ({}) must be less than s_max ({})",
                self.s_min, self.s_max
            )));
        }
        if (0..3).any(|i| self.sigma_p[i][i] <= 0.0) || self.sigma_s <= 0.0 || self.gamma <= 0.0 {
            return Err(Error::Config(
                "sigma_p diagonal, sigma_s and gamma must be positive".into(),
            ));
        }
        let m = nalgebra::Matrix3::from_fn(|i, j| self.sigma_p[i][j]);
        if m.cholesky().is_none() {
            return Err(Error::Config("sigma_p must be positive definite".into()));
        }
        Ok(())
    }

    /// Scale range actually searched, honoring `fixed_scale`.
    pub fn scale_bounds(&self) -> (f64, f64) {
        match self.fixed_scale {
            Some(s) => (s, s),
            None => (self.s_min, self.s_max),
        }
    }
}
