//! Diffusion noise schedules: the β/α/ᾱ tables parameterizing the forward
//! and reverse processes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-timestep noise schedule. Timesteps are 1-indexed: `t` ranges over
/// `[1, t_max]` and `x_0` is the clean image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    t_max: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear schedule: betas evenly spaced from `beta_min` to `beta_max`
    /// inclusive (the conventional DDPM default).
    pub fn linear(t_max: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if t_max < 1 {
            return Err(Error::config("schedule length T must be >= 1"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::config(format!(
                "beta bounds must satisfy 0 < beta_min <= beta_max < 1, got [{}, {}]",
                beta_min, beta_max
            )));
        }
        let betas: Vec<f64> = if t_max == 1 {
            vec![beta_min]
        } else {
            (0..t_max)
                .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (t_max - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    /// Standard defaults: T=1000, β in [1e-4, 0.02].
    pub fn default_linear() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("default schedule is valid")
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("schedule needs at least one beta"));
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::config("every beta must lie in (0, 1)"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule {
            t_max: betas.len(),
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.t_max {
            return Err(Error::TimestepOutOfRange {
                t,
                t_max: self.t_max,
            });
        }
        Ok(())
    }

    /// β_t for 1-indexed t.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// α_t = 1 − β_t for 1-indexed t.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// ᾱ_t = ∏_{s≤t} α_s for 1-indexed t.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}
