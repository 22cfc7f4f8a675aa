use gradcore::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Linear β schedule. Timesteps are 1-based: `alpha_bar(1) = α_1` and
/// `alpha_bar(t) = Π_{s≤t} α_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    pub beta_start: f64,
    pub beta_end: f64,
}

/// Reference schedule endpoints, defined for 1000 steps.
pub const REFERENCE_BETA: (f64, f64) = (1e-4, 0.02);
pub const DEFAULT_STEPS: usize = 200;

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::scaled(DEFAULT_STEPS).expect("valid default schedule")
    }
}

impl DiffusionSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(invalid(format!("betas must satisfy 0 < {beta_start} <= {beta_end} < 1")));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alpha_bars,
            beta_start,
            beta_end,
        })
    }

    /// The reference endpoints stretched by `1000 / steps`, which keeps the
    /// total noise level of the 1000-step schedule at a shorter length.
    pub fn scaled(steps: usize) -> Result<Self> {
        let k = 1000.0 / steps as f64;
        Self::linear(steps, REFERENCE_BETA.0 * k, (REFERENCE_BETA.1 * k).min(0.999))
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(invalid(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(1.0 - self.beta(t)?)
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.index(t)?])
    }

    /// Posterior variance `β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`, with `ᾱ_0 = 1`.
    pub fn posterior_variance(&self, t: usize) -> Result<f64> {
        let prev = if t == 1 { 1.0 } else { self.alpha_bar(t - 1)? };
        Ok(self.beta(t)? * (1.0 - prev) / (1.0 - self.alpha_bar(t)?))
    }
}

/// `x_t = √ᾱ_t·x0 + √(1 − ᾱ_t)·noise`.
pub fn forward_noise(x0: &Tensor, t: usize, noise: &Tensor, schedule: &DiffusionSchedule) -> Result<Tensor> {
    if x0.shape() != noise.shape() {
        return Err(invalid(format!("x0 {:?} vs noise {:?}", x0.shape(), noise.shape())));
    }
    let ab = schedule.alpha_bar(t)?;
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0.data().iter().zip(noise.data()).map(|(x, n)| a * x + s * n).collect();
    Ok(Tensor::new(x0.shape(), data)?)
}
