use gradcore::{Graph, Tensor, Var};
use rand::Rng;

use crate::error::{invalid, Result};

/// Uniform draws are kept this far inside (0, 1).
pub const UNIFORM_CLAMP: f64 = 1e-12;

/// Per-class Gumbel noise `G = −log(−log U)` for a two-class head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GumbelSample {
    pub uniforms: [f64; 2],
    pub noise: [f64; 2],
}

impl GumbelSample {
    /// Noise-free sample, `U = e⁻¹` so that `G = 0`.
    pub fn zeros() -> Self {
        Self {
            uniforms: [(-1.0f64).exp(); 2],
            noise: [0.0; 2],
        }
    }

    pub fn from_uniforms(uniforms: [f64; 2]) -> Self {
        let u = uniforms.map(|u| u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP));
        Self {
            uniforms: u,
            noise: u.map(|u| -(-u.ln()).ln()),
        }
    }

    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::from_uniforms([rng.gen(), rng.gen()])
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("temperature must be positive and finite, got {tau}")))
    }
}

/// `softmax((logits + G) / τ)` over the two classes. Components that would
/// underflow are floored at the smallest positive normal `f64`.
pub fn gumbel_softmax(logits: [f64; 2], tau: f64, sample: &GumbelSample) -> Result<[f64; 2]> {
    check_tau(tau)?;
    let z = [(logits[0] + sample.noise[0]) / tau, (logits[1] + sample.noise[1]) / tau];
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    Ok([(e[0] / s).max(f64::MIN_POSITIVE), (e[1] / s).max(f64::MIN_POSITIVE)])
}

/// Differentiable version over a batch: `logits` is N×2, `noise` N×2.
/// Returns the N×2 probabilities.
pub fn gumbel_softmax_graph(g: &mut Graph, logits: Var, noise: &Tensor, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let n = g.constant(noise.clone());
    let z = g.add(logits, n)?;
    let z = g.scale(z, 1.0 / tau);
    Ok(g.softmax(z, 1)?)
}
