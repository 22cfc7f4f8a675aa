use imgcore::{hsv_to_rgb, rgb_to_hsv, Image};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};

/// Brightness reduction in HSV space: V is scaled by `scale`.
pub fn darken(sharp: &Image, scale: f32) -> Result<Image> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(invalid(format!("exposure scale must be in (0, 1], got {scale}")));
    }
    let mut hsv = rgb_to_hsv(sharp)?;
    hsv.plane_mut(2).iter_mut().for_each(|v| *v *= scale);
    Ok(hsv_to_rgb(&hsv)?)
}

/// Short-exposure companion of a sharp RGB image: darkened by `scale` in HSV
/// space, plus i.i.d. N(0, σ²) noise per channel, clamped to [0,1].
pub fn simulate_short_exposure(sharp: &Image, scale: f32, sigma: f32, seed: u64) -> Result<Image> {
    if !(sigma >= 0.0) {
        return Err(invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut out = darken(sharp, scale)?;
    if sigma > 0.0 {
        let normal = Normal::new(0.0f32, sigma).map_err(|e| invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0));
    } else {
        out = out.clamp01();
    }
    Ok(out)
}
