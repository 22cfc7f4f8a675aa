use gradcore::{Graph, Tensor};
use imgcore::{fold, unfold, Image, PatchGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{forward_noise, DiffusionSchedule};
use super::unet::{images_to_tensor, tensor_to_images, DiffusionModel, IMAGE_CHANNELS, SIZE_MULTIPLE};
use crate::error::{invalid, Result};

/// Tiles denoised together in one graph.
const TILE_BATCH: usize = 16;

/// One denoising trajectory: its RNG stream, reference, mask and optional
/// starting image.
struct Trajectory<'a> {
    rng: ChaCha8Rng,
    reference: &'a Image,
    mask: &'a Image,
    start: Option<&'a Image>,
}

fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Ancestral sampling from `t0` down to 0 for every trajectory. With a start
/// image and `t0 < T`, the start is noised to `t0` first; otherwise the
/// chain starts from pure noise.
fn denoise(model: &DiffusionModel, schedule: &DiffusionSchedule, trajs: &mut [Trajectory], t0: usize) -> Result<Vec<Image>> {
    let mut out = Vec::with_capacity(trajs.len());
    for chunk in trajs.chunks_mut(TILE_BATCH) {
        let first = chunk[0].reference;
        let (h, w) = (first.height(), first.width());
        let per = IMAGE_CHANNELS * h * w;
        let mut x = Vec::with_capacity(chunk.len() * per);
        for tr in chunk.iter_mut() {
            let noise = Tensor::randn(vec![per], 1.0, &mut tr.rng);
            match tr.start {
                Some(start) if t0 < schedule.steps() => {
                    let s = images_to_tensor(&[start])?.reshaped(vec![per])?;
                    x.extend(forward_noise(&s, t0, &noise, schedule)?.into_data());
                }
                _ => x.extend(noise.into_data()),
            }
        }
        let refs: Vec<&Image> = chunk.iter().map(|t| t.reference).collect();
        let masks: Vec<Image> = chunk.iter().map(|t| t.mask.clone()).collect();
        let r = images_to_tensor(&refs)?;
        let shape = vec![chunk.len(), IMAGE_CHANNELS, h, w];
        let mut x = Tensor::new(shape.clone(), x)?;
        for t in (1..=t0).rev() {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, false);
            let xv = g.constant(x.clone());
            let rv = g.constant(r.clone());
            let ts = vec![t; chunk.len()];
            let eps = model.predict_noise(&mut g, &bound, xv, &ts, rv, &masks)?;
            let eps = g.value(eps);
            let (alpha, ab, beta) = (schedule.alpha(t)?, schedule.alpha_bar(t)?, schedule.beta(t)?);
            let coef = beta / (1.0 - ab).sqrt();
            let inv = 1.0 / alpha.sqrt();
            let sigma = if t > 1 { schedule.posterior_variance(t)?.sqrt() } else { 0.0 };
            let mut next: Vec<f64> = x.data().iter().zip(eps.data()).map(|(xi, ei)| inv * (xi - coef * ei)).collect();
            if t > 1 {
                for (i, tr) in chunk.iter_mut().enumerate() {
                    let z = Tensor::randn(vec![per], 1.0, &mut tr.rng);
                    for (v, zi) in next[i * per..(i + 1) * per].iter_mut().zip(z.data()) {
                        *v += sigma * zi;
                    }
                }
            }
            x = Tensor::new(shape.clone(), next)?;
        }
        out.extend(tensor_to_images(&x)?);
    }
    Ok(out)
}

fn check_inputs(reference: &Image, mask: &Image) -> Result<()> {
    reference.ensure_channels(IMAGE_CHANNELS)?;
    mask.ensure_channels(1)?;
    reference.ensure_same_size(mask)?;
    if reference.height() % SIZE_MULTIPLE != 0 || reference.width() % SIZE_MULTIPLE != 0 {
        return Err(invalid(format!(
            "sampling size {}x{} is not divisible by {SIZE_MULTIPLE}",
            reference.height(),
            reference.width()
        )));
    }
    Ok(())
}

/// Draws one image conditioned on `reference` and `mask` by ancestral
/// sampling from pure noise over all `T` steps. Output is clamped to [0, 1]
/// and fully determined by `seed`.
pub fn sample(model: &DiffusionModel, schedule: &DiffusionSchedule, reference: &Image, mask: &Image, seed: u64) -> Result<Image> {
    check_inputs(reference, mask)?;
    let mut trajs = [Trajectory {
        rng: trajectory_rng(seed, 0),
        reference,
        mask,
        start: None,
    }];
    Ok(denoise(model, schedule, &mut trajs, schedule.steps())?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Fraction of the schedule to re-noise, in (0, 1].
    pub strength: f64,
    /// Tile side; a multiple of 8.
    pub tile: usize,
    /// Keep the blurred input outside the mask.
    pub recompose: bool,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            strength: 0.3,
            tile: 32,
            recompose: true,
            seed: 0,
        }
    }
}

impl RefineConfig {
    /// Start timestep `round(strength·T)`, at least 1.
    pub fn start_step(&self, schedule: &DiffusionSchedule) -> Result<usize> {
        if !(self.strength > 0.0 && self.strength <= 1.0) {
            return Err(invalid(format!("strength {} outside (0, 1]", self.strength)));
        }
        Ok(((self.strength * schedule.steps() as f64).round() as usize).clamp(1, schedule.steps()))
    }
}

/// Re-noises `restored` to `t0 = round(strength·T)` and denoises it under
/// the reference, tile by tile. At strength 1 each tile starts from pure
/// noise, so the result equals [`sample`] per tile. With `recompose`, the
/// output is `M·refined + (1 − M)·blurred` and tiles without masked pixels
/// are skipped.
pub fn refine(
    model: &DiffusionModel,
    schedule: &DiffusionSchedule,
    restored: &Image,
    reference: &Image,
    mask: &Image,
    blurred: &Image,
    cfg: &RefineConfig,
) -> Result<Image> {
    let t0 = cfg.start_step(schedule)?;
    if cfg.tile == 0 || cfg.tile % SIZE_MULTIPLE != 0 {
        return Err(invalid(format!("tile {} is not a positive multiple of {SIZE_MULTIPLE}", cfg.tile)));
    }
    restored.ensure_channels(IMAGE_CHANNELS)?;
    restored.ensure_same_size(reference)?;
    restored.ensure_same_size(blurred)?;
    reference.ensure_channels(IMAGE_CHANNELS)?;
    blurred.ensure_channels(IMAGE_CHANNELS)?;
    restored.ensure_same_size(mask)?;
    mask.ensure_channels(1)?;

    let grid = PatchGrid::for_image(restored, cfg.tile)?;
    let h_tiles = unfold(restored, &grid)?;
    let r_tiles = unfold(reference, &grid)?;
    let m_tiles = unfold(mask, &grid)?;
    let active: Vec<usize> = (0..grid.len())
        .filter(|&i| !cfg.recompose || m_tiles[i].data().iter().any(|&v| v > 0.0))
        .collect();
    let mut trajs: Vec<Trajectory> = active
        .iter()
        .map(|&i| Trajectory {
            rng: trajectory_rng(cfg.seed, i),
            reference: &r_tiles[i],
            mask: &m_tiles[i],
            start: Some(&h_tiles[i]),
        })
        .collect();
    let refined = denoise(model, schedule, &mut trajs, t0)?;
    let mut tiles = h_tiles.clone();
    for (i, tile) in active.into_iter().zip(refined) {
        tiles[i] = tile;
    }
    let out = fold(&tiles, &grid)?;
    if !cfg.recompose {
        return Ok(out);
    }
    let mut composed = blurred.clone();
    let (hw, m) = (mask.pixel_count(), mask.data());
    for c in 0..IMAGE_CHANNELS {
        let (src, dst) = (out.plane(c), composed.plane_mut(c));
        for i in 0..hw {
            dst[i] = m[i] * src[i] + (1.0 - m[i]) * dst[i];
        }
    }
    Ok(composed)
}
