use imgcore::{fold, nearest_resize, unfold, Image, PatchGrid};

use super::gumbel::{gumbel_softmax, GumbelSample};
use super::net::{DetectorConfig, DetectorNet, BLUR_CLASS};
use crate::error::{invalid, Result};

/// Blur probabilities of every patch, in grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchConfidences {
    pub values: Vec<f64>,
    pub grid: PatchGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap {
    /// Pixel-level blur confidence, constant over each patch footprint.
    pub soft: Image,
    pub grid: PatchGrid,
}

impl ConfidenceMap {
    pub fn binary(&self, threshold: f64) -> Result<Image> {
        binarize(&self.soft, threshold)
    }
}

/// Noise-free inference on the non-overlapping patches of `b`.
pub fn detect_patches(b: &Image, cfg: &DetectorConfig, net: &DetectorNet) -> Result<PatchConfidences> {
    cfg.validate()?;
    let grid = PatchGrid::for_image(b, cfg.patch_size)?;
    let patches = unfold(b, &grid)?;
    let zero = GumbelSample::zeros();
    let values = net
        .logits(&patches)?
        .into_iter()
        .map(|l| Ok(gumbel_softmax(l, cfg.tau, &zero)?[BLUR_CLASS]))
        .collect::<Result<_>>()?;
    Ok(PatchConfidences { values, grid })
}

/// Broadcasts each patch value over its footprint and crops to the source size.
pub fn assemble_confidence_map(values: &[f64], grid: &PatchGrid) -> Result<ConfidenceMap> {
    if values.len() != grid.len() {
        return Err(invalid(format!("{} values for a grid of {} patches", values.len(), grid.len())));
    }
    let p = grid.patch_size;
    let blocks = values
        .iter()
        .map(|&v| nearest_resize(&Image::filled(1, 1, 1, v as f32), p, p))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(ConfidenceMap {
        soft: fold(&blocks, grid)?,
        grid: grid.clone(),
    })
}

/// `1` where `m ≥ threshold`, else `0`.
pub fn binarize(m: &Image, threshold: f64) -> Result<Image> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid(format!("threshold {threshold} must lie in (0, 1)")));
    }
    Ok(m.map(|v| if v as f64 >= threshold { 1.0 } else { 0.0 }))
}

/// Per-patch targets from a pixel mask: blurry when at least half of the
/// patch footprint (after reflection padding) is blurry.
pub fn patch_labels(mask: &Image, grid: &PatchGrid) -> Result<Vec<f64>> {
    mask.ensure_channels(1)?;
    Ok(unfold(mask, grid)?
        .iter()
        .map(|p| {
            let blurry = p.data().iter().filter(|&&v| v >= 0.5).count();
            if 2 * blurry >= p.data().len() {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}
