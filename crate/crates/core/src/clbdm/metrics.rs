use imgcore::{unfold, Image, PatchGrid};
use serde::{Deserialize, Serialize};

use super::confidence::{assemble_confidence_map, patch_labels, PatchConfidences};
use crate::error::{invalid, Result};

/// Pixel confusion counts with the blur class as positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub acc: f64,
    pub miou: f64,
    pub iou_blur: f64,
    pub iou_clear: f64,
}

impl Confusion {
    pub fn from_masks(pred: &Image, gt: &Image) -> Result<Self> {
        pred.ensure_same_size(gt)?;
        pred.ensure_channels(1)?;
        let mut c = Self::default();
        for (&p, &t) in pred.data().iter().zip(gt.data()) {
            match (p >= 0.5, t >= 0.5) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn metrics(&self) -> MaskMetrics {
        let iou = |hit: u64| {
            let denom = hit + self.fp + self.fn_;
            if denom == 0 {
                1.0
            } else {
                hit as f64 / denom as f64
            }
        };
        let (iou_blur, iou_clear) = (iou(self.tp), iou(self.tn));
        let acc = if self.total() == 0 {
            1.0
        } else {
            (self.tp + self.tn) as f64 / self.total() as f64
        };
        MaskMetrics {
            acc,
            miou: 0.5 * (iou_blur + iou_clear),
            iou_blur,
            iou_clear,
        }
    }
}

/// Pixel accuracy and mean IoU over the blur and clear classes. A class that
/// is absent from both masks scores IoU 1.
pub fn mask_metrics(pred: &Image, gt: &Image) -> Result<MaskMetrics> {
    Ok(Confusion::from_masks(pred, gt)?.metrics())
}

/// Fraction of patches whose thresholded value matches its label.
pub fn patch_accuracy(values: &[f64], labels: &[f64], threshold: f64) -> Result<f64> {
    if values.len() != labels.len() || values.is_empty() {
        return Err(invalid(format!("{} values vs {} labels", values.len(), labels.len())));
    }
    let hits = values
        .iter()
        .zip(labels)
        .filter(|(&v, &t)| (v >= threshold) == (t >= 0.5))
        .count();
    Ok(hits as f64 / values.len() as f64)
}

/// Patch- and pixel-level detection scores over a set of records.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub patch_acc: f64,
    pub patches: usize,
    pub pixel: MaskMetrics,
}

/// Scores a detector given as a closure from blurry image to patch values.
pub fn score_detection<F>(records: &[(&Image, &Image)], threshold: f64, mut detect: F) -> Result<DetectionScore>
where
    F: FnMut(&Image) -> Result<PatchConfidences>,
{
    let (mut hits, mut patches) = (0.0, 0usize);
    let mut confusion = Confusion::default();
    for (blurred, gt) in records {
        let pc = detect(blurred)?;
        let labels = patch_labels(gt, &pc.grid)?;
        hits += patch_accuracy(&pc.values, &labels, threshold)? * labels.len() as f64;
        patches += labels.len();
        let pred = assemble_confidence_map(&pc.values, &pc.grid)?.binary(threshold)?;
        confusion.add(&Confusion::from_masks(&pred, gt)?);
    }
    if patches == 0 {
        return Err(invalid("no records to score"));
    }
    Ok(DetectionScore {
        patch_acc: hits / patches as f64,
        patches,
        pixel: confusion.metrics(),
    })
}

/// Mean squared forward difference of the patch luma.
pub fn gradient_energy(patch: &Image) -> f64 {
    let l = patch.luma();
    let (h, w) = (l.height(), l.width());
    let p = l.plane(0);
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            let v = p[y * w + x] as f64;
            if x + 1 < w {
                acc += (p[y * w + x + 1] as f64 - v).powi(2);
                n += 1;
            }
            if y + 1 < h {
                acc += (p[(y + 1) * w + x] as f64 - v).powi(2);
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

/// Hand-crafted detector: a patch is blurry when its gradient energy falls
/// below a threshold fitted once on training data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEnergyBaseline {
    pub patch_size: usize,
    pub threshold: f64,
}

impl GradientEnergyBaseline {
    /// Picks the threshold that maximizes patch accuracy on `records`
    /// (pairs of blurry image and ground-truth mask).
    pub fn calibrate(records: &[(&Image, &Image)], patch_size: usize) -> Result<Self> {
        let mut scored: Vec<(f64, bool)> = Vec::new();
        for (blurred, gt) in records {
            let grid = PatchGrid::for_image(blurred, patch_size)?;
            let labels = patch_labels(gt, &grid)?;
            for (p, t) in unfold(blurred, &grid)?.iter().zip(labels) {
                scored.push((gradient_energy(p), t >= 0.5));
            }
        }
        if scored.is_empty() {
            return Err(invalid("no patches to calibrate on"));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Threshold below index i: patches [0, i) are called blurry.
        let total_clear = scored.iter().filter(|s| !s.1).count();
        let (mut best_hits, mut best_i) = (total_clear, 0);
        let mut hits = total_clear;
        for i in 0..scored.len() {
            hits = if scored[i].1 { hits + 1 } else { hits - 1 };
            let next_differs = i + 1 == scored.len() || scored[i + 1].0 > scored[i].0;
            if next_differs && hits > best_hits {
                best_hits = hits;
                best_i = i + 1;
            }
        }
        let threshold = match best_i {
            0 => scored[0].0,
            i if i == scored.len() => scored[i - 1].0 * 2.0 + 1.0,
            i => 0.5 * (scored[i - 1].0 + scored[i].0),
        };
        Ok(Self { patch_size, threshold })
    }

    /// Values are 1 (blurry) or 0 (clear).
    pub fn detect(&self, blurred: &Image) -> Result<PatchConfidences> {
        let grid = PatchGrid::for_image(blurred, self.patch_size)?;
        let values = unfold(blurred, &grid)?
            .iter()
            .map(|p| if gradient_energy(p) < self.threshold { 1.0 } else { 0.0 })
            .collect();
        Ok(PatchConfidences { values, grid })
    }
}
