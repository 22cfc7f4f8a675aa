//! Mask-gated guided filtering.
//!
//! Each `(2r+1)²` window (clipped at the borders) fits an affine map
//! `B ≈ a·R + b` from the short exposure `R` to the blurry image `B`, with the
//! squared residuals weighted by `M²` and a ridge penalty `ε·a²`. Per-pixel
//! coefficients are averaged over the covering windows that contain at least
//! one masked pixel, and the output is gated so that unmasked pixels pass
//! through untouched.

use imgcore::{box_sum_f64, window_counts, Image};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Below this conditioning the window slope is taken as zero.
const DEGENERATE_VAR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuideMode {
    /// Channel `c` of the output is guided by channel `c` of `R`.
    PerChannel,
    /// Every channel is guided by the luma of `R`.
    Luma,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidedFilterConfig {
    pub radius: usize,
    /// Ridge weight, added once per window.
    pub epsilon: f64,
    pub mode: GuideMode,
}

impl Default for GuidedFilterConfig {
    fn default() -> Self {
        Self {
            radius: 2,
            epsilon: 1e-4,
            mode: GuideMode::PerChannel,
        }
    }
}

impl GuidedFilterConfig {
    pub fn new(radius: usize, epsilon: f64) -> Self {
        Self {
            radius,
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(invalid("guided filter radius must be at least 1"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(format!("guided filter epsilon {} must be finite and >= 0", self.epsilon)));
        }
        Ok(())
    }
}

/// Per-window coefficients (indexed by window centre) and their per-pixel
/// aggregates, one row-major `f64` plane per channel of `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowCoeffs {
    pub height: usize,
    pub width: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub a_mean: Vec<Vec<f64>>,
    pub b_mean: Vec<Vec<f64>>,
}

impl WindowCoeffs {
    /// `(a_k, b_k)` of the window centred at `(y, x)`.
    pub fn window(&self, c: usize, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.a[c][i], self.b[c][i])
    }

    /// `(ā, b̄)` at pixel `(y, x)`.
    pub fn aggregate(&self, c: usize, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.a_mean[c][i], self.b_mean[c][i])
    }
}

/// Closed-form minimizer of `Σ w(aR + b − B)² + ε a²` given the window moments
/// `s_w = Σw`, `s_r = ΣwR`, `s_rr = ΣwR²`, `s_b = ΣwB`, `s_rb = ΣwRB`.
#[inline]
fn solve(s_w: f64, s_r: f64, s_rr: f64, s_b: f64, s_rb: f64, eps: f64) -> (f64, f64) {
    if s_w <= 0.0 {
        return (0.0, 0.0);
    }
    let mean_r = s_r / s_w;
    let mean_b = s_b / s_w;
    let var = (s_rr / s_w - mean_r * mean_r).max(0.0);
    let cov = s_rb / s_w - mean_r * mean_b;
    let denom = var + eps / s_w;
    if denom <= DEGENERATE_VAR {
        return (0.0, mean_b);
    }
    let a = cov / denom;
    (a, mean_b - a * mean_r)
}

fn check_inputs(b: &Image, r: &Image, m: Option<&Image>, cfg: &GuidedFilterConfig) -> Result<()> {
    cfg.validate()?;
    b.ensure_same_size(r)?;
    if cfg.mode == GuideMode::PerChannel && r.channels() != b.channels() {
        return Err(invalid(format!(
            "guide has {} channels, input has {}",
            r.channels(),
            b.channels()
        )));
    }
    if let Some(m) = m {
        b.ensure_same_size(m)?;
        m.ensure_channels(1)?;
        if m.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("mask values must lie in [0, 1]"));
        }
    }
    Ok(())
}

fn guide_planes(r: &Image, b: &Image, mode: GuideMode) -> Vec<Vec<f64>> {
    let to64 = |p: &[f32]| p.iter().map(|&v| v as f64).collect::<Vec<_>>();
    match mode {
        GuideMode::PerChannel => (0..b.channels()).map(|c| to64(r.plane(c))).collect(),
        GuideMode::Luma => {
            let l = to64(r.luma().plane(0));
            vec![l; b.channels()]
        }
    }
}

struct ChannelCoeffs {
    a: Vec<f64>,
    b: Vec<f64>,
    a_mean: Vec<f64>,
    b_mean: Vec<f64>,
}

fn channel_coeffs(
    guide: &[f64],
    input: &[f32],
    weight: &[f64],
    h: usize,
    w: usize,
    cfg: &GuidedFilterConfig,
) -> ChannelCoeffs {
    let r = cfg.radius;
    let n = h * w;
    let mut wr = vec![0.0; n];
    let mut wrr = vec![0.0; n];
    let mut wb = vec![0.0; n];
    let mut wrb = vec![0.0; n];
    for i in 0..n {
        let (g, v) = (guide[i], input[i] as f64);
        wr[i] = weight[i] * g;
        wrr[i] = wr[i] * g;
        wb[i] = weight[i] * v;
        wrb[i] = wr[i] * v;
    }
    let s_w = box_sum_f64(weight, h, w, r);
    let s_r = box_sum_f64(&wr, h, w, r);
    let s_rr = box_sum_f64(&wrr, h, w, r);
    let s_b = box_sum_f64(&wb, h, w, r);
    let s_rb = box_sum_f64(&wrb, h, w, r);

    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut active = vec![0.0; n];
    for k in 0..n {
        let (ak, bk) = solve(s_w[k], s_r[k], s_rr[k], s_b[k], s_rb[k], cfg.epsilon);
        a[k] = ak;
        b[k] = bk;
        if s_w[k] > 0.0 {
            active[k] = 1.0;
        }
    }
    let sum_a = box_sum_f64(&a, h, w, r);
    let sum_b = box_sum_f64(&b, h, w, r);
    let covering = box_sum_f64(&active, h, w, r);
    let mut a_mean = vec![0.0; n];
    let mut b_mean = vec![0.0; n];
    for i in 0..n {
        // Counts are sums of 0/1 values and therefore exact.
        if covering[i] > 0.5 {
            a_mean[i] = sum_a[i] / covering[i];
            b_mean[i] = sum_b[i] / covering[i];
        }
    }
    ChannelCoeffs { a, b, a_mean, b_mean }
}

fn coeffs_with_weight(b: &Image, r: &Image, weight: &[f64], cfg: &GuidedFilterConfig) -> (Vec<ChannelCoeffs>, Vec<Vec<f64>>) {
    let (h, w) = (b.height(), b.width());
    let guides = guide_planes(r, b, cfg.mode);
    let chans = (0..b.channels())
        .into_par_iter()
        .map(|c| channel_coeffs(&guides[c], b.plane(c), weight, h, w, cfg))
        .collect();
    (chans, guides)
}

fn mask_weight(m: &Image) -> Vec<f64> {
    m.plane(0).iter().map(|&v| (v as f64) * (v as f64)).collect()
}

/// Solves the per-window masked ridge regressions and aggregates them.
pub fn solve_window_coeffs(b: &Image, r: &Image, m: &Image, cfg: &GuidedFilterConfig) -> Result<WindowCoeffs> {
    check_inputs(b, r, Some(m), cfg)?;
    let (chans, _) = coeffs_with_weight(b, r, &mask_weight(m), cfg);
    let mut out = WindowCoeffs {
        height: b.height(),
        width: b.width(),
        a: Vec::new(),
        b: Vec::new(),
        a_mean: Vec::new(),
        b_mean: Vec::new(),
    };
    for ch in chans {
        out.a.push(ch.a);
        out.b.push(ch.b);
        out.a_mean.push(ch.a_mean);
        out.b_mean.push(ch.b_mean);
    }
    Ok(out)
}

/// `H = M(āR + b̄) + (1 − M)B`; pixels with `M = 0` are copied from `B`.
pub fn masked_guided_filter(b: &Image, r: &Image, m: &Image, cfg: &GuidedFilterConfig) -> Result<Image> {
    check_inputs(b, r, Some(m), cfg)?;
    let (chans, guides) = coeffs_with_weight(b, r, &mask_weight(m), cfg);
    let mask = m.plane(0);
    let mut out = b.clone();
    for (c, coeffs) in chans.iter().enumerate() {
        for (i, v) in out.plane_mut(c).iter_mut().enumerate() {
            let mi = mask[i];
            if mi == 0.0 {
                continue;
            }
            let fit = coeffs.a_mean[i] * guides[c][i] + coeffs.b_mean[i];
            let mi = mi as f64;
            *v = (mi * fit + (1.0 - mi) * *v as f64) as f32;
        }
    }
    Ok(out)
}

/// Classic unmasked guided filter in its running-mean form, with the same
/// per-window ridge weight convention as [`masked_guided_filter`]: the mean
/// form regularizes the variance with `ε/|w_k|`.
pub fn standard_guided_filter(b: &Image, r: &Image, cfg: &GuidedFilterConfig) -> Result<Image> {
    check_inputs(b, r, None, cfg)?;
    let (h, w) = (b.height(), b.width());
    let rad = cfg.radius;
    let counts = window_counts(h, w, rad);
    let mean = |p: &[f64]| -> Vec<f64> {
        box_sum_f64(p, h, w, rad).iter().zip(&counts).map(|(s, n)| s / n).collect()
    };
    let guides = guide_planes(r, b, cfg.mode);
    let planes: Vec<Vec<f32>> = (0..b.channels())
        .into_par_iter()
        .map(|c| {
            let g = &guides[c];
            let p: Vec<f64> = b.plane(c).iter().map(|&v| v as f64).collect();
            let gg: Vec<f64> = g.iter().map(|v| v * v).collect();
            let gp: Vec<f64> = g.iter().zip(&p).map(|(x, y)| x * y).collect();
            let (mu_g, mu_p, mu_gg, mu_gp) = (mean(g), mean(&p), mean(&gg), mean(&gp));
            let mut a = vec![0.0; h * w];
            let mut bb = vec![0.0; h * w];
            for k in 0..h * w {
                let var = (mu_gg[k] - mu_g[k] * mu_g[k]).max(0.0);
                let denom = var + cfg.epsilon / counts[k];
                a[k] = if denom <= DEGENERATE_VAR {
                    0.0
                } else {
                    (mu_gp[k] - mu_g[k] * mu_p[k]) / denom
                };
                bb[k] = mu_p[k] - a[k] * mu_g[k];
            }
            let (ma, mb) = (mean(&a), mean(&bb));
            (0..h * w).map(|i| (ma[i] * g[i] + mb[i]) as f32).collect()
        })
        .collect();
    Ok(Image::from_planes(h, w, &planes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f32]) -> Image {
        Image::from_vec(1, v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn exact_affine_window() {
        let cfg = GuidedFilterConfig::new(1, 0.0);
        let c = solve_window_coeffs(&row(&[1., 3., 5.]), &row(&[0., 1., 2.]), &row(&[1., 1., 1.]), &cfg).unwrap();
        assert!((c.window(0, 0, 1).0 - 2.0).abs() < 1e-6);
        assert!((c.window(0, 0, 1).1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn masked_outlier_ignored() {
        let cfg = GuidedFilterConfig::new(1, 0.0);
        let c = solve_window_coeffs(&row(&[1., 3., 99.]), &row(&[0., 1., 5.]), &row(&[1., 1., 0.]), &cfg).unwrap();
        assert!((c.window(0, 0, 1).0 - 2.0).abs() < 1e-5);
        assert!((c.window(0, 0, 1).1 - 1.0).abs() < 1e-5);
    }

    #[test]
    fn empty_windows_are_zero() {
        let cfg = GuidedFilterConfig::new(1, 1e-4);
        let m = row(&[0., 0., 0., 0., 1.]);
        let c = solve_window_coeffs(&row(&[0.2; 5]), &row(&[0.1; 5]), &m, &cfg).unwrap();
        assert_eq!(c.window(0, 0, 0), (0.0, 0.0));
        assert_eq!(c.window(0, 0, 1), (0.0, 0.0));
        assert!((c.window(0, 0, 4).1 - 0.2).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = GuidedFilterConfig::default();
        let b = Image::zeros(4, 4, 3);
        assert!(masked_guided_filter(&b, &Image::zeros(4, 5, 3), &Image::zeros(4, 4, 1), &cfg).is_err());
        assert!(masked_guided_filter(&b, &b, &Image::zeros(4, 4, 3), &cfg).is_err());
        assert!(masked_guided_filter(&b, &b, &Image::filled(4, 4, 1, 2.0), &cfg).is_err());
        let bad = GuidedFilterConfig::new(0, 1e-4);
        assert!(standard_guided_filter(&b, &b, &bad).is_err());
    }
}
