use imgcore::Image;

use crate::error::{invalid, Result};

/// Linear motion PSF: a line segment of the given length, rasterized with
/// bilinear weights and normalized to unit mass.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionKernel {
    length: f32,
    angle: f32,
    radius: usize,
    taps: Vec<f32>,
}

impl MotionKernel {
    pub fn new(length: f32, angle: f32) -> Result<Self> {
        if !(length >= 1.0) || !angle.is_finite() {
            return Err(invalid(format!(
                "motion kernel needs length >= 1 and a finite angle, got ({length}, {angle})"
            )));
        }
        let radius = ((length - 1.0) / 2.0).ceil() as usize + 1;
        let size = 2 * radius + 1;
        let mut acc = vec![0.0f64; size * size];
        let samples = length.ceil() as usize;
        let (dx, dy) = ((angle as f64).cos(), (angle as f64).sin());
        let half = (length as f64 - 1.0) / 2.0;
        for j in 0..samples {
            let t = if samples == 1 {
                0.0
            } else {
                -half + j as f64 * (2.0 * half) / (samples - 1) as f64
            };
            // snap away float noise so axis-aligned kernels stay on the grid
            let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
            let (x, y) = (snap(t * dx), snap(t * dy));
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            for (oy, wy) in [(0, 1.0 - fy), (1, fy)] {
                for (ox, wx) in [(0, 1.0 - fx), (1, fx)] {
                    let w = wy * wx;
                    if w == 0.0 {
                        continue;
                    }
                    let ky = (y0 as isize + oy + radius as isize) as usize;
                    let kx = (x0 as isize + ox + radius as isize) as usize;
                    acc[ky * size + kx] += w;
                }
            }
        }
        let total: f64 = acc.iter().sum();
        let taps = acc.iter().map(|&w| (w / total) as f32).collect();
        Ok(Self {
            length,
            angle,
            radius,
            taps,
        })
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0).expect("unit kernel")
    }

    pub fn length(&self) -> f32 {
        self.length
    }

    pub fn angle(&self) -> f32 {
        self.angle
    }

    /// Half-width of the dense tap grid.
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn taps(&self) -> &[f32] {
        &self.taps
    }

    /// Nonzero taps as (dy, dx, weight) offsets from the center.
    pub fn support(&self) -> Vec<(isize, isize, f32)> {
        let size = 2 * self.radius + 1;
        let r = self.radius as isize;
        self.taps
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, &w)| ((i / size) as isize - r, (i % size) as isize - r, w))
            .collect()
    }

    /// Mask dilation radius guaranteed to cover the kernel's footprint.
    pub fn spread(&self) -> usize {
        (self.length / 2.0).ceil() as usize
    }

    /// Zero-extended convolution: `out(p) = Σ k(d)·img(p − d)`.
    pub fn convolve(&self, img: &Image) -> Image {
        let (h, w) = (img.height() as isize, img.width() as isize);
        let support = self.support();
        let mut out = Image::zeros(img.height(), img.width(), img.channels());
        for c in 0..img.channels() {
            let src = img.plane(c);
            let dst = out.plane_mut(c);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0f64;
                    for &(dy, dx, k) in &support {
                        let (sy, sx) = (y - dy, x - dx);
                        if sy >= 0 && sy < h && sx >= 0 && sx < w {
                            acc += k as f64 * src[(sy * w + sx) as usize] as f64;
                        }
                    }
                    dst[(y * w + x) as usize] = acc as f32;
                }
            }
        }
        out
    }
}
