use crate::image::Image;

/// Summed-area table with one (h+1)×(w+1) plane of f64 accumulators per
/// channel. Row 0 and column 0 are zero.
#[derive(Clone, Debug)]
pub struct IntegralImage {
    height: usize,
    width: usize,
    channels: usize,
    sums: Vec<f64>,
}

impl IntegralImage {
    pub fn new(img: &Image) -> Self {
        let (h, w) = (img.height(), img.width());
        let stride = (h + 1) * (w + 1);
        let mut sums = vec![0.0; stride * img.channels()];
        for c in 0..img.channels() {
            let plane = img.plane(c);
            accumulate(
                plane.iter().map(|&v| v as f64),
                h,
                w,
                &mut sums[c * stride..(c + 1) * stride],
            );
        }
        Self {
            height: h,
            width: w,
            channels: img.channels(),
            sums,
        }
    }

    pub fn from_plane(plane: &[f64], height: usize, width: usize) -> Self {
        assert_eq!(plane.len(), height * width);
        let mut sums = vec![0.0; (height + 1) * (width + 1)];
        accumulate(plane.iter().copied(), height, width, &mut sums);
        Self {
            height,
            width,
            channels: 1,
            sums,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Sum over rows `y0..y1` and columns `x0..x1` (half-open) of channel `c`.
    #[inline]
    pub fn rect_sum(&self, c: usize, y0: usize, x0: usize, y1: usize, x1: usize) -> f64 {
        let stride = self.width + 1;
        let base = c * (self.height + 1) * stride;
        let s = &self.sums[base..];
        s[y1 * stride + x1] - s[y0 * stride + x1] - s[y1 * stride + x0] + s[y0 * stride + x0]
    }
}

fn accumulate(values: impl Iterator<Item = f64>, h: usize, w: usize, out: &mut [f64]) {
    let stride = w + 1;
    let mut values = values;
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += values.next().expect("plane shorter than h*w");
            out[(y + 1) * stride + x + 1] = out[y * stride + x + 1] + row;
        }
    }
}

#[inline]
fn window_bounds(i: usize, n: usize, radius: usize) -> (usize, usize) {
    (i.saturating_sub(radius), (i + radius + 1).min(n))
}

/// Sums of a single f64 plane over (2r+1)² windows clipped at the borders.
/// Runtime does not depend on `radius`.
pub fn box_sum_f64(plane: &[f64], height: usize, width: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return plane.to_vec();
    }
    let table = IntegralImage::from_plane(plane, height, width);
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let (y0, y1) = window_bounds(y, height, radius);
        for x in 0..width {
            let (x0, x1) = window_bounds(x, width, radius);
            out.push(table.rect_sum(0, y0, x0, y1, x1));
        }
    }
    out
}

/// Number of pixels inside each clipped window.
pub fn window_counts(height: usize, width: usize, radius: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let (y0, y1) = window_bounds(y, height, radius);
        for x in 0..width {
            let (x0, x1) = window_bounds(x, width, radius);
            out.push(((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}

/// Per-channel window sums over clipped (2r+1)² windows. Radius 0 returns
/// the input unchanged.
pub fn box_sum(img: &Image, radius: usize) -> Image {
    if radius == 0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let table = IntegralImage::new(img);
    let mut out = Image::zeros(h, w, img.channels());
    for c in 0..img.channels() {
        let dst = out.plane_mut(c);
        for y in 0..h {
            let (y0, y1) = window_bounds(y, h, radius);
            for x in 0..w {
                let (x0, x1) = window_bounds(x, w, radius);
                dst[y * w + x] = table.rect_sum(c, y0, x0, y1, x1) as f32;
            }
        }
    }
    out
}
