use imgcore::{Image, IntegralImage};

use crate::error::{invalid, Result};

/// PSNR reported for identical inputs (and the ceiling for near-identical ones).
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Pixels with region value ≥ 0.5 belong to the region.
fn in_region(region: Option<&Image>, i: usize) -> bool {
    region.map_or(true, |r| r.data()[i] >= 0.5)
}

fn check_pair(a: &Image, b: &Image, region: Option<&Image>) -> Result<()> {
    a.ensure_same_size(b)?;
    a.ensure_channels(b.channels())?;
    if let Some(r) = region {
        a.ensure_same_size(r)?;
        r.ensure_channels(1)?;
    }
    Ok(())
}

/// Mean squared error over all channels of the region's pixels.
pub fn mse(a: &Image, b: &Image, region: Option<&Image>) -> Result<f64> {
    check_pair(a, b, region)?;
    let hw = a.pixel_count();
    let (mut sum, mut count) = (0.0, 0usize);
    for c in 0..a.channels() {
        let (pa, pb) = (a.plane(c), b.plane(c));
        for i in (0..hw).filter(|&i| in_region(region, i)) {
            let d = pa[i] as f64 - pb[i] as f64;
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(invalid("empty metric region"));
    }
    Ok(sum / count as f64)
}

/// `10·log10(1 / MSE)` for [0, 1] data, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image, region: Option<&Image>) -> Result<f64> {
    let e = mse(a, b, region)?;
    Ok(if e == 0.0 { PSNR_CAP } else { (-10.0 * e.log10()).min(PSNR_CAP) })
}

/// Mean SSIM over every 8×8 window (stride 1) of every channel, with
/// uniform weights and population statistics.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b, None)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (mut total, mut windows) = (0.0, 0usize);
    for c in 0..a.channels() {
        let pa: Vec<f64> = a.plane(c).iter().map(|&v| v as f64).collect();
        let pb: Vec<f64> = b.plane(c).iter().map(|&v| v as f64).collect();
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(&pb).map(|(x, y)| f(*x, *y)).collect() };
        let sa = IntegralImage::from_plane(&pa, h, w);
        let sb = IntegralImage::from_plane(&pb, h, w);
        let saa = IntegralImage::from_plane(&prod(&|x, _| x * x), h, w);
        let sbb = IntegralImage::from_plane(&prod(&|_, y| y * y), h, w);
        let sab = IntegralImage::from_plane(&prod(&|x, y| x * y), h, w);
        for y in 0..=h - SSIM_WINDOW {
            for x in 0..=w - SSIM_WINDOW {
                let rect = |s: &IntegralImage| s.rect_sum(0, y, x, y + SSIM_WINDOW, x + SSIM_WINDOW) / n;
                let (ma, mb) = (rect(&sa), rect(&sb));
                let va = rect(&saa) - ma * ma;
                let vb = rect(&sbb) - mb * mb;
                let cov = rect(&sab) - ma * mb;
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                windows += 1;
            }
        }
    }
    Ok(total / windows as f64)
}

/// The complement of a binary region (`1 − (r ≥ 0.5)`).
pub fn complement(region: &Image) -> Image {
    region.map(|v| if v >= 0.5 { 0.0 } else { 1.0 })
}

/// True if any pixel of the region is set.
pub fn region_nonempty(region: &Image) -> bool {
    region.data().iter().any(|&v| v >= 0.5)
}
