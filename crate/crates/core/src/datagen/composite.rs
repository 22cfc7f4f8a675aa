use imgcore::{box_sum, Image};

use super::kernel::MotionKernel;
use crate::error::{invalid, Result};

/// Output of local-blur compositing.
#[derive(Clone, Debug)]
pub struct LocalBlur {
    pub blurred: Image,
    /// Object mask dilated by the kernel spread; 1 marks every pixel the blur
    /// may have touched.
    pub mask_gt: Image,
}

/// Square dilation of a binary mask (any value > 0 counts as set).
pub fn dilate(mask: &Image, radius: usize) -> Image {
    let bin = mask.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    box_sum(&bin, radius).map(|v| if v > 0.5 { 1.0 } else { 0.0 })
}

fn check_mask(sharp: &Image, mask: &Image) -> Result<()> {
    sharp.ensure_same_size(mask)?;
    mask.ensure_channels(1)?;
    if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(invalid("object mask must be binary"));
    }
    Ok(())
}

/// Blurs the moving layer (`mask`·`sharp`) with `kernel` and composites it
/// over `background`. Pixels outside the dilated mask are copied from
/// `sharp` unchanged.
pub fn composite_over_background(
    background: &Image,
    sharp: &Image,
    mask: &Image,
    kernel: &MotionKernel,
    dilation: usize,
) -> Result<LocalBlur> {
    check_mask(sharp, mask)?;
    background.ensure_same_size(sharp)?;
    background.ensure_channels(sharp.channels())?;

    let mut layer = sharp.clone();
    for c in 0..layer.channels() {
        for (v, &m) in layer.plane_mut(c).iter_mut().zip(mask.plane(0)) {
            *v *= m;
        }
    }
    let moved = kernel.convolve(&layer);
    let alpha = kernel.convolve(mask);
    let mask_gt = dilate(mask, dilation.max(kernel.spread()));

    let mut blurred = sharp.clone();
    let n = sharp.pixel_count();
    for c in 0..sharp.channels() {
        let (mv, bg) = (moved.plane(c), background.plane(c));
        let out = blurred.plane_mut(c);
        for i in 0..n {
            if mask_gt.plane(0)[i] > 0.0 {
                let a = alpha.plane(0)[i];
                out[i] = (mv[i] + (1.0 - a) * bg[i]).clamp(0.0, 1.0);
            }
        }
    }
    Ok(LocalBlur { blurred, mask_gt })
}

/// Local blur where the sharp image itself stands in for the background.
pub fn composite_local_blur(sharp: &Image, mask: &Image, kernel: &MotionKernel) -> Result<LocalBlur> {
    composite_over_background(sharp, sharp, mask, kernel, kernel.spread())
}
