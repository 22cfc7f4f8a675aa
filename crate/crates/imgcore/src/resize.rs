use crate::error::{ImgError, Result};
use crate::image::Image;

/// Nearest-neighbour resampling: `out(y, x) = in(⌊y·in_h/out_h⌋, ⌊x·in_w/out_w⌋)`.
/// Never produces a value that is absent from the input.
pub fn nearest_resize(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(ImgError::InvalidDimensions(format!(
            "resize target {out_h}x{out_w}"
        )));
    }
    let (in_h, in_w) = (img.height(), img.width());
    let rows: Vec<usize> = (0..out_h).map(|y| y * in_h / out_h).collect();
    let cols: Vec<usize> = (0..out_w).map(|x| x * in_w / out_w).collect();
    Ok(Image::from_fn(out_h, out_w, img.channels(), |y, x, c| {
        img.get(rows[y], cols[x], c)
    }))
}
