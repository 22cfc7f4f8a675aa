use crate::error::{ImgError, Result};
use crate::image::Image;

/// Mirror index without edge repetition (`dcb|abcd|cba`), valid for any
/// overshoot.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Non-overlapping tiling of an image after reflection padding to a multiple
/// of the patch size. Padding is split evenly, the extra pixel going to the
/// bottom/right side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub pad_bottom: usize,
    pub pad_right: usize,
    pub source_h: usize,
    pub source_w: usize,
}

impl PatchGrid {
    pub fn new(source_h: usize, source_w: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 || source_h == 0 || source_w == 0 {
            return Err(ImgError::InvalidDimensions(format!(
                "patch grid for {source_h}x{source_w} with patch {patch_size}"
            )));
        }
        let pad_h = (patch_size - source_h % patch_size) % patch_size;
        let pad_w = (patch_size - source_w % patch_size) % patch_size;
        Ok(Self {
            patch_size,
            grid_rows: (source_h + pad_h) / patch_size,
            grid_cols: (source_w + pad_w) / patch_size,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            pad_bottom: pad_h - pad_h / 2,
            pad_right: pad_w - pad_w / 2,
            source_h,
            source_w,
        })
    }

    pub fn for_image(img: &Image, patch_size: usize) -> Result<Self> {
        Self::new(img.height(), img.width(), patch_size)
    }

    pub fn len(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn padded_h(&self) -> usize {
        self.source_h + self.pad_top + self.pad_bottom
    }

    pub fn padded_w(&self) -> usize {
        self.source_w + self.pad_left + self.pad_right
    }

    /// Top-left corner of patch `index` in padded coordinates.
    pub fn patch_origin(&self, index: usize) -> (usize, usize) {
        let (row, col) = (index / self.grid_cols, index % self.grid_cols);
        (row * self.patch_size, col * self.patch_size)
    }

    /// Index of the patch covering source pixel (`y`, `x`).
    pub fn patch_at(&self, y: usize, x: usize) -> usize {
        let row = (y + self.pad_top) / self.patch_size;
        let col = (x + self.pad_left) / self.patch_size;
        row * self.grid_cols + col
    }

    fn check(&self, img: &Image) -> Result<()> {
        if img.height() != self.source_h || img.width() != self.source_w {
            return Err(ImgError::GridMismatch(format!(
                "grid built for {}x{}, image is {}x{}",
                self.source_h,
                self.source_w,
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    /// Reflection-pads `img` to the grid's padded size.
    pub fn pad(&self, img: &Image) -> Result<Image> {
        self.check(img)?;
        let (t, l) = (self.pad_top as isize, self.pad_left as isize);
        Ok(Image::from_fn(
            self.padded_h(),
            self.padded_w(),
            img.channels(),
            |y, x, c| {
                let sy = reflect_index(y as isize - t, self.source_h);
                let sx = reflect_index(x as isize - l, self.source_w);
                img.get(sy, sx, c)
            },
        ))
    }

    /// Removes the padding from a padded-size image.
    pub fn crop(&self, padded: &Image) -> Result<Image> {
        if padded.height() != self.padded_h() || padded.width() != self.padded_w() {
            return Err(ImgError::GridMismatch(format!(
                "expected padded {}x{}, got {}x{}",
                self.padded_h(),
                self.padded_w(),
                padded.height(),
                padded.width()
            )));
        }
        padded.crop(self.pad_top, self.pad_left, self.source_h, self.source_w)
    }
}

/// Splits `img` into row-major patches of the grid.
pub fn unfold(img: &Image, grid: &PatchGrid) -> Result<Vec<Image>> {
    let padded = grid.pad(img)?;
    (0..grid.len())
        .map(|i| {
            let (y0, x0) = grid.patch_origin(i);
            padded.crop(y0, x0, grid.patch_size, grid.patch_size)
        })
        .collect()
}

/// Reassembles patches and crops back to the source size.
pub fn fold(patches: &[Image], grid: &PatchGrid) -> Result<Image> {
    if patches.len() != grid.len() {
        return Err(ImgError::GridMismatch(format!(
            "{} patches for a grid of {}",
            patches.len(),
            grid.len()
        )));
    }
    let channels = patches.first().map_or(1, Image::channels);
    let mut canvas = Image::zeros(grid.padded_h(), grid.padded_w(), channels);
    for (i, p) in patches.iter().enumerate() {
        if p.height() != grid.patch_size || p.width() != grid.patch_size || p.channels() != channels
        {
            return Err(ImgError::GridMismatch(format!(
                "patch {i} is {}x{}x{}",
                p.height(),
                p.width(),
                p.channels()
            )));
        }
        let (y0, x0) = grid.patch_origin(i);
        canvas.paste(p, y0, x0)?;
    }
    grid.crop(&canvas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize, c: usize) -> Image {
        Image::from_fn(h, w, c, |y, x, ch| ((y * w + x) * c + ch) as f32 / (h * w * c) as f32)
    }

    #[test]
    fn reflect_wraps() {
        let idx: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn divisible_grid_has_no_padding() {
        let img = ramp(120, 120, 3);
        let grid = PatchGrid::for_image(&img, 60).unwrap();
        let patches = unfold(&img, &grid).unwrap();
        assert_eq!(patches.len(), 4);
        assert_eq!(fold(&patches, &grid).unwrap(), img);
    }

    #[test]
    fn non_divisible_grid_is_padded() {
        let img = ramp(128, 128, 1);
        let grid = PatchGrid::for_image(&img, 60).unwrap();
        assert_eq!((grid.padded_h(), grid.padded_w()), (180, 180));
        assert_eq!(grid.len(), 9);
        assert_eq!((grid.pad_top, grid.pad_bottom), (26, 26));
        let patches = unfold(&img, &grid).unwrap();
        assert_eq!(fold(&patches, &grid).unwrap(), img);
    }

    #[test]
    fn tiny_image_larger_padding_than_source() {
        let img = ramp(3, 5, 1);
        let grid = PatchGrid::for_image(&img, 16).unwrap();
        let patches = unfold(&img, &grid).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(fold(&patches, &grid).unwrap(), img);
    }

    #[test]
    fn mismatches_are_reported() {
        let grid = PatchGrid::new(32, 32, 16).unwrap();
        assert!(unfold(&ramp(30, 32, 1), &grid).is_err());
        let patches = unfold(&ramp(32, 32, 1), &grid).unwrap();
        assert!(fold(&patches[..3], &grid).is_err());
    }

    #[test]
    fn patch_at_inverts_origin() {
        let grid = PatchGrid::new(50, 70, 16).unwrap();
        for i in 0..grid.len() {
            let (y0, x0) = grid.patch_origin(i);
            let (y, x) = (y0 + 3, x0 + 5);
            if y >= grid.pad_top
                && x >= grid.pad_left
                && y - grid.pad_top < 50
                && x - grid.pad_left < 70
            {
                assert_eq!(grid.patch_at(y - grid.pad_top, x - grid.pad_left), i);
            }
        }
    }

    proptest! {
        #[test]
        fn fold_unfold_identity(h in 1usize..70, w in 1usize..70, p in 1usize..24, c in 1usize..=3) {
            let img = ramp(h, w, c);
            let grid = PatchGrid::for_image(&img, p).unwrap();
            let back = fold(&unfold(&img, &grid).unwrap(), &grid).unwrap();
            prop_assert_eq!(back, img);
        }
    }
}
