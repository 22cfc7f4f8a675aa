//! Numeric image substrate: planar float rasters, HSV conversion, reflective
//! patch grids, nearest resampling and summed-area window sums.
//!
//! Every operation is a pure function of its inputs.

mod color;
mod error;
mod image;
mod integral;
pub mod io;
mod patch;
mod resize;

pub use crate::color::{hsv_to_rgb, rgb_to_hsv};
pub use crate::error::{ImgError, Result};
pub use crate::image::Image;
pub use crate::integral::{box_sum, box_sum_f64, window_counts, IntegralImage};
pub use crate::patch::{fold, reflect_index, unfold, PatchGrid};
pub use crate::resize::nearest_resize;
