//! Local motion deblurring guided by a short-exposure companion image.
//!
//! The pipeline detects blurry patches, restores them with a mask-gated
//! guided filter driven by the short exposure, and optionally refines the
//! result with a small denoising diffusion model whose encoder features are
//! fused with short-exposure features through masked attention.

pub mod bgf;
pub mod clbdm;
pub mod datagen;
pub mod diffsandbox;
pub mod expbfusion;
pub mod harness;
mod error;

pub use error::{Error, Result};
