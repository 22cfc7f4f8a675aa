use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bgf::{GuideMode, GuidedFilterConfig};
use crate::datagen::Split;
use crate::diffsandbox::RefineConfig;
use crate::error::{invalid, Result};

/// Where the pipeline's blur mask comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// Binarized detector confidence.
    Detected,
    /// The record's ground-truth mask.
    GroundTruth,
    /// An all-zero mask; the output equals the blurry input.
    Empty,
}

/// Evaluation settings, read from a TOML key-value file. Missing keys take
/// their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Detector checkpoint; required when `mask_source` is `detected`.
    pub detector: Option<PathBuf>,
    /// Diffusion checkpoint; refinement is skipped when absent.
    pub diffusion: Option<PathBuf>,
    pub mask_source: MaskSource,
    /// Must equal the detector checkpoint's patch size.
    pub patch_size: usize,
    pub threshold: f64,
    pub radius: usize,
    pub epsilon: f64,
    pub guide: GuideMode,
    pub strength: f64,
    pub tile: usize,
    pub recompose: bool,
    pub seed: u64,
    pub split: Split,
    /// Evaluates only the first records of the split when set.
    pub max_records: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let f = GuidedFilterConfig::default();
        let r = RefineConfig::default();
        Self {
            detector: None,
            diffusion: None,
            mask_source: MaskSource::Detected,
            patch_size: 16,
            threshold: 0.5,
            radius: f.radius,
            epsilon: f.epsilon,
            guide: f.mode,
            strength: r.strength,
            tile: r.tile,
            recompose: r.recompose,
            seed: 0,
            split: Split::Eval,
            max_records: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    /// Parses and validates a config file. Relative checkpoint paths are
    /// resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.detector, &mut cfg.diffusion].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn filter(&self) -> GuidedFilterConfig {
        GuidedFilterConfig {
            radius: self.radius,
            epsilon: self.epsilon,
            mode: self.guide,
        }
    }

    pub fn refine(&self) -> RefineConfig {
        RefineConfig {
            strength: self.strength,
            tile: self.tile,
            recompose: self.recompose,
            seed: self.seed,
        }
    }

    /// Checks parameter ranges and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        self.filter().validate()?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid(format!("threshold {} must lie in (0, 1)", self.threshold)));
        }
        if self.patch_size == 0 {
            return Err(invalid("patch size must be positive"));
        }
        if self.mask_source == MaskSource::Detected && self.detector.is_none() {
            return Err(invalid("a detector checkpoint is required for detected masks"));
        }
        if self.diffusion.is_some() {
            self.refine().start_step(&crate::diffsandbox::DiffusionSchedule::default())?;
        }
        for p in [&self.detector, &self.diffusion].into_iter().flatten() {
            if !p.is_file() {
                return Err(invalid(format!("checkpoint {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}
