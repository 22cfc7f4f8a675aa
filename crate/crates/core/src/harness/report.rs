use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::error::Result;

/// Bumped whenever the report layout changes.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Version string of this build (`git describe` when available).
pub fn build_version() -> &'static str {
    env!("LMDEBLUR_VERSION")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordReport {
    pub id: String,
    /// Output against the sharp image, whole frame.
    pub psnr: f64,
    /// Inside the ground-truth blur mask; absent when the mask is empty.
    pub psnr_masked: Option<f64>,
    /// Outside the ground-truth blur mask; absent when the mask is full.
    pub psnr_clear: Option<f64>,
    pub ssim: f64,
    /// The blurry input against the sharp image, for reference.
    pub input_psnr: f64,
    pub input_psnr_masked: Option<f64>,
    /// Binary mask used by the pipeline against the ground-truth mask.
    pub mask_acc: f64,
    pub mask_miou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub id: String,
    pub error: String,
}

/// Means of the per-record values; optional fields average the records
/// that have them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub records: usize,
    pub psnr: Option<f64>,
    pub psnr_masked: Option<f64>,
    pub psnr_clear: Option<f64>,
    pub ssim: Option<f64>,
    pub input_psnr: Option<f64>,
    pub input_psnr_masked: Option<f64>,
    pub mask_acc: Option<f64>,
    pub mask_miou: Option<f64>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl Aggregate {
    pub fn from_records(records: &[RecordReport]) -> Self {
        let m = |f: &dyn Fn(&RecordReport) -> Option<f64>| mean(records.iter().map(f));
        Self {
            records: records.len(),
            psnr: m(&|r| Some(r.psnr)),
            psnr_masked: m(&|r| r.psnr_masked),
            psnr_clear: m(&|r| r.psnr_clear),
            ssim: m(&|r| Some(r.ssim)),
            input_psnr: m(&|r| Some(r.input_psnr)),
            input_psnr_masked: m(&|r| r.input_psnr_masked),
            mask_acc: m(&|r| Some(r.mask_acc)),
            mask_miou: m(&|r| Some(r.mask_miou)),
        }
    }
}

/// Wall-clock measurements; the only non-deterministic part of a report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub version: String,
    pub config: PipelineConfig,
    pub records: Vec<RecordReport>,
    pub failures: Vec<RecordFailure>,
    pub aggregate: Aggregate,
    pub timing: Timing,
}

impl EvalReport {
    pub fn new(config: PipelineConfig, records: Vec<RecordReport>, failures: Vec<RecordFailure>, timing: Timing) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            version: build_version().to_string(),
            aggregate: Aggregate::from_records(&records),
            config,
            records,
            failures,
            timing,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON with the timing section zeroed, for reproducibility comparisons.
    pub fn to_json_without_timing(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.timing = Timing::default();
        copy.to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Fixed-width table of per-record values followed by the means.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>8} {:>8} {:>7} {:>9} {:>7} {:>7}",
            "record", "psnr", "masked", "clear", "ssim", "in_masked", "acc", "miou"
        );
        for r in &self.records {
            let _ = writeln!(
                out,
                "{:<12} {:>8.2} {:>8} {:>8} {:>7.4} {:>9} {:>7.4} {:>7.4}",
                r.id,
                r.psnr,
                opt(r.psnr_masked),
                opt(r.psnr_clear),
                r.ssim,
                opt(r.input_psnr_masked),
                r.mask_acc,
                r.mask_miou
            );
        }
        let a = &self.aggregate;
        let four = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>8} {:>8} {:>7} {:>9} {:>7} {:>7}",
            format!("mean ({})", a.records),
            opt(a.psnr),
            opt(a.psnr_masked),
            opt(a.psnr_clear),
            four(a.ssim),
            opt(a.input_psnr_masked),
            four(a.mask_acc),
            four(a.mask_miou)
        );
        for f in &self.failures {
            let _ = writeln!(out, "FAILED {}: {}", f.id, f.error);
        }
        out
    }
}
