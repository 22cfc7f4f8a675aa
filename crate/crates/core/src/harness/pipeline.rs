use std::path::{Path, PathBuf};
use std::time::Instant;

use imgcore::io::write_png;
use imgcore::Image;
use rayon::prelude::*;

use super::config::{MaskSource, PipelineConfig};
use super::metrics::{complement, psnr, region_nonempty, ssim};
use super::report::{EvalReport, RecordFailure, RecordReport, Timing};
use crate::bgf::masked_guided_filter;
use crate::clbdm::{assemble_confidence_map, detect_patches, mask_metrics, DetectorConfig, DetectorNet};
use crate::datagen::{DatasetManifest, Sample};
use crate::diffsandbox::{load_model, refine, DiffusionModel, DiffusionSchedule};
use crate::error::{invalid, Result};

/// Intermediate and final images of one record.
#[derive(Clone, Debug)]
pub struct RecordOutput {
    /// Soft detector confidence; absent for non-detected masks.
    pub confidence: Option<Image>,
    pub mask: Image,
    pub restored: Image,
    pub output: Image,
}

/// Loaded checkpoints plus the configuration that drives them.
pub struct Pipeline {
    pub config: PipelineConfig,
    detector: Option<(DetectorNet, DetectorConfig)>,
    diffusion: Option<(DiffusionModel, DiffusionSchedule)>,
}

/// Per-record refinement seed: a fixed mix of the run seed and the record's
/// position, so results do not depend on scheduling.
fn record_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl Pipeline {
    pub fn load(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let detector = match (&config.detector, config.mask_source) {
            (Some(path), MaskSource::Detected) => {
                let (net, mut cfg) = DetectorNet::load(path)?;
                if cfg.patch_size != config.patch_size {
                    return Err(invalid(format!(
                        "detector uses patch size {}, config asks for {}",
                        cfg.patch_size, config.patch_size
                    )));
                }
                cfg.threshold = config.threshold;
                Some((net, cfg))
            }
            _ => None,
        };
        let diffusion = config.diffusion.as_ref().map(load_model).transpose()?;
        Ok(Self {
            config: config.clone(),
            detector,
            diffusion,
        })
    }

    /// Builds a pipeline from in-memory models.
    pub fn from_parts(
        config: PipelineConfig,
        detector: Option<(DetectorNet, DetectorConfig)>,
        diffusion: Option<(DiffusionModel, DiffusionSchedule)>,
    ) -> Result<Self> {
        config.filter().validate()?;
        if config.mask_source == MaskSource::Detected && detector.is_none() {
            return Err(invalid("a detector is required for detected masks"));
        }
        Ok(Self {
            config,
            detector,
            diffusion,
        })
    }

    /// Detect, binarize, filter and refine one record.
    pub fn process(&self, sample: &Sample, index: usize) -> Result<RecordOutput> {
        let cfg = &self.config;
        let b = &sample.blurred;
        let (confidence, mask) = match cfg.mask_source {
            MaskSource::Detected => {
                let (net, dcfg) = self.detector.as_ref().ok_or_else(|| invalid("no detector loaded"))?;
                let pc = detect_patches(b, dcfg, net)?;
                let map = assemble_confidence_map(&pc.values, &pc.grid)?;
                let mask = map.binary(cfg.threshold)?;
                (Some(map.soft), mask)
            }
            MaskSource::GroundTruth => (None, sample.mask.clone()),
            MaskSource::Empty => (None, Image::zeros(b.height(), b.width(), 1)),
        };
        let restored = masked_guided_filter(b, &sample.reference, &mask, &cfg.filter())?;
        let output = match &self.diffusion {
            Some((model, schedule)) if region_nonempty(&mask) => {
                let mut rc = cfg.refine();
                rc.seed = record_seed(cfg.seed, index);
                refine(model, schedule, &restored, &sample.reference, &mask, b, &rc)?
            }
            _ => restored.clone(),
        };
        Ok(RecordOutput {
            confidence,
            mask,
            restored,
            output,
        })
    }

    /// Metrics of one processed record against its ground truth.
    pub fn score(sample: &Sample, out: &RecordOutput) -> Result<RecordReport> {
        let gt = &sample.mask;
        let clear = complement(gt);
        let masked_region = region_nonempty(gt).then_some(gt);
        let clear_region = region_nonempty(&clear).then_some(&clear);
        let pm = mask_metrics(&out.mask, gt)?;
        Ok(RecordReport {
            id: sample.id.clone(),
            psnr: psnr(&out.output, &sample.sharp, None)?,
            psnr_masked: masked_region.map(|r| psnr(&out.output, &sample.sharp, Some(r))).transpose()?,
            psnr_clear: clear_region.map(|r| psnr(&out.output, &sample.sharp, Some(r))).transpose()?,
            ssim: ssim(&out.output, &sample.sharp)?,
            input_psnr: psnr(&sample.blurred, &sample.sharp, None)?,
            input_psnr_masked: masked_region.map(|r| psnr(&sample.blurred, &sample.sharp, Some(r))).transpose()?,
            mask_acc: pm.acc,
            mask_miou: pm.miou,
        })
    }

    fn write_outputs(dir: &Path, id: &str, out: &RecordOutput) -> Result<()> {
        if let Some(c) = &out.confidence {
            write_png(c, dir.join(format!("{id}_confidence.png")))?;
        }
        write_png(&out.mask, dir.join(format!("{id}_mask.png")))?;
        write_png(&out.restored, dir.join(format!("{id}_restored.png")))?;
        write_png(&out.output, dir.join(format!("{id}_output.png")))?;
        Ok(())
    }

    /// Runs every selected record in parallel. A failing record is logged and
    /// listed in the report; the others continue.
    pub fn evaluate(&self, manifest: &DatasetManifest, out_dir: Option<&Path>) -> Result<EvalReport> {
        let start = Instant::now();
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
        }
        let records: Vec<_> = manifest
            .split(self.config.split)
            .take(self.config.max_records.unwrap_or(usize::MAX))
            .collect();
        let results: Vec<Result<RecordReport>> = records
            .par_iter()
            .enumerate()
            .map(|(i, rec)| {
                let run = || -> Result<RecordReport> {
                    let sample = manifest.load_sample(rec)?;
                    let out = self.process(&sample, i)?;
                    if let Some(dir) = out_dir {
                        Self::write_outputs(dir, &rec.id, &out)?;
                    }
                    Self::score(&sample, &out)
                };
                run().map_err(|e| e.in_record(&rec.id))
            })
            .collect();
        let mut reports = Vec::new();
        let mut failures = Vec::new();
        for (rec, res) in records.iter().zip(results) {
            match res {
                Ok(r) => reports.push(r),
                Err(e) => {
                    log::error!("{e}");
                    failures.push(RecordFailure {
                        id: rec.id.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        let timing = Timing {
            total_seconds: start.elapsed().as_secs_f64(),
        };
        Ok(EvalReport::new(self.config.clone(), reports, failures, timing))
    }
}

/// Loads the configured checkpoints and evaluates `manifest`. Images go to
/// `out_dir` when given.
pub fn run_pipeline(cfg: &PipelineConfig, manifest: &DatasetManifest, out_dir: Option<&Path>) -> Result<EvalReport> {
    Pipeline::load(cfg)?.evaluate(manifest, out_dir)
}

/// Default location of a report inside an output directory.
pub fn report_path(out_dir: &Path) -> PathBuf {
    out_dir.join("report.json")
}
