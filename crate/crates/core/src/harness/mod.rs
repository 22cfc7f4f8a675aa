//! Metrics, end-to-end evaluation, reports and benchmarks.

mod bench;
mod config;
mod metrics;
mod pipeline;
mod report;

pub use bench::{bench, BenchConfig, BenchRow, BenchTable};
pub use config::{MaskSource, PipelineConfig};
pub use metrics::{complement, mse, psnr, region_nonempty, ssim, PSNR_CAP, SSIM_C1, SSIM_C2, SSIM_WINDOW};
pub use pipeline::{report_path, run_pipeline, Pipeline, RecordOutput};
pub use report::{
    build_version, Aggregate, EvalReport, RecordFailure, RecordReport, Timing, REPORT_SCHEMA_VERSION,
};
