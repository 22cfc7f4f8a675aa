//! Synthetic triplets: locally blurred image, short-exposure reference,
//! sharp ground truth and the blur mask.

mod composite;
mod dataset;
mod exposure;
mod kernel;
mod scene;

pub use composite::{composite_local_blur, composite_over_background, dilate, LocalBlur};
pub use dataset::{
    desk_record_specs, generate_dataset, DatasetManifest, ManifestRecord, RecordSpec, Sample,
    Split, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use exposure::{darken, simulate_short_exposure};
pub use kernel::MotionKernel;
pub use scene::{render_scene, Scene, SceneParams, SceneSpec};
