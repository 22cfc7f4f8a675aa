//! Patch-level blur detection.
//!
//! The blurry image is cut into non-overlapping patches; a small CNN maps
//! each patch to two class logits, and the Gumbel-Softmax blur probability
//! becomes that patch's confidence. Broadcasting the confidences back over
//! the patch footprints gives the pixel-level confidence map, which is
//! thresholded into the restoration mask.

mod confidence;
mod gumbel;
mod loss;
mod metrics;
mod net;
mod train;

pub use confidence::{assemble_confidence_map, binarize, detect_patches, patch_labels, ConfidenceMap, PatchConfidences};
pub use gumbel::{gumbel_softmax, gumbel_softmax_graph, GumbelSample, UNIFORM_CLAMP};
pub use loss::{ce_loss, ce_loss_graph, PROB_CLAMP};
pub use metrics::{
    gradient_energy, mask_metrics, patch_accuracy, score_detection, Confusion, DetectionScore,
    GradientEnergyBaseline, MaskMetrics,
};
pub use net::{DetectorConfig, DetectorNet, BLUR_CLASS};
pub use train::{train_detector, train_on_patches, EpochLog, PatchSet, TrainConfig, TrainLog};
