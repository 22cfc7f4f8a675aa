//! Toy conditional diffusion model: a small U-Net whose encoder features are
//! fused with a reference encoder's features under the blur mask, trained on
//! noise prediction and used to refine restored images.

mod checkpoint;
mod sample;
mod schedule;
mod train;
mod unet;

pub use checkpoint::{load_model, save_model};
pub use sample::{refine, sample, RefineConfig};
pub use schedule::{forward_noise, DiffusionSchedule, DEFAULT_STEPS, REFERENCE_BETA};
pub use train::{
    denoising_loss, denoising_loss_graph, draw_noise, train_diffusion, DiffusionBatch, DiffusionTrainConfig,
    DiffusionTrainer,
};
pub use unet::{
    images_to_tensor, tensor_to_images, timestep_embedding, BoundModel, DiffusionModel, RefEncoder, ToyUNet,
    UNetConfig, IMAGE_CHANNELS, SIZE_MULTIPLE,
};
