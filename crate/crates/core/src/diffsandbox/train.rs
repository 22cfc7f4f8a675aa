use gradcore::{AdamW, Graph, Tensor, Var};
use imgcore::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{forward_noise, DiffusionSchedule};
use super::unet::{images_to_tensor, BoundModel, DiffusionModel};
use crate::datagen::Sample;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Side of the square training crops.
    pub crop: usize,
    /// Fraction of crops centred on a masked pixel.
    pub mask_focus: f64,
    pub seed: u64,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 0.0,
            crop: 32,
            mask_focus: 0.75,
            seed: 0,
        }
    }
}

/// Aligned sharp targets, reference crops and one-channel masks, all in [0, 1].
#[derive(Clone, Debug, Default)]
pub struct DiffusionBatch {
    pub target: Vec<Image>,
    pub reference: Vec<Image>,
    pub mask: Vec<Image>,
}

impl DiffusionBatch {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(invalid("empty diffusion batch"));
        }
        if self.reference.len() != self.len() || self.mask.len() != self.len() {
            return Err(invalid("batch fields have different lengths"));
        }
        for ((t, r), m) in self.target.iter().zip(&self.reference).zip(&self.mask) {
            t.ensure_same_size(r)?;
            t.ensure_same_size(m)?;
            m.ensure_channels(1)?;
        }
        Ok(())
    }

    /// Random crops from `samples` using the ground-truth masks.
    pub fn random_crops(samples: &[Sample], count: usize, crop: usize, mask_focus: f64, rng: &mut impl Rng) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("no samples to crop from"));
        }
        let mut batch = Self::default();
        for _ in 0..count {
            let s = &samples[rng.gen_range(0..samples.len())];
            let (h, w) = (s.sharp.height(), s.sharp.width());
            if h < crop || w < crop {
                return Err(invalid(format!("{h}x{w} sample is smaller than a {crop} crop")));
            }
            let masked: Vec<usize> = (0..h * w).filter(|&i| s.mask.data()[i] > 0.5).collect();
            let (cy, cx) = if !masked.is_empty() && rng.gen::<f64>() < mask_focus {
                let i = masked[rng.gen_range(0..masked.len())];
                (i / w, i % w)
            } else {
                (rng.gen_range(0..h), rng.gen_range(0..w))
            };
            let y0 = cy.saturating_sub(crop / 2).min(h - crop);
            let x0 = cx.saturating_sub(crop / 2).min(w - crop);
            batch.target.push(s.sharp.crop(y0, x0, crop, crop)?);
            batch.reference.push(s.reference.crop(y0, x0, crop, crop)?);
            batch.mask.push(s.mask.crop(y0, x0, crop, crop)?);
        }
        Ok(batch)
    }
}

/// Builds the noise-prediction MSE for `batch` with the given timesteps and
/// noise (B×3×h×w).
pub fn denoising_loss_graph(
    g: &mut Graph,
    model: &DiffusionModel,
    bound: &BoundModel,
    schedule: &DiffusionSchedule,
    batch: &DiffusionBatch,
    ts: &[usize],
    noise: &Tensor,
) -> Result<Var> {
    batch.validate()?;
    if ts.len() != batch.len() {
        return Err(invalid(format!("{} timesteps for {} samples", ts.len(), batch.len())));
    }
    let x0 = images_to_tensor(&batch.target.iter().collect::<Vec<_>>())?;
    if noise.shape() != x0.shape() {
        return Err(invalid(format!("noise {:?} vs batch {:?}", noise.shape(), x0.shape())));
    }
    let per = x0.numel() / batch.len();
    let mut xt = Vec::with_capacity(x0.numel());
    for (i, &t) in ts.iter().enumerate() {
        let range = i * per..(i + 1) * per;
        let a = Tensor::new(vec![per], x0.data()[range.clone()].to_vec())?;
        let n = Tensor::new(vec![per], noise.data()[range].to_vec())?;
        xt.extend(forward_noise(&a, t, &n, schedule)?.into_data());
    }
    let x_t = g.constant(Tensor::new(x0.shape(), xt)?);
    let r = g.constant(images_to_tensor(&batch.reference.iter().collect::<Vec<_>>())?);
    let pred = model.predict_noise(g, bound, x_t, ts, r, &batch.mask)?;
    let target = g.constant(noise.clone());
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean(sq))
}

/// Loss value without gradients.
pub fn denoising_loss(
    model: &DiffusionModel,
    schedule: &DiffusionSchedule,
    batch: &DiffusionBatch,
    ts: &[usize],
    noise: &Tensor,
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let loss = denoising_loss_graph(&mut g, model, &bound, schedule, batch, ts, noise)?;
    Ok(g.value(loss).item())
}

/// Uniform timesteps in `1..=T` and standard normal noise shaped like `batch`.
pub fn draw_noise(schedule: &DiffusionSchedule, batch: &DiffusionBatch, rng: &mut impl Rng) -> Result<(Vec<usize>, Tensor)> {
    batch.validate()?;
    let ts: Vec<usize> = (0..batch.len()).map(|_| rng.gen_range(1..=schedule.steps())).collect();
    let t = &batch.target[0];
    let noise = Tensor::randn(vec![batch.len(), t.channels(), t.height(), t.width()], 1.0, rng);
    Ok((ts, noise))
}

/// AdamW over the U-Net, reference encoder and fusion parameters together.
pub struct DiffusionTrainer {
    pub model: DiffusionModel,
    pub schedule: DiffusionSchedule,
    optimizers: [AdamW; 3],
    rng: ChaCha8Rng,
    steps: usize,
}

impl DiffusionTrainer {
    pub fn new(model: DiffusionModel, schedule: DiffusionSchedule, lr: f64, weight_decay: f64, seed: u64) -> Self {
        let opt = || AdamW::new(lr).with_weight_decay(weight_decay);
        Self {
            model,
            schedule,
            optimizers: [opt(), opt(), opt()],
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One optimizer step on `batch` with fresh timesteps and noise; returns
    /// the loss before the update.
    pub fn train_step(&mut self, batch: &DiffusionBatch) -> Result<f64> {
        let (ts, noise) = draw_noise(&self.schedule, batch, &mut self.rng)?;
        let mut g = Graph::new();
        let bound = self.model.bind(&mut g, true);
        let loss = denoising_loss_graph(&mut g, &self.model, &bound, &self.schedule, batch, &ts, &noise)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged(format!("step {}: loss is {value}", self.steps)));
        }
        let grads = g.backward(loss)?;
        let [gu, gr, gf] = bound.gradients(&g, &grads);
        let step = self.steps;
        let [ou, or, of] = &mut self.optimizers;
        ou.step(&mut self.model.unet.params, &gu).map_err(|e| Error::at_step(e, step))?;
        or.step(&mut self.model.reference.params, &gr).map_err(|e| Error::at_step(e, step))?;
        of.step(&mut self.model.fusion.store, &gf).map_err(|e| Error::at_step(e, step))?;
        self.steps += 1;
        Ok(value)
    }

    pub fn into_model(self) -> DiffusionModel {
        self.model
    }
}

/// Trains on random crops of `samples`, drawing a new batch every step.
/// Returns the model and the per-step losses.
pub fn train_diffusion(
    model: DiffusionModel,
    schedule: DiffusionSchedule,
    samples: &[Sample],
    cfg: &DiffusionTrainConfig,
) -> Result<(DiffusionModel, Vec<f64>)> {
    if cfg.batch_size == 0 {
        return Err(invalid("batch size must be positive"));
    }
    let mut crops = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trainer = DiffusionTrainer::new(model, schedule, cfg.lr, cfg.weight_decay, cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = DiffusionBatch::random_crops(samples, cfg.batch_size, cfg.crop, cfg.mask_focus, &mut crops)?;
        let loss = trainer.train_step(&batch)?;
        if step % 50 == 0 || step + 1 == cfg.steps {
            log::info!("diffusion step {step}: loss {loss:.4}");
        }
        losses.push(loss);
    }
    Ok((trainer.into_model(), losses))
}
