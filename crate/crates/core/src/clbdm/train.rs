use gradcore::{AdamW, Graph, Tensor};
use imgcore::{unfold, Image, PatchGrid};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::confidence::patch_labels;
use super::gumbel::{gumbel_softmax, gumbel_softmax_graph, GumbelSample};
use super::loss::{ce_loss, ce_loss_graph};
use super::metrics::patch_accuracy;
use super::net::{DetectorConfig, DetectorNet, BLUR_CLASS};
use crate::datagen::{DatasetManifest, Sample, Split};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stops after this many optimizer steps when set.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            max_steps: None,
            batch_size: 32,
            lr: 2e-3,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    /// Mean loss of the noisy training batches.
    pub train_loss: f64,
    /// Noise-free loss over all training patches after the epoch.
    pub clean_loss: f64,
    pub clean_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub initial_clean_loss: f64,
    pub initial_clean_acc: f64,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn final_clean_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_clean_loss, |e| e.clean_loss)
    }
}

/// Training patches and their majority-vote labels.
#[derive(Clone, Debug, Default)]
pub struct PatchSet {
    pub patches: Vec<Image>,
    pub labels: Vec<f64>,
}

impl PatchSet {
    pub fn from_samples(samples: &[Sample], patch_size: usize) -> Result<Self> {
        let mut set = Self::default();
        for s in samples {
            let grid = PatchGrid::for_image(&s.blurred, patch_size)?;
            set.labels.extend(patch_labels(&s.mask, &grid)?);
            set.patches.extend(unfold(&s.blurred, &grid)?);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

fn clean_eval(net: &DetectorNet, set: &PatchSet, tau: f64) -> Result<(f64, f64)> {
    let zero = GumbelSample::zeros();
    let values: Vec<f64> = net
        .logits(&set.patches)?
        .into_iter()
        .map(|l| Ok(gumbel_softmax(l, tau, &zero)?[BLUR_CLASS]))
        .collect::<Result<_>>()?;
    Ok((ce_loss(&values, &set.labels)?, patch_accuracy(&values, &set.labels, 0.5)?))
}

/// Trains on the train split of `manifest`.
pub fn train_detector(manifest: &DatasetManifest, cfg: &DetectorConfig, train: &TrainConfig) -> Result<(DetectorNet, TrainLog)> {
    let samples = manifest.load_split(Split::Train)?;
    if samples.is_empty() {
        return Err(invalid("manifest has no training records"));
    }
    train_on_patches(&PatchSet::from_samples(&samples, cfg.patch_size)?, cfg, train)
}

/// Minibatch AdamW on the Gumbel-Softmax cross-entropy. Gumbel noise is drawn
/// fresh for every patch of every step; evaluation is noise-free. The run is
/// fully determined by `cfg.seed`.
pub fn train_on_patches(set: &PatchSet, cfg: &DetectorConfig, train: &TrainConfig) -> Result<(DetectorNet, TrainLog)> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(invalid("no training patches"));
    }
    if train.batch_size == 0 {
        return Err(invalid("batch size must be positive"));
    }
    let mut net = DetectorNet::new(cfg.channels, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut opt = AdamW::new(train.lr).with_weight_decay(train.weight_decay);
    let (loss0, acc0) = clean_eval(&net, set, cfg.tau)?;
    let mut log = TrainLog {
        initial_clean_loss: loss0,
        initial_clean_acc: acc0,
        epochs: Vec::new(),
    };
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut steps = 0usize;
    'epochs: for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(train.batch_size) {
            if train.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let refs: Vec<&Image> = chunk.iter().map(|&i| &set.patches[i]).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| set.labels[i]).collect();
            let noise: Vec<f64> = (0..chunk.len()).flat_map(|_| GumbelSample::draw(&mut rng).noise).collect();

            let mut g = Graph::new();
            let bound = net.params().bind(&mut g);
            let x = g.constant(net.batch_tensor(&refs)?);
            let logits = net.forward(&mut g, &bound, x)?;
            let probs = gumbel_softmax_graph(&mut g, logits, &Tensor::new(vec![chunk.len(), 2], noise)?, cfg.tau)?;
            let v = g.slice(probs, 1, BLUR_CLASS, 1)?;
            let v = g.reshape(v, &[chunk.len()])?;
            let loss = ce_loss_graph(&mut g, v, &targets)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged(format!("step {steps}: loss is {value}")));
            }
            let grads = g.backward(loss)?;
            let grads = bound.gradients(&g, &grads);
            opt.step(net.params_mut(), &grads).map_err(|e| Error::at_step(e, steps))?;
            loss_sum += value;
            batches += 1;
            steps += 1;
        }
        if batches == 0 {
            break 'epochs;
        }
        let (clean_loss, clean_acc) = clean_eval(&net, set, cfg.tau)?;
        log::info!(
            "epoch {epoch}: train loss {:.4}, clean loss {clean_loss:.4}, acc {clean_acc:.4}",
            loss_sum / batches as f64
        );
        log.epochs.push(EpochLog {
            epoch,
            steps,
            train_loss: loss_sum / batches as f64,
            clean_loss,
            clean_acc,
        });
    }
    Ok((net, log))
}
