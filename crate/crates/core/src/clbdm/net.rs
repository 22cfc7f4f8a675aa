use std::path::Path;

use gradcore::{load_checkpoint, save_checkpoint, BoundParams, Graph, ParamStore, Tensor, Var};
use imgcore::Image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gumbel::check_tau;
use crate::error::{invalid, Result};

/// Index of the blur class in the two-logit head.
pub const BLUR_CLASS: usize = 1;

const INFER_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub patch_size: usize,
    pub tau: f64,
    pub threshold: f64,
    pub channels: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            tau: 1.0,
            threshold: 0.5,
            channels: 3,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid(format!("threshold {} must lie in (0, 1)", self.threshold)));
        }
        if self.patch_size < 4 || self.patch_size % 4 != 0 {
            return Err(invalid(format!("patch size {} must be a positive multiple of 4", self.patch_size)));
        }
        if self.channels == 0 {
            return Err(invalid("detector needs at least one input channel"));
        }
        Ok(())
    }
}

/// Patch classifier: two conv/relu/max-pool stages, global average pooling
/// and a linear head producing `[clear, blur]` logits.
#[derive(Clone, Debug)]
pub struct DetectorNet {
    params: ParamStore,
    channels: usize,
}

fn he(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape.to_vec(), (2.0 / fan_in as f64).sqrt(), rng)
}

impl DetectorNet {
    pub fn new(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        p.insert("conv1.w", he(&[16, channels, 3, 3], channels * 9, &mut rng));
        p.insert("conv1.b", Tensor::zeros(vec![16]));
        p.insert("conv2.w", he(&[32, 16, 3, 3], 16 * 9, &mut rng));
        p.insert("conv2.b", Tensor::zeros(vec![32]));
        p.insert("fc.w", he(&[32, 2], 32, &mut rng));
        p.insert("fc.b", Tensor::zeros(vec![2]));
        Self { params: p, channels }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Logits (N×2) for an N×C×P×P input with pixel values in [0, 1].
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let x = g.affine(x, 2.0, -1.0);
        let h = g.conv2d(x, p.var("conv1.w")?)?;
        let h = g.add_bias(h, p.var("conv1.b")?, 1)?;
        let h = g.relu(h);
        let h = g.maxpool2d(h)?;
        let h = g.conv2d(h, p.var("conv2.w")?)?;
        let h = g.add_bias(h, p.var("conv2.b")?, 1)?;
        let h = g.relu(h);
        let h = g.maxpool2d(h)?;
        let h = g.mean_axis(h, 3)?;
        let h = g.mean_axis(h, 2)?;
        let logits = g.matmul(h, p.var("fc.w")?)?;
        Ok(g.add_bias(logits, p.var("fc.b")?, 1)?)
    }

    /// Stacks equally sized patches into an N×C×P×P tensor.
    pub fn batch_tensor(&self, patches: &[&Image]) -> Result<Tensor> {
        let first = patches.first().ok_or_else(|| invalid("empty patch batch"))?;
        let (c, h, w) = (first.channels(), first.height(), first.width());
        if c != self.channels {
            return Err(invalid(format!("detector expects {} channels, got {c}", self.channels)));
        }
        let mut data = Vec::with_capacity(patches.len() * c * h * w);
        for p in patches {
            if !p.same_size(first) || p.channels() != c {
                return Err(invalid("patches in a batch must share one size"));
            }
            data.extend(p.data().iter().map(|&v| v as f64));
        }
        Ok(Tensor::new(vec![patches.len(), c, h, w], data)?)
    }

    /// Inference logits, evaluated in fixed-size chunks.
    pub fn logits(&self, patches: &[Image]) -> Result<Vec<[f64; 2]>> {
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(INFER_CHUNK) {
            let refs: Vec<&Image> = chunk.iter().collect();
            let mut g = Graph::new();
            let bound = self.params.bind_frozen(&mut g);
            let x = g.constant(self.batch_tensor(&refs)?);
            let logits = self.forward(&mut g, &bound, x)?;
            out.extend(g.value(logits).data().chunks(2).map(|l| [l[0], l[1]]));
        }
        Ok(out)
    }

    /// Writes weights plus the detector configuration.
    pub fn save(&self, cfg: &DetectorConfig, path: impl AsRef<Path>) -> Result<()> {
        let mut store = self.params.clone();
        store.insert("config.patch_size", Tensor::scalar(cfg.patch_size as f64));
        store.insert("config.tau", Tensor::scalar(cfg.tau));
        store.insert("config.threshold", Tensor::scalar(cfg.threshold));
        store.insert("config.channels", Tensor::scalar(cfg.channels as f64));
        store.insert("config.seed", Tensor::scalar(cfg.seed as f64));
        save_checkpoint(&store, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, DetectorConfig)> {
        let store = load_checkpoint(path)?;
        let get = |k: &str| -> Result<f64> { Ok(store.get(k)?.item()) };
        let cfg = DetectorConfig {
            patch_size: get("config.patch_size")? as usize,
            tau: get("config.tau")?,
            threshold: get("config.threshold")?,
            channels: get("config.channels")? as usize,
            seed: get("config.seed")? as u64,
        };
        cfg.validate()?;
        let mut net = Self::new(cfg.channels, 0);
        let names: Vec<String> = net.params.names().map(str::to_string).collect();
        for name in names {
            let loaded = store.get(&name)?;
            let slot = net.params.get_mut(&name)?;
            if slot.shape() != loaded.shape() {
                return Err(invalid(format!(
                    "checkpoint tensor {name} has shape {:?}, expected {:?}",
                    loaded.shape(),
                    slot.shape()
                )));
            }
            *slot = loaded.clone();
        }
        Ok((net, cfg))
    }
}
