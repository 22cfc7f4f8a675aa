
use gradcore::{BoundParams, Graph, ParamStore, Tensor, Var};
use imgcore::Image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::expbfusion::{fuse_scale_graph, downsample_mask, FusionParams};

pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Channels of the three encoder scales.
    pub channels: [usize; 3],
    /// Width of the sinusoidal timestep embedding (even).
    pub time_dim: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            channels: [16, 32, 64],
            time_dim: 32,
        }
    }
}

fn he(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape.to_vec(), (2.0 / fan_in as f64).sqrt(), rng)
}

fn conv_param(p: &mut ParamStore, name: &str, out: usize, inp: usize, rng: &mut ChaCha8Rng) {
    p.insert(format!("{name}.w"), he(&[out, inp, 3, 3], inp * 9, rng));
    p.insert(format!("{name}.b"), Tensor::zeros(vec![out]));
}

fn conv(g: &mut Graph, p: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let y = g.conv2d(x, p.var(&format!("{name}.w"))?)?;
    Ok(g.add_bias(y, p.var(&format!("{name}.b"))?, 1)?)
}

fn conv_relu(g: &mut Graph, p: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let y = conv(g, p, name, x)?;
    Ok(g.relu(y))
}

/// Sinusoidal features of each timestep, B×dim.
pub fn timestep_embedding(ts: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        for j in 0..half {
            let freq = (-(10_000f64.ln()) * j as f64 / half as f64).exp();
            data.push((t as f64 * freq).sin());
        }
        for j in 0..half {
            let freq = (-(10_000f64.ln()) * j as f64 / half as f64).exp();
            data.push((t as f64 * freq).cos());
        }
    }
    Tensor::new(vec![ts.len(), 2 * half], data).expect("sized above")
}

/// Noise predictor: stem, three pooled encoder stages producing `E1..E3`,
/// and a decoder that upsamples and concatenates skip features.
#[derive(Clone, Debug)]
pub struct ToyUNet {
    pub params: ParamStore,
    pub config: UNetConfig,
}

/// Reference-image encoder producing `F1..F3` with the shapes of `E1..E3`.
#[derive(Clone, Debug)]
pub struct RefEncoder {
    pub params: ParamStore,
    pub config: UNetConfig,
}

impl ToyUNet {
    pub fn new(config: UNetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c0, c1, c2] = config.channels;
        let mut p = ParamStore::new();
        conv_param(&mut p, "unet.stem", c0, IMAGE_CHANNELS, &mut rng);
        conv_param(&mut p, "unet.enc1", c0, c0, &mut rng);
        conv_param(&mut p, "unet.enc2", c1, c0, &mut rng);
        conv_param(&mut p, "unet.enc3", c2, c1, &mut rng);
        for (i, c) in [c0, c1, c2].into_iter().enumerate() {
            p.insert(format!("unet.time{i}.w"), he(&[config.time_dim, c], config.time_dim, &mut rng));
            p.insert(format!("unet.time{i}.b"), Tensor::zeros(vec![c]));
        }
        conv_param(&mut p, "unet.mid", c2, c2, &mut rng);
        conv_param(&mut p, "unet.dec2", c1, c2 + c1, &mut rng);
        conv_param(&mut p, "unet.dec1", c0, c1 + c0, &mut rng);
        conv_param(&mut p, "unet.dec0", c0, c0 + c0, &mut rng);
        p.insert("unet.out.w", Tensor::randn(vec![IMAGE_CHANNELS, c0, 3, 3], 0.1 / (c0 as f64 * 9.0).sqrt(), &mut rng));
        p.insert("unet.out.b", Tensor::zeros(vec![IMAGE_CHANNELS]));
        Self { params: p, config }
    }

    /// Stem output and the encoder pyramid for an N×3×h×w input.
    fn encode(&self, g: &mut Graph, p: &BoundParams, x: Var, temb: Var) -> Result<(Var, [Var; 3])> {
        let h0 = conv_relu(g, p, "unet.stem", x)?;
        let mut h = h0;
        let mut out = Vec::with_capacity(3);
        for (i, name) in ["unet.enc1", "unet.enc2", "unet.enc3"].into_iter().enumerate() {
            let pooled = g.maxpool2d(h)?;
            let y = conv(g, p, name, pooled)?;
            let tw = g.matmul(temb, p.var(&format!("unet.time{i}.w"))?)?;
            let tb = g.add_bias(tw, p.var(&format!("unet.time{i}.b"))?, 1)?;
            let y = g.add_bias(y, tb, 0)?;
            h = g.relu(y);
            out.push(h);
        }
        Ok((h0, [out[0], out[1], out[2]]))
    }

    fn decode(&self, g: &mut Graph, p: &BoundParams, h0: Var, d: [Var; 3]) -> Result<Var> {
        let m = conv_relu(g, p, "unet.mid", d[2])?;
        let u = g.upsample2x(m)?;
        let u = g.concat(&[u, d[1]], 1)?;
        let u = conv_relu(g, p, "unet.dec2", u)?;
        let u = g.upsample2x(u)?;
        let u = g.concat(&[u, d[0]], 1)?;
        let u = conv_relu(g, p, "unet.dec1", u)?;
        let u = g.upsample2x(u)?;
        let u = g.concat(&[u, h0], 1)?;
        let u = conv_relu(g, p, "unet.dec0", u)?;
        conv(g, p, "unet.out", u)
    }
}

impl RefEncoder {
    pub fn new(config: UNetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c0, c1, c2] = config.channels;
        let mut p = ParamStore::new();
        conv_param(&mut p, "ref.stem", c0, IMAGE_CHANNELS, &mut rng);
        conv_param(&mut p, "ref.enc1", c0, c0, &mut rng);
        conv_param(&mut p, "ref.enc2", c1, c0, &mut rng);
        conv_param(&mut p, "ref.enc3", c2, c1, &mut rng);
        Self { params: p, config }
    }

    fn encode(&self, g: &mut Graph, p: &BoundParams, r: Var) -> Result<[Var; 3]> {
        let mut h = conv_relu(g, p, "ref.stem", r)?;
        let mut out = Vec::with_capacity(3);
        for name in ["ref.enc1", "ref.enc2", "ref.enc3"] {
            let pooled = g.maxpool2d(h)?;
            h = conv_relu(g, p, name, pooled)?;
            out.push(h);
        }
        Ok([out[0], out[1], out[2]])
    }
}

/// U-Net, reference encoder and fusion parameters.
#[derive(Clone, Debug)]
pub struct DiffusionModel {
    pub unet: ToyUNet,
    pub reference: RefEncoder,
    pub fusion: FusionParams,
}

/// The model's parameters bound into one graph.
pub struct BoundModel {
    pub unet: BoundParams,
    pub reference: BoundParams,
    pub fusion: BoundParams,
}

impl BoundModel {
    /// Gradients for (U-Net, reference encoder, fusion) in store order.
    pub fn gradients(&self, g: &Graph, grads: &gradcore::Gradients) -> [Vec<Tensor>; 3] {
        [
            self.unet.gradients(g, grads),
            self.reference.gradients(g, grads),
            self.fusion.gradients(g, grads),
        ]
    }
}

/// Crops fed to the model must be divisible by this (three 2× poolings).
pub const SIZE_MULTIPLE: usize = 8;

impl DiffusionModel {
    pub fn new(config: UNetConfig, seed: u64) -> Self {
        Self {
            unet: ToyUNet::new(config, seed),
            reference: RefEncoder::new(config, seed.wrapping_add(1)),
            fusion: FusionParams::new(&config.channels, seed.wrapping_add(2)),
        }
    }

    pub fn config(&self) -> UNetConfig {
        self.unet.config
    }

    pub fn param_count(&self) -> usize {
        self.unet.params.numel() + self.reference.params.numel() + self.fusion.store.numel()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel {
        let b = |s: &ParamStore, g: &mut Graph| if trainable { s.bind(g) } else { s.bind_frozen(g) };
        BoundModel {
            unet: b(&self.unet.params, g),
            reference: b(&self.reference.params, g),
            fusion: b(&self.fusion.store, g),
        }
    }

    /// Predicted noise for `x_t` (B×3×h×w, values in model space), per-sample
    /// timesteps, reference images `r` (B×3×h×w, model space) and one h×w mask
    /// per sample. Encoder features are replaced by their fused versions.
    pub fn predict_noise(
        &self,
        g: &mut Graph,
        p: &BoundModel,
        x_t: Var,
        ts: &[usize],
        r: Var,
        masks: &[Image],
    ) -> Result<Var> {
        let shape = g.shape(x_t).to_vec();
        let (b, h, w) = match shape.as_slice() {
            &[b, c, h, w] if c == IMAGE_CHANNELS => (b, h, w),
            s => return Err(invalid(format!("expected B×3×h×w input, got {s:?}"))),
        };
        if g.shape(r) != shape.as_slice() {
            return Err(invalid(format!("reference {:?} vs input {shape:?}", g.shape(r))));
        }
        if h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
            return Err(invalid(format!("{h}x{w} is not divisible by {SIZE_MULTIPLE}")));
        }
        if ts.len() != b || masks.len() != b {
            return Err(invalid(format!("{b} samples, {} timesteps, {} masks", ts.len(), masks.len())));
        }
        for m in masks {
            if m.height() != h || m.width() != w {
                return Err(invalid("mask size differs from the input"));
            }
        }
        let temb = g.constant(timestep_embedding(ts, self.unet.config.time_dim));
        let (h0, e) = self.unet.encode(g, &p.unet, x_t, temb)?;
        let f = self.reference.encode(g, &p.reference, r)?;
        let mut d = [h0; 3];
        for s in 0..3 {
            let (c, hs, ws) = match g.shape(e[s]) {
                &[_, c, hs, ws] => (c, hs, ws),
                _ => unreachable!("encoder output is NCHW"),
            };
            let mut fused = Vec::with_capacity(b);
            for (i, mask) in masks.iter().enumerate() {
                let take = |g: &mut Graph, v: Var| -> Result<Var> {
                    let one = g.slice(v, 0, i, 1)?;
                    Ok(g.reshape(one, &[c, hs, ws])?)
                };
                let (ei, fi) = (take(g, e[s])?, take(g, f[s])?);
                let mi = downsample_mask(mask, hs, ws)?;
                let di = fuse_scale_graph(g, &p.fusion, s, fi, ei, &mi)?.d;
                fused.push(g.reshape(di, &[1, c, hs, ws])?);
            }
            d[s] = g.concat(&fused, 0)?;
        }
        self.unet.decode(g, &p.unet, h0, d)
    }
}

/// Maps [0, 1] pixels to the model's [-1, 1] range as an N×C×h×w tensor.
pub fn images_to_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| invalid("no images"))?;
    let mut data = Vec::with_capacity(images.len() * first.data().len());
    for img in images {
        if !img.same_size(first) || img.channels() != first.channels() {
            return Err(invalid("images in a batch must share one shape"));
        }
        data.extend(img.data().iter().map(|&v| 2.0 * v as f64 - 1.0));
    }
    Ok(Tensor::new(vec![images.len(), first.channels(), first.height(), first.width()], data)?)
}

/// Inverse of [`images_to_tensor`], clamping to [0, 1].
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<Image>> {
    let (n, c, h, w) = match t.shape() {
        &[n, c, h, w] => (n, c, h, w),
        s => return Err(invalid(format!("expected N×C×h×w, got {s:?}"))),
    };
    (0..n)
        .map(|i| {
            let slice = &t.data()[i * c * h * w..(i + 1) * c * h * w];
            let data = slice.iter().map(|&v| ((v + 1.0) * 0.5).clamp(0.0, 1.0) as f32).collect();
            Ok(Image::from_vec(h, w, c, data)?)
        })
        .collect()
}

