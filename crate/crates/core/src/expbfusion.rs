//! Masked cross-attention fusion of short-exposure features into encoder
//! features.
//!
//! At each scale the reference features `F` and encoder features `E`
//! (both `C×h×w`) are flattened into `N = h·w` tokens. The masked maps
//! `F⊗M` and `E⊗M` are concatenated along the token axis to form the query/key
//! source `D̃` (2N tokens); the unmasked maps form the value source `D̂`.
//! Attention `softmax(Q(D̃)K(D̃)ᵀ / γ)` mixes the values and the last `N`
//! output tokens, the positions of `E`, replace `E`.

use gradcore::{BoundParams, Graph, ParamStore, Tensor, Var};
use imgcore::{nearest_resize, Image};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

/// Projection weights (bias-free `C×C` token maps) and the log-temperature
/// of every scale.
#[derive(Clone, Debug)]
pub struct FusionParams {
    pub store: ParamStore,
    channels: Vec<usize>,
}

fn key(scale: usize, what: &str) -> String {
    format!("fusion.{scale}.{what}")
}

impl FusionParams {
    /// Random projections with std `1/√C`; `γ` starts at `√C`.
    pub fn new(channels: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (s, &c) in channels.iter().enumerate() {
            let std = 1.0 / (c as f64).sqrt();
            for w in ["q", "k", "v"] {
                store.insert(key(s, w), Tensor::randn(vec![c, c], std, &mut rng));
            }
            store.insert(key(s, "log_gamma"), Tensor::scalar(0.5 * (c as f64).ln()));
        }
        Self {
            store,
            channels: channels.to_vec(),
        }
    }

    pub fn scales(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn gamma(&self, scale: usize) -> Result<f64> {
        Ok(self.store.get(&key(scale, "log_gamma"))?.item().exp())
    }

    pub fn set_gamma(&mut self, scale: usize, gamma: f64) -> Result<()> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid(format!("gamma must be positive, got {gamma}")));
        }
        *self.store.get_mut(&key(scale, "log_gamma"))? = Tensor::scalar(gamma.ln());
        Ok(())
    }

    /// Zeroes every value projection, which makes the fused features zero.
    pub fn zero_value_projections(&mut self) -> Result<()> {
        for s in 0..self.scales() {
            self.store.get_mut(&key(s, "v"))?.data_mut().fill(0.0);
        }
        Ok(())
    }
}

/// Graph handles of one fused scale.
#[derive(Clone, Copy, Debug)]
pub struct FusedScaleVars {
    /// `C×h×w`, shaped like `E`.
    pub d: Var,
    /// `2N×2N` row-stochastic attention.
    pub attention: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedScale {
    pub d: Tensor,
    pub attention: Tensor,
}

fn chw(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        &[c, h, w] => Ok((c, h, w)),
        _ => Err(invalid(format!("expected a C×h×w feature map, got {shape:?}"))),
    }
}

/// Nearest-neighbour downsampling of a one-channel mask to `h×w`.
pub fn downsample_mask(mask: &Image, h: usize, w: usize) -> Result<Tensor> {
    mask.ensure_channels(1)?;
    let small = nearest_resize(mask, h, w)?;
    Ok(Tensor::from_f32(vec![h, w], small.data())?)
}

/// Fuses one scale inside an existing graph. `f` and `e` are `C×h×w`,
/// `mask` is `h×w`.
pub fn fuse_scale_graph(
    g: &mut Graph,
    params: &BoundParams,
    scale: usize,
    f: Var,
    e: Var,
    mask: &Tensor,
) -> Result<FusedScaleVars> {
    let (c, h, w) = chw(g.shape(e))?;
    if g.shape(f) != g.shape(e) {
        return Err(invalid(format!("F {:?} and E {:?} differ", g.shape(f), g.shape(e))));
    }
    if mask.shape() != [h, w] {
        return Err(invalid(format!("mask {:?} does not match {h}x{w} features", mask.shape())));
    }
    if !g.value(f).is_finite() || !g.value(e).is_finite() || !mask.is_finite() {
        return Err(invalid("non-finite fusion input"));
    }
    let n = h * w;
    let tokens = |g: &mut Graph, a: Var, b: Var| -> Result<Var> {
        let a = g.reshape(a, &[c, n])?;
        let b = g.reshape(b, &[c, n])?;
        let cat = g.concat(&[a, b], 1)?;
        Ok(g.transpose(cat)?)
    };
    let fm = g.mask_mul(f, mask)?;
    let em = g.mask_mul(e, mask)?;
    let masked = tokens(g, fm, em)?;
    let full = tokens(g, f, e)?;

    let q = g.matmul(masked, params.var(&key(scale, "q"))?)?;
    let k = g.matmul(masked, params.var(&key(scale, "k"))?)?;
    let v = g.matmul(full, params.var(&key(scale, "v"))?)?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let log_gamma = params.var(&key(scale, "log_gamma"))?;
    let neg = g.scale(log_gamma, -1.0);
    let inv_gamma = g.exp(neg);
    let scores = g.mul_scalar(scores, inv_gamma)?;
    let attention = g.softmax(scores, 1)?;
    let out = g.matmul(attention, v)?;
    let e_half = g.slice(out, 0, n, n)?;
    let e_half = g.transpose(e_half)?;
    let d = g.reshape(e_half, &[c, h, w])?;
    Ok(FusedScaleVars { d, attention })
}

/// Fuses every scale of a pyramid; `mask` is the full-resolution mask.
pub fn fuse_pyramid_graph(
    g: &mut Graph,
    params: &BoundParams,
    f: &[Var],
    e: &[Var],
    mask: &Image,
) -> Result<Vec<Var>> {
    if f.len() != e.len() {
        return Err(invalid(format!("{} reference scales vs {} encoder scales", f.len(), e.len())));
    }
    f.iter()
        .zip(e)
        .enumerate()
        .map(|(s, (&fi, &ei))| {
            let (_, h, w) = chw(g.shape(ei))?;
            let m = downsample_mask(mask, h, w)?;
            Ok(fuse_scale_graph(g, params, s, fi, ei, &m)?.d)
        })
        .collect()
}

/// Stand-alone evaluation of one scale.
pub fn fuse_scale(f: &Tensor, e: &Tensor, mask: &Tensor, params: &FusionParams, scale: usize) -> Result<FusedScale> {
    if scale >= params.scales() {
        return Err(invalid(format!("scale {scale} of {}", params.scales())));
    }
    let mut g = Graph::new();
    let bound = params.store.bind_frozen(&mut g);
    let (fv, ev) = (g.constant(f.clone()), g.constant(e.clone()));
    let out = fuse_scale_graph(&mut g, &bound, scale, fv, ev, mask)?;
    Ok(FusedScale {
        d: g.value(out.d).clone(),
        attention: g.value(out.attention).clone(),
    })
}

/// Stand-alone evaluation of a pyramid. The output shapes equal `e`'s.
pub fn fuse_pyramid(f: &[Tensor], e: &[Tensor], mask: &Image, params: &FusionParams) -> Result<Vec<Tensor>> {
    if f.len() != params.scales() || e.len() != params.scales() {
        return Err(invalid(format!(
            "pyramids have {} and {} scales, parameters have {}",
            f.len(),
            e.len(),
            params.scales()
        )));
    }
    let mut g = Graph::new();
    let bound = params.store.bind_frozen(&mut g);
    let fv: Vec<Var> = f.iter().map(|t| g.constant(t.clone())).collect();
    let ev: Vec<Var> = e.iter().map(|t| g.constant(t.clone())).collect();
    let d = fuse_pyramid_graph(&mut g, &bound, &fv, &ev, mask)?;
    Ok(d.into_iter().map(|v| g.value(v).clone()).collect())
}
