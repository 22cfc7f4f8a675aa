use std::f32::consts::PI;

use imgcore::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::composite::composite_over_background;
use super::exposure::simulate_short_exposure;
use super::kernel::MotionKernel;
use crate::error::{invalid, Result};

/// Parameters from which one synthetic scene is drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Motion length range in pixels.
    pub motion_length: [f32; 2],
    /// Motion angle range in radians.
    pub motion_angle: [f32; 2],
    /// Object extent range as a fraction of the shorter image side.
    pub object_size: [f32; 2],
    /// Checker period range of the object texture, in pixels.
    pub texture_period: [f32; 2],
    /// Mask dilation override; defaults to ⌈length/2⌉.
    pub dilation: Option<usize>,
    /// HSV value scale of the short exposure, in (0, 1].
    pub exposure: f32,
    pub noise_sigma: f32,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            seed: 0,
            motion_length: [4.0, 10.0],
            motion_angle: [0.0, PI],
            object_size: [0.35, 0.6],
            texture_period: [12.0, 32.0],
            dilation: None,
            exposure: 0.55,
            noise_sigma: 0.03,
        }
    }
}

/// The realized random draws of a scene, echoed into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub seed: u64,
    pub motion_length: f32,
    pub motion_angle: f32,
    pub object_shape: String,
    pub object_center: [f32; 2],
    pub object_extent: [f32; 2],
    pub dilation: usize,
    pub exposure: f32,
    pub noise_sigma: f32,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub sharp: Image,
    pub blurred: Image,
    pub reference: Image,
    pub mask_gt: Image,
    pub object_mask: Image,
    pub params: SceneParams,
}

fn color(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> [f32; 3] {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

struct Grating {
    freq: (f32, f32),
    phase: f32,
    amp: [f32; 3],
}

/// Textured background: a smooth colour ramp, oriented gratings under a
/// slowly varying contrast envelope, and a few hard-edged rectangles.
fn background(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    let c0 = color(rng, 0.25, 0.75);
    let c1 = color(rng, 0.25, 0.75);
    let ramp_dir = rng.gen_range(0.0..2.0 * PI);
    let gratings: Vec<Grating> = (0..rng.gen_range(2..5))
        .map(|_| {
            let period = rng.gen_range(3.0..12.0f32);
            let theta = rng.gen_range(0.0..PI);
            let a = rng.gen_range(0.08..0.2f32);
            Grating {
                freq: (2.0 * PI * theta.cos() / period, 2.0 * PI * theta.sin() / period),
                phase: rng.gen_range(0.0..2.0 * PI),
                amp: [
                    a * rng.gen_range(0.6..1.0f32),
                    a * rng.gen_range(0.6..1.0f32),
                    a * rng.gen_range(0.6..1.0f32),
                ],
            }
        })
        .collect();
    let env_period = rng.gen_range(60.0..140.0f32);
    let env_theta = rng.gen_range(0.0..PI);
    let env_phase = rng.gen_range(0.0..2.0 * PI);
    let rects: Vec<([usize; 4], [f32; 3])> = (0..rng.gen_range(1..4))
        .map(|_| {
            let rh = rng.gen_range(h / 8..h / 3);
            let rw = rng.gen_range(w / 8..w / 3);
            let y0 = rng.gen_range(0..h - rh);
            let x0 = rng.gen_range(0..w - rw);
            ([y0, x0, rh, rw], color(rng, 0.1, 0.9))
        })
        .collect();

    let norm = (h.max(w)) as f32;
    Image::from_fn(h, w, 3, |y, x, c| {
        let (yf, xf) = (y as f32, x as f32);
        if let Some((_, col)) = rects
            .iter()
            .rev()
            .find(|([ry, rx, rh, rw], _)| y >= *ry && y < ry + rh && x >= *rx && x < rx + rw)
        {
            return col[c];
        }
        let t = ((xf * ramp_dir.cos() + yf * ramp_dir.sin()) / norm).clamp(-1.0, 1.0) * 0.5 + 0.5;
        let base = c0[c] + (c1[c] - c0[c]) * t;
        let env_arg = 2.0 * PI * (xf * env_theta.cos() + yf * env_theta.sin()) / env_period + env_phase;
        let envelope = 0.2 + 0.8 * (0.5 + 0.5 * env_arg.sin());
        let texture: f32 = gratings
            .iter()
            .map(|g| g.amp[c] * (g.freq.0 * xf + g.freq.1 * yf + g.phase).sin())
            .sum();
        (base + envelope * texture).clamp(0.02, 0.98)
    })
}

/// Moving object: an ellipse or rounded rectangle filled with a rotated
/// two-colour checker pattern.
fn object(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
) -> (Image, Image, String, [f32; 2], [f32; 2]) {
    let (h, w) = (spec.height, spec.width);
    let side = h.min(w) as f32;
    let ey = rng.gen_range(spec.object_size[0]..=spec.object_size[1]) * side / 2.0;
    let ex = rng.gen_range(spec.object_size[0]..=spec.object_size[1]) * side / 2.0;
    let cy = rng.gen_range(ey..=(h as f32 - ey).max(ey));
    let cx = rng.gen_range(ex..=(w as f32 - ex).max(ex));
    let ellipse = rng.gen::<bool>();
    let period = rng.gen_range(spec.texture_period[0]..=spec.texture_period[1]);
    let rot = rng.gen_range(0.0..PI);
    let ca = color(rng, 0.05, 0.95);
    let cb: [f32; 3] = std::array::from_fn(|i| {
        let flipped = 1.0 - ca[i];
        (flipped + rng.gen_range(-0.15..0.15f32)).clamp(0.02, 0.98)
    });
    let inside = |y: f32, x: f32| {
        let (dy, dx) = ((y - cy) / ey, (x - cx) / ex);
        if ellipse {
            dy * dy + dx * dx <= 1.0
        } else {
            dy.abs().powi(6) + dx.abs().powi(6) <= 1.0
        }
    };
    let mask = Image::from_fn(h, w, 1, |y, x, _| {
        if inside(y as f32 + 0.5, x as f32 + 0.5) {
            1.0
        } else {
            0.0
        }
    });
    let texture = Image::from_fn(h, w, 3, |y, x, c| {
        let (yf, xf) = (y as f32 - cy, x as f32 - cx);
        let u = xf * rot.cos() + yf * rot.sin();
        let v = -xf * rot.sin() + yf * rot.cos();
        let cell = (u / period).floor() as i64 + (v / period).floor() as i64;
        if cell.rem_euclid(2) == 0 {
            ca[c]
        } else {
            cb[c]
        }
    });
    let shape = if ellipse { "ellipse" } else { "rounded_rect" };
    (texture, mask, shape.to_string(), [cy, cx], [ey, ex])
}

/// Draws one scene. The same spec always yields bit-identical images.
pub fn render_scene(spec: &SceneSpec) -> Result<Scene> {
    if spec.height < 8 || spec.width < 8 {
        return Err(invalid(format!("scene {}x{} too small", spec.height, spec.width)));
    }
    if spec.motion_length[0] < 1.0 || spec.motion_length[1] < spec.motion_length[0] {
        return Err(invalid("motion length range must satisfy 1 <= lo <= hi"));
    }
    if !(spec.texture_period[0] > 0.0 && spec.texture_period[1] >= spec.texture_period[0]) {
        return Err(invalid("texture period range must satisfy 0 < lo <= hi"));
    }
    if !(spec.object_size[0] > 0.0 && spec.object_size[1] >= spec.object_size[0] && spec.object_size[1] <= 1.0) {
        return Err(invalid("object size range must satisfy 0 < lo <= hi <= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bg = background(&mut rng, spec.height, spec.width);
    let (texture, object_mask, shape, center, extent) = object(&mut rng, spec);
    let length = rng.gen_range(spec.motion_length[0]..=spec.motion_length[1]);
    let angle = rng.gen_range(spec.motion_angle[0]..=spec.motion_angle[1]);
    let kernel = MotionKernel::new(length, angle)?;
    let dilation = spec.dilation.unwrap_or_else(|| kernel.spread());

    let mut sharp = bg.clone();
    for c in 0..3 {
        let (tex, m) = (texture.plane(c), object_mask.plane(0));
        for (i, v) in sharp.plane_mut(c).iter_mut().enumerate() {
            if m[i] > 0.0 {
                *v = tex[i];
            }
        }
    }
    let blur = composite_over_background(&bg, &sharp, &object_mask, &kernel, dilation)?;
    let noise_seed = rng.gen::<u64>();
    let reference = simulate_short_exposure(&sharp, spec.exposure, spec.noise_sigma, noise_seed)?;

    Ok(Scene {
        sharp,
        blurred: blur.blurred,
        reference,
        mask_gt: blur.mask_gt,
        object_mask,
        params: SceneParams {
            seed: spec.seed,
            motion_length: length,
            motion_angle: angle,
            object_shape: shape,
            object_center: center,
            object_extent: extent,
            dilation: dilation.max(kernel.spread()),
            exposure: spec.exposure,
            noise_sigma: spec.noise_sigma,
        },
    })
}
