use imgcore::Image;
use lmdeblur::bgf::{masked_guided_filter, solve_window_coeffs, standard_guided_filter, GuidedFilterConfig};
use lmdeblur::datagen::{render_scene, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
    Image::from_fn(h, w, c, |_, _, _| rng.gen())
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> Image {
    Image::from_fn(h, w, 1, |_, _, _| if rng.gen_bool(p) { 1.0 } else { 0.0 })
}

fn window(h: usize, w: usize, y: usize, x: usize, r: usize) -> impl Iterator<Item = (usize, usize)> {
    let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
    let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
    (y0..=y1).flat_map(move |yy| (x0..=x1).map(move |xx| (yy, xx)))
}

/// Per-window normal equations accumulated by plain loops, solved by Cramer's rule.
fn brute_force(b: &Image, r: &Image, m: &Image, c: usize, y: usize, x: usize, rad: usize, eps: f64) -> Option<(f64, f64)> {
    let (mut sw, mut sr, mut srr, mut sb, mut srb) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    for (yy, xx) in window(b.height(), b.width(), y, x, rad) {
        let wgt = (m.get(yy, xx, 0) as f64).powi(2);
        let (ri, bi) = (r.get(yy, xx, c) as f64, b.get(yy, xx, c) as f64);
        sw += wgt;
        sr += wgt * ri;
        srr += wgt * ri * ri;
        sb += wgt * bi;
        srb += wgt * ri * bi;
    }
    if sw == 0.0 {
        return None;
    }
    let det = (srr + eps) * sw - sr * sr;
    Some(((sw * srb - sr * sb) / det, ((srr + eps) * sb - sr * srb) / det))
}

#[test]
fn coefficients_match_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &eps in &[1e-4, 1e-1] {
        for _ in 0..5 {
            let (b, r) = (random_image(&mut rng, 12, 12, 3), random_image(&mut rng, 12, 12, 3));
            let m = random_mask(&mut rng, 12, 12, 0.6);
            let rad = rng.gen_range(1..4);
            let coeffs = solve_window_coeffs(&b, &r, &m, &GuidedFilterConfig::new(rad, eps)).unwrap();
            for c in 0..3 {
                for y in 0..12 {
                    for x in 0..12 {
                        let (a, bb) = coeffs.window(c, y, x);
                        match brute_force(&b, &r, &m, c, y, x, rad, eps) {
                            Some((ea, eb)) => {
                                assert!((a - ea).abs() < 1e-6, "a {a} vs {ea}");
                                assert!((bb - eb).abs() < 1e-6, "b {bb} vs {eb}");
                            }
                            None => assert_eq!((a, bb), (0.0, 0.0)),
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn coefficients_satisfy_fixed_point_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let (b, r) = (random_image(&mut rng, 16, 16, 1), random_image(&mut rng, 16, 16, 1));
        let m = random_mask(&mut rng, 16, 16, 0.5);
        let (rad, eps) = (2, 1e-3);
        let coeffs = solve_window_coeffs(&b, &r, &m, &GuidedFilterConfig::new(rad, eps)).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let (a, bb) = coeffs.window(0, y, x);
                let (mut sw, mut sr, mut srr, mut sb, mut srb) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
                for (yy, xx) in window(16, 16, y, x, rad) {
                    let wgt = m.get(yy, xx, 0) as f64;
                    let (ri, bi) = (r.get(yy, xx, 0) as f64, b.get(yy, xx, 0) as f64);
                    sw += wgt;
                    sr += wgt * ri;
                    srr += wgt * ri * ri;
                    sb += wgt * bi;
                    srb += wgt * ri * bi;
                }
                if sw == 0.0 {
                    continue;
                }
                assert!((a - (srb - sr * bb) / (srr + eps)).abs() < 1e-6);
                assert!((bb - (sb - a * sr) / sw).abs() < 1e-6);
            }
        }
    }
}

/// Classic guided filter written directly from window means, with the per-window
/// ridge weight ε expressed as ε/|w_k| in the variance.
fn naive_gif(p: &Image, g: &Image, rad: usize, eps: f64) -> Image {
    let (h, w) = (p.height(), p.width());
    let mut out = Image::zeros(h, w, p.channels());
    for c in 0..p.channels() {
        let mut a = vec![0.0f64; h * w];
        let mut b = vec![0.0f64; h * w];
        for y in 0..h {
            for x in 0..w {
                let px: Vec<(f64, f64)> = window(h, w, y, x, rad)
                    .map(|(yy, xx)| (g.get(yy, xx, c) as f64, p.get(yy, xx, c) as f64))
                    .collect();
                let n = px.len() as f64;
                let mg = px.iter().map(|v| v.0).sum::<f64>() / n;
                let mp = px.iter().map(|v| v.1).sum::<f64>() / n;
                let var = px.iter().map(|v| (v.0 - mg).powi(2)).sum::<f64>() / n;
                let cov = px.iter().map(|v| (v.0 - mg) * (v.1 - mp)).sum::<f64>() / n;
                a[y * w + x] = cov / (var + eps / n);
                b[y * w + x] = mp - a[y * w + x] * mg;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let idx: Vec<usize> = window(h, w, y, x, rad).map(|(yy, xx)| yy * w + xx).collect();
                let n = idx.len() as f64;
                let ma = idx.iter().map(|&i| a[i]).sum::<f64>() / n;
                let mb = idx.iter().map(|&i| b[i]).sum::<f64>() / n;
                out.set(y, x, c, (ma * g.get(y, x, c) as f64 + mb) as f32);
            }
        }
    }
    out
}

fn max_abs_diff(a: &Image, b: &Image) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn full_mask_reduces_to_classic_guided_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &(rad, eps) in &[(2, 1e-4), (4, 1e-2), (3, 1e-3)] {
        let (b, r) = (random_image(&mut rng, 24, 20, 3), random_image(&mut rng, 24, 20, 3));
        let ones = Image::filled(24, 20, 1, 1.0);
        let cfg = GuidedFilterConfig::new(rad, eps);
        let oracle = naive_gif(&b, &r, rad, eps);
        let masked = masked_guided_filter(&b, &r, &ones, &cfg).unwrap();
        let standard = standard_guided_filter(&b, &r, &cfg).unwrap();
        assert!(max_abs_diff(&masked, &oracle) < 1e-5);
        assert!(max_abs_diff(&standard, &oracle) < 1e-5);
        assert!(max_abs_diff(&standard, &masked) < 1e-5);
    }
}

#[test]
fn zero_mask_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (b, r) = (random_image(&mut rng, 20, 20, 3), random_image(&mut rng, 20, 20, 3));
    let h = masked_guided_filter(&b, &r, &Image::zeros(20, 20, 1), &GuidedFilterConfig::default()).unwrap();
    assert_eq!(h, b);
}

#[test]
fn unmasked_pixels_pass_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let (b, r) = (random_image(&mut rng, 20, 20, 3), random_image(&mut rng, 20, 20, 3));
        let m = random_mask(&mut rng, 20, 20, 0.4);
        let h = masked_guided_filter(&b, &r, &m, &GuidedFilterConfig::new(3, 1e-3)).unwrap();
        for c in 0..3 {
            for i in 0..400 {
                if m.plane(0)[i] == 0.0 {
                    assert_eq!(h.plane(c)[i].to_bits(), b.plane(c)[i].to_bits());
                }
            }
        }
    }
}

#[test]
fn self_guidance_reproduces_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b = Image::from_fn(32, 32, 3, |y, x, c| {
        if y < 10 && x < 10 {
            0.3 + 0.1 * c as f32
        } else {
            rng.gen()
        }
    });
    for rad in [1, 2, 5] {
        let cfg = GuidedFilterConfig::new(rad, 1e-8);
        let h = masked_guided_filter(&b, &b, &Image::filled(32, 32, 1, 1.0), &cfg).unwrap();
        assert!(max_abs_diff(&h, &b) < 1e-4);
        let s = standard_guided_filter(&b, &b, &cfg).unwrap();
        assert!(max_abs_diff(&s, &b) < 1e-4);
    }
}

#[test]
fn constant_input_stays_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let r = random_image(&mut rng, 20, 20, 3);
    let b = Image::filled(20, 20, 3, 0.42);
    let out = standard_guided_filter(&b, &r, &GuidedFilterConfig::new(2, 1e-4)).unwrap();
    assert!(max_abs_diff(&out, &b) < 1e-5);
}

#[test]
fn affine_relation_is_exact_on_masked_region() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let r = random_image(&mut rng, 24, 24, 3);
    let b = r.map(|v| 0.7 * v + 0.1);
    let m = random_mask(&mut rng, 24, 24, 0.7);
    let h = masked_guided_filter(&b, &r, &m, &GuidedFilterConfig::new(2, 0.0)).unwrap();
    assert!(max_abs_diff(&h, &b) < 1e-5);
}

#[test]
fn huge_epsilon_flattens_slopes() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (b, r) = (random_image(&mut rng, 20, 20, 3), random_image(&mut rng, 20, 20, 3));
    let m = random_mask(&mut rng, 20, 20, 0.5);
    let coeffs = solve_window_coeffs(&b, &r, &m, &GuidedFilterConfig::new(2, 1e6)).unwrap();
    let max_a = coeffs.a_mean.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    assert!(max_a < 1e-3, "{max_a}");
}

#[test]
fn restores_synthetic_record() {
    let scene = render_scene(&SceneSpec::default()).unwrap();
    let h = masked_guided_filter(&scene.blurred, &scene.reference, &scene.mask_gt, &GuidedFilterConfig::default()).unwrap();
    let mse = |img: &Image| {
        let m = scene.mask_gt.plane(0);
        let mut acc = (0.0f64, 0.0f64);
        for c in 0..3 {
            for (i, (&p, &q)) in img.plane(c).iter().zip(scene.sharp.plane(c)).enumerate() {
                if m[i] > 0.0 {
                    acc.0 += ((p.clamp(0.0, 1.0) - q) as f64).powi(2);
                    acc.1 += 1.0;
                }
            }
        }
        acc.0 / acc.1
    };
    assert!(mse(&h) < mse(&scene.blurred));
}
