use gradcore::{Graph, Tensor};
use imgcore::Image;
use lmdeblur::expbfusion::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, rng)
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    Tensor::new(vec![h, w], (0..h * w).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect()).unwrap()
}

/// Variance across tokens, summed over channels.
fn token_variance(d: &Tensor) -> f64 {
    let (c, n) = (d.shape()[0], d.shape()[1] * d.shape()[2]);
    (0..c)
        .map(|ch| {
            let row = &d.data()[ch * n..(ch + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64
        })
        .sum()
}

#[test]
fn zero_mask_collapses_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = FusionParams::new(&[8], 3);
    let (f, e) = (randn(&mut rng, &[8, 4, 5]), randn(&mut rng, &[8, 4, 5]));
    let out = fuse_scale(&f, &e, &Tensor::zeros(vec![4, 5]), &params, 0).unwrap();
    assert!(token_variance(&out.d) < 1e-10);
    // Every token equals the mean of V over all 2N tokens.
    let v = params.store.get("fusion.0.v").unwrap();
    for ch in 0..8 {
        let mut mean = 0.0;
        for src in [&f, &e] {
            for t in 0..20 {
                for k in 0..8 {
                    mean += src.data()[k * 20 + t] * v.data()[k * 8 + ch];
                }
            }
        }
        mean /= 40.0;
        assert!((out.d.data()[ch * 20] - mean).abs() < 1e-10);
    }
}

#[test]
fn attention_rows_are_stochastic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let chans = [4, 8, 16];
    let params = FusionParams::new(&chans, 4);
    for (s, (&c, hw)) in chans.iter().zip([8usize, 4, 2]).enumerate() {
        let (f, e) = (randn(&mut rng, &[c, hw, hw]), randn(&mut rng, &[c, hw, hw]));
        let out = fuse_scale(&f, &e, &random_mask(&mut rng, hw, hw), &params, s).unwrap();
        let n2 = 2 * hw * hw;
        assert_eq!(out.attention.shape(), &[n2, n2]);
        for row in out.attention.data().chunks(n2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&a| a >= 0.0));
        }
        assert_eq!(out.d.shape(), e.shape());
    }
}

#[test]
fn two_token_hand_oracle() {
    let mut params = FusionParams::new(&[1], 0);
    let (wq, wk, wv, gamma) = (0.7, -1.3, 2.1, 0.8);
    *params.store.get_mut("fusion.0.q").unwrap() = Tensor::new(vec![1, 1], vec![wq]).unwrap();
    *params.store.get_mut("fusion.0.k").unwrap() = Tensor::new(vec![1, 1], vec![wk]).unwrap();
    *params.store.get_mut("fusion.0.v").unwrap() = Tensor::new(vec![1, 1], vec![wv]).unwrap();
    params.set_gamma(0, gamma).unwrap();
    let (fx, ex) = (0.9, -0.4);
    for m in [0.0, 1.0] {
        let f = Tensor::new(vec![1, 1, 1], vec![fx]).unwrap();
        let e = Tensor::new(vec![1, 1, 1], vec![ex]).unwrap();
        let out = fuse_scale(&f, &e, &Tensor::full(vec![1, 1], m), &params, 0).unwrap();
        // Query of the E token against keys of both tokens.
        let (qe, kf, ke) = (wq * m * ex, wk * m * fx, wk * m * ex);
        let (sf, se) = (qe * kf / gamma, qe * ke / gamma);
        let (af, ae) = (sf.exp() / (sf.exp() + se.exp()), se.exp() / (sf.exp() + se.exp()));
        let expect = af * wv * fx + ae * wv * ex;
        assert!((out.d.data()[0] - expect).abs() < 1e-6);
        assert!((out.attention.data()[2] - af).abs() < 1e-6);
        assert!((out.attention.data()[3] - ae).abs() < 1e-6);
    }
}

#[test]
fn large_gamma_smooths() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = FusionParams::new(&[6], 6);
    let (f, e) = (randn(&mut rng, &[6, 4, 4]), randn(&mut rng, &[6, 4, 4]));
    let m = Tensor::full(vec![4, 4], 1.0);
    params.set_gamma(0, 1.0).unwrap();
    let sharp = token_variance(&fuse_scale(&f, &e, &m, &params, 0).unwrap().d);
    params.set_gamma(0, 1e6).unwrap();
    let smooth = token_variance(&fuse_scale(&f, &e, &m, &params, 0).unwrap().d);
    assert!(smooth < 1e-6 * sharp, "{smooth} vs {sharp}");
}

#[test]
fn pyramid_shapes_and_single_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let chans = [4, 8, 8];
    let params = FusionParams::new(&chans, 8);
    let sizes = [16usize, 8, 4];
    let f: Vec<Tensor> = chans.iter().zip(sizes).map(|(&c, s)| randn(&mut rng, &[c, s, s])).collect();
    let e: Vec<Tensor> = chans.iter().zip(sizes).map(|(&c, s)| randn(&mut rng, &[c, s, s])).collect();
    let mask = Image::from_fn(32, 32, 1, |y, x, _| (y >= 8 && x < 20) as u8 as f32);
    let d = fuse_pyramid(&f, &e, &mask, &params).unwrap();
    for (di, ei) in d.iter().zip(&e) {
        assert_eq!(di.shape(), ei.shape());
    }
    let m0 = downsample_mask(&mask, 16, 16).unwrap();
    assert!(m0.data().iter().all(|&v| v == 0.0 || v == 1.0));
    assert_eq!(fuse_scale(&f[0], &e[0], &m0, &params, 0).unwrap().d, d[0]);

    let one = FusionParams::new(&chans[..1], 8);
    let d1 = fuse_pyramid(&f[..1], &e[..1], &mask, &one).unwrap();
    assert_eq!(d1[0], fuse_scale(&f[0], &e[0], &m0, &one, 0).unwrap().d);
    assert!(fuse_pyramid(&f[..2], &e, &mask, &params).is_err());
}

#[test]
fn rejects_mismatches_and_non_finite() {
    let params = FusionParams::new(&[4], 0);
    let f = Tensor::zeros(vec![4, 2, 2]);
    assert!(fuse_scale(&f, &Tensor::zeros(vec![4, 2, 3]), &Tensor::zeros(vec![2, 2]), &params, 0).is_err());
    assert!(fuse_scale(&f, &f, &Tensor::zeros(vec![2, 3]), &params, 0).is_err());
    let mut bad = f.clone();
    bad.data_mut()[0] = f64::NAN;
    assert!(fuse_scale(&bad, &f, &Tensor::zeros(vec![2, 2]), &params, 0).is_err());
}

/// Weighted sum of the fused output, as a function of every input.
fn loss(f: &Tensor, e: &Tensor, mask: &Tensor, params: &FusionParams, weights: &Tensor) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let bound = params.store.bind(&mut g);
    let (fv, ev) = (g.param(f.clone()), g.param(e.clone()));
    let out = fuse_scale_graph(&mut g, &bound, 0, fv, ev, mask).unwrap();
    let wv = g.constant(weights.clone());
    let prod = g.mul(out.d, wv).unwrap();
    let l = g.sum(prod);
    let grads = g.backward(l).unwrap();
    let mut all = vec![grads.get(fv).unwrap().clone(), grads.get(ev).unwrap().clone()];
    all.extend(bound.gradients(&g, &grads));
    (g.value(l).item(), all)
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = 1e-4;
    for seed in 0..10 {
        let params = FusionParams::new(&[3], seed);
        let (f, e) = (randn(&mut rng, &[3, 2, 3]), randn(&mut rng, &[3, 2, 3]));
        let mask = random_mask(&mut rng, 2, 3);
        let weights = randn(&mut rng, &[3, 2, 3]);
        let (_, analytic) = loss(&f, &e, &mask, &params, &weights);
        let names: Vec<String> = params.store.names().map(str::to_string).collect();
        // Inputs 0 and 1 are F and E, then parameters in store order.
        for (slot, grad) in analytic.iter().enumerate() {
            let scale = grad.data().iter().fold(1e-8f64, |a, v| a.max(v.abs()));
            let mut worst = 0.0f64;
            for i in 0..grad.numel() {
                let eval = |delta: f64| {
                    let (mut f2, mut e2, mut p2) = (f.clone(), e.clone(), params.clone());
                    match slot {
                        0 => f2.data_mut()[i] += delta,
                        1 => e2.data_mut()[i] += delta,
                        s => p2.store.get_mut(&names[s - 2]).unwrap().data_mut()[i] += delta,
                    }
                    loss(&f2, &e2, &mask, &p2, &weights).0
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                worst = worst.max((numeric - grad.data()[i]).abs() / scale);
            }
            assert!(worst < 1e-4, "slot {slot}: {worst}");
            assert!(grad.is_finite());
        }
    }
}
