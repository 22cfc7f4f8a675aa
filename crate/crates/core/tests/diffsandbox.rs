use gradcore::{Graph, Tensor};
use imgcore::Image;
use lmdeblur::datagen::{render_scene, SceneSpec};
use lmdeblur::diffsandbox::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> UNetConfig {
    UNetConfig {
        channels: [4, 6, 8],
        time_dim: 8,
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
    Image::from_fn(h, w, c, |_, _, _| rng.gen::<f32>())
}

fn disk_mask(h: usize, w: usize) -> Image {
    let (cy, cx, r) = (h as f32 / 2.0, w as f32 / 2.0, h.min(w) as f32 / 3.0);
    Image::from_fn(h, w, 1, |y, x, _| {
        let (dy, dx) = (y as f32 + 0.5 - cy, x as f32 + 0.5 - cx);
        if dy * dy + dx * dx <= r * r {
            1.0
        } else {
            0.0
        }
    })
}

/// Crops of one rendered scene centred on the moving object.
fn scene_batch(n: usize, crop: usize, seed: u64) -> DiffusionBatch {
    let scene = render_scene(&SceneSpec {
        height: 64,
        width: 64,
        seed,
        ..SceneSpec::default()
    })
    .unwrap();
    let mut batch = DiffusionBatch::default();
    let span = 64 - crop;
    for i in 0..n {
        let (y0, x0) = ((i * 7) % (span + 1), (i * 13) % (span + 1));
        batch.target.push(scene.sharp.crop(y0, x0, crop, crop).unwrap());
        batch.reference.push(scene.reference.crop(y0, x0, crop, crop).unwrap());
        batch.mask.push(scene.mask_gt.crop(y0, x0, crop, crop).unwrap());
    }
    batch
}

#[test]
fn schedule_decreases_and_nearly_destroys_signal() {
    let s = DiffusionSchedule::default();
    assert_eq!(s.steps(), 200);
    let mut prev = 1.0;
    let mut product = 1.0;
    for t in 1..=200 {
        let ab = s.alpha_bar(t).unwrap();
        assert!(ab < prev, "alpha_bar not decreasing at {t}");
        product *= 1.0 - s.beta(t).unwrap();
        assert!((ab - product).abs() < 1e-12);
        prev = ab;
    }
    assert!(s.alpha_bar(200).unwrap() < 0.01);
    assert!(s.alpha_bar(0).is_err() && s.alpha_bar(201).is_err());
    assert!(DiffusionSchedule::linear(0, 1e-4, 0.02).is_err());
    assert!(DiffusionSchedule::linear(10, 0.3, 0.1).is_err());
}

#[test]
fn forward_noise_of_zero_is_scaled_noise() {
    let s = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Tensor::randn(vec![50], 1.0, &mut rng);
    let x = forward_noise(&Tensor::zeros(vec![50]), 37, &noise, &s).unwrap();
    let k = (1.0 - s.alpha_bar(37).unwrap()).sqrt();
    for (a, b) in x.data().iter().zip(noise.data()) {
        assert_eq!(*a, k * b);
    }
    assert!(forward_noise(&Tensor::zeros(vec![3]), 0, &Tensor::zeros(vec![3]), &s).is_err());
    assert!(forward_noise(&Tensor::zeros(vec![3]), 5, &Tensor::zeros(vec![4]), &s).is_err());
}

#[test]
fn forward_noise_second_moment_matches() {
    let s = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x0 = Tensor::new(vec![64], (0..64).map(|i| (i as f64 / 32.0) - 1.0).collect()).unwrap();
    let norm0: f64 = x0.data().iter().map(|v| v * v).sum();
    for t in [1, 20, 100, 200] {
        let ab = s.alpha_bar(t).unwrap();
        let expected = ab * norm0 + (1.0 - ab) * 64.0;
        let trials = 4000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let n = Tensor::randn(vec![64], 1.0, &mut rng);
            acc += forward_noise(&x0, t, &n, &s).unwrap().data().iter().map(|v| v * v).sum::<f64>();
        }
        let mean = acc / trials as f64;
        assert!((mean - expected).abs() / expected < 0.03, "t={t}: {mean} vs {expected}");
    }
}

#[test]
fn overfits_a_fixed_batch() {
    let schedule = DiffusionSchedule::default();
    let batch = scene_batch(4, 32, 11);
    let mut probe = ChaCha8Rng::seed_from_u64(99);
    let probes: Vec<_> = (0..4).map(|_| draw_noise(&schedule, &batch, &mut probe).unwrap()).collect();
    let eval = |m: &DiffusionModel| -> f64 {
        probes.iter().map(|(ts, n)| denoising_loss(m, &schedule, &batch, ts, n).unwrap()).sum::<f64>() / probes.len() as f64
    };
    let model = DiffusionModel::new(UNetConfig::default(), 3);
    let before = eval(&model);
    let mut trainer = DiffusionTrainer::new(model, schedule.clone(), 2e-3, 0.0, 5);
    for _ in 0..300 {
        assert!(trainer.train_step(&batch).unwrap().is_finite());
    }
    let after = eval(&trainer.model);
    assert!(after < 0.5 * before, "loss {before} -> {after}");
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let schedule = DiffusionSchedule::linear(20, 1e-3, 0.2).unwrap();
    let batch = scene_batch(2, 16, 4);
    let model = DiffusionModel::new(tiny(), 8);
    let snapshot = model.clone();
    let mut trainer = DiffusionTrainer::new(model, schedule, 0.0, 0.0, 1);
    for _ in 0..3 {
        trainer.train_step(&batch).unwrap();
    }
    for (a, b) in [
        (&snapshot.unet.params, &trainer.model.unet.params),
        (&snapshot.reference.params, &trainer.model.reference.params),
        (&snapshot.fusion.store, &trainer.model.fusion.store),
    ] {
        for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "{na} changed");
        }
    }
}

#[test]
fn mask_changes_the_loss() {
    let schedule = DiffusionSchedule::default();
    let mut batch = scene_batch(2, 16, 6);
    let model = DiffusionModel::new(tiny(), 2);
    let (ts, noise) = draw_noise(&schedule, &batch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    batch.mask = vec![Image::zeros(16, 16, 1); 2];
    let off = denoising_loss(&model, &schedule, &batch, &ts, &noise).unwrap();
    batch.mask = vec![Image::filled(16, 16, 1, 1.0); 2];
    let on = denoising_loss(&model, &schedule, &batch, &ts, &noise).unwrap();
    assert!((off - on).abs() > 1e-9, "{off} vs {on}");
}

#[test]
fn sampling_is_seeded() {
    let schedule = DiffusionSchedule::scaled(20).unwrap();
    let model = DiffusionModel::new(tiny(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r = random_image(&mut rng, 16, 16, 3);
    let m = disk_mask(16, 16);
    let a = sample(&model, &schedule, &r, &m, 42).unwrap();
    let b = sample(&model, &schedule, &r, &m, 42).unwrap();
    let c = sample(&model, &schedule, &r, &m, 43).unwrap();
    assert_eq!(a.data(), b.data());
    assert_ne!(a.data(), c.data());
    assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(sample(&model, &schedule, &random_image(&mut rng, 12, 16, 3), &disk_mask(12, 16), 0).is_err());
}

#[test]
fn zero_value_projection_ignores_reference() {
    let schedule = DiffusionSchedule::scaled(10).unwrap();
    let mut model = DiffusionModel::new(tiny(), 4);
    model.fusion.zero_value_projections().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = disk_mask(16, 16);
    let r1 = random_image(&mut rng, 16, 16, 3);
    let r2 = random_image(&mut rng, 16, 16, 3);
    let a = sample(&model, &schedule, &r1, &m, 7).unwrap();
    let b = sample(&model, &schedule, &r2, &m, 7).unwrap();
    assert_eq!(a.data(), b.data());
}

fn store_of(model: &mut DiffusionModel, which: usize) -> &mut gradcore::ParamStore {
    match which {
        0 => &mut model.unet.params,
        1 => &mut model.reference.params,
        _ => &mut model.fusion.store,
    }
}

#[test]
fn gradients_match_finite_differences() {
    let schedule = DiffusionSchedule::scaled(50).unwrap();
    let cfg = UNetConfig {
        channels: [2, 3, 2],
        time_dim: 4,
    };
    let mut model = DiffusionModel::new(cfg, 9);
    let batch = scene_batch(2, 8, 12);
    let (ts, noise) = draw_noise(&schedule, &batch, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let loss = denoising_loss_graph(&mut g, &model, &bound, &schedule, &batch, &ts, &noise).unwrap();
    let grads = g.backward(loss).unwrap();
    let [gu, gr, gf] = bound.gradients(&g, &grads);

    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut checked = 0;
    for (which, analytic) in [(0usize, gu), (1, gr), (2, gf)] {
        let names: Vec<String> = match which {
            0 => model.unet.params.names().map(str::to_string).collect(),
            1 => model.reference.params.names().map(str::to_string).collect(),
            _ => model.fusion.store.names().map(str::to_string).collect(),
        };
        for (name, grad) in names.iter().zip(&analytic) {
            let idx = rng.gen_range(0..grad.numel());
            let orig = store_of(&mut model, which).get(name).unwrap().data()[idx];
            let mut eval = |v: f64| {
                store_of(&mut model, which).get_mut(name).unwrap().data_mut()[idx] = v;
                denoising_loss(&model, &schedule, &batch, &ts, &noise).unwrap()
            };
            let (plus, minus) = (eval(orig + h), eval(orig - h));
            eval(orig);
            let fd = (plus - minus) / (2.0 * h);
            let an = grad.data()[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel < 1e-3, "{name}[{idx}]: analytic {an}, numeric {fd}");
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn refine_at_minimal_strength_stays_close() {
    let schedule = DiffusionSchedule::default();
    let model = DiffusionModel::new(tiny(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = random_image(&mut rng, 40, 40, 3);
    let r = random_image(&mut rng, 40, 40, 3);
    let m = Image::filled(40, 40, 1, 1.0);
    let cfg = RefineConfig {
        strength: 1e-4,
        tile: 16,
        recompose: false,
        seed: 1,
    };
    assert_eq!(cfg.start_step(&schedule).unwrap(), 1);
    let out = refine(&model, &schedule, &h, &r, &m, &h, &cfg).unwrap();
    let mse: f64 = out.data().iter().zip(h.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / h.data().len() as f64;
    assert!(mse < 1e-3, "mse {mse}");
}

#[test]
fn refine_at_full_strength_matches_sampling() {
    let schedule = DiffusionSchedule::scaled(15).unwrap();
    let model = DiffusionModel::new(tiny(), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = random_image(&mut rng, 16, 16, 3);
    let r = random_image(&mut rng, 16, 16, 3);
    let m = disk_mask(16, 16);
    let cfg = RefineConfig {
        strength: 1.0,
        tile: 16,
        recompose: false,
        seed: 21,
    };
    let refined = refine(&model, &schedule, &h, &r, &m, &h, &cfg).unwrap();
    let sampled = sample(&model, &schedule, &r, &m, 21).unwrap();
    assert_eq!(refined.data(), sampled.data());
}

#[test]
fn recomposition_keeps_blurred_outside_mask() {
    let schedule = DiffusionSchedule::scaled(10).unwrap();
    let model = DiffusionModel::new(tiny(), 7);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (hh, ww) = (24, 40);
    let h = random_image(&mut rng, hh, ww, 3);
    let r = random_image(&mut rng, hh, ww, 3);
    let b = random_image(&mut rng, hh, ww, 3);
    let m = Image::from_fn(hh, ww, 1, |y, x, _| if (4..12).contains(&y) && (3..15).contains(&x) { 1.0 } else { 0.0 });
    let cfg = RefineConfig {
        strength: 0.5,
        tile: 16,
        recompose: true,
        seed: 3,
    };
    let out = refine(&model, &schedule, &h, &r, &m, &b, &cfg).unwrap();
    let mut changed = 0;
    for c in 0..3 {
        for y in 0..hh {
            for x in 0..ww {
                if m.get(y, x, 0) == 0.0 {
                    assert_eq!(out.get(y, x, c), b.get(y, x, c));
                } else if out.get(y, x, c) != b.get(y, x, c) {
                    changed += 1;
                }
            }
        }
    }
    assert!(changed > 0);
    let again = refine(&model, &schedule, &h, &r, &m, &b, &cfg).unwrap();
    assert_eq!(out.data(), again.data());
}

#[test]
fn refine_rejects_bad_settings() {
    let schedule = DiffusionSchedule::scaled(10).unwrap();
    let model = DiffusionModel::new(tiny(), 7);
    let img = Image::zeros(16, 16, 3);
    let m = Image::zeros(16, 16, 1);
    for (strength, tile) in [(0.0, 16), (1.5, 16), (f64::NAN, 16), (0.5, 12), (0.5, 0)] {
        let cfg = RefineConfig {
            strength,
            tile,
            ..RefineConfig::default()
        };
        assert!(refine(&model, &schedule, &img, &img, &m, &img, &cfg).is_err(), "{strength} {tile}");
    }
    let small = Image::zeros(8, 16, 3);
    assert!(refine(&model, &schedule, &small, &img, &m, &img, &RefineConfig::default()).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("diffusion.ckpt");
    let schedule = DiffusionSchedule::scaled(12).unwrap();
    let model = DiffusionModel::new(tiny(), 13);
    save_model(&model, &schedule, &path).unwrap();
    let (loaded, sched2) = load_model(&path).unwrap();
    assert_eq!(sched2, schedule);
    assert_eq!(loaded.config(), model.config());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let r = random_image(&mut rng, 16, 16, 3);
    let m = disk_mask(16, 16);
    assert_eq!(
        sample(&model, &schedule, &r, &m, 5).unwrap().data(),
        sample(&loaded, &sched2, &r, &m, 5).unwrap().data()
    );
}
