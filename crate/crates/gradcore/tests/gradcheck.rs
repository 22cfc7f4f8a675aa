//! Central finite-difference checks (h = 1e-4) for every primitive op.
//!
//! Each case builds `loss = Σ wᵢ·op(inputs)ᵢ` with fixed random weights `w`
//! so that ops whose plain sum is constant (softmax) still get a
//! non-trivial gradient. The error measure is
//! `max|analytic − numeric| / max(max|analytic|, max|numeric|)`.

use gradcore::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 50;

type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

fn weighted_loss(g: &mut Graph, out: Var, weights: &Tensor) -> Var {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w).unwrap();
    g.sum(p)
}

fn eval(build: &Build, inputs: &[Tensor], weights: &Tensor) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let l = weighted_loss(&mut g, out, weights);
    g.value(l).item()
}

/// Returns the worst relative error over all inputs.
fn check(build: &Build, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let weights = Tensor::randn(g.shape(out).to_vec(), 1.0, rng);
    let l = weighted_loss(&mut g, out, &weights);
    let grads = g.backward(l).unwrap();

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).unwrap().data().to_vec();
        let mut numeric = vec![0.0; input.numel()];
        for i in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            numeric[i] = (eval(build, &plus, &weights) - eval(build, &minus, &weights)) / (2.0 * H);
        }
        let scale = analytic
            .iter()
            .chain(&numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        let diff = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        worst = worst.max(diff / scale);
    }
    worst
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, rng)
}

/// Values bounded away from zero so relu kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.5);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values (spaced ≥ 0.01 apart) so pooling has no near-ties.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

fn run_case(name: &str, build: &Build, make: &dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>) {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = make(&mut rng);
        worst = worst.max(check(build, &inputs, &mut rng));
    }
    println!("gradcheck {name:<12} worst rel err {worst:.2e}");
    assert!(worst < TOL, "{name}: {worst:e}");
}

#[test]
fn elementwise_ops() {
    run_case("add", &|g, v| g.add(v[0], v[1]), &|r| vec![rand_t(r, &[3, 4]), rand_t(r, &[3, 4])]);
    run_case("sub", &|g, v| g.sub(v[0], v[1]), &|r| vec![rand_t(r, &[5]), rand_t(r, &[5])]);
    run_case("mul", &|g, v| g.mul(v[0], v[1]), &|r| vec![rand_t(r, &[2, 3]), rand_t(r, &[2, 3])]);
    run_case("affine", &|g, v| Ok(g.affine(v[0], -1.7, 0.3)), &|r| vec![rand_t(r, &[6])]);
    run_case("mul_scalar", &|g, v| g.mul_scalar(v[0], v[1]), &|r| {
        vec![rand_t(r, &[2, 5]), rand_t(r, &[1])]
    });
    run_case("relu", &|g, v| Ok(g.relu(v[0])), &|r| vec![away_from_zero(r, &[4, 4])]);
    run_case("log", &|g, v| Ok(g.log(v[0])), &|r| {
        let t = rand_t(r, &[7]);
        vec![Tensor::new(vec![7], t.data().iter().map(|x| 0.2 + x.abs()).collect()).unwrap()]
    });
    run_case("exp", &|g, v| Ok(g.exp(v[0])), &|r| vec![rand_t(r, &[7])]);
    run_case("clamp", &|g, v| Ok(g.clamp(v[0], -0.5, 0.5)), &|r| {
        let t = away_from_zero(r, &[9]);
        // keep clear of the ±0.5 bounds
        let d = t.data().iter().map(|x| if (x.abs() - 0.5).abs() < 0.02 { x * 0.5 } else { *x }).collect();
        vec![Tensor::new(vec![9], d).unwrap()]
    });
    run_case("mask_mul", &|g, v| {
        let mask = Tensor::new(vec![2, 3], vec![1.0, 0.0, 1.0, 0.5, 0.0, 1.0]).unwrap();
        g.mask_mul(v[0], &mask)
    }, &|r| vec![rand_t(r, &[4, 2, 3])]);
}

#[test]
fn reductions_and_layout() {
    run_case("sum", &|g, v| Ok(g.sum(v[0])), &|r| vec![rand_t(r, &[3, 3])]);
    run_case("mean", &|g, v| Ok(g.mean(v[0])), &|r| vec![rand_t(r, &[2, 5])]);
    run_case("mean_axis", &|g, v| g.mean_axis(v[0], 1), &|r| vec![rand_t(r, &[2, 3, 4])]);
    run_case("transpose", &|g, v| g.transpose(v[0]), &|r| vec![rand_t(r, &[3, 5])]);
    run_case("reshape", &|g, v| g.reshape(v[0], &[6, 2]), &|r| vec![rand_t(r, &[3, 4])]);
    run_case("concat", &|g, v| g.concat(&[v[0], v[1]], 1), &|r| {
        vec![rand_t(r, &[2, 3, 2]), rand_t(r, &[2, 1, 2])]
    });
    run_case("slice", &|g, v| g.slice(v[0], 0, 1, 2), &|r| vec![rand_t(r, &[4, 3])]);
    run_case("add_bias", &|g, v| g.add_bias(v[0], v[1], 1), &|r| {
        vec![rand_t(r, &[2, 3, 2, 2]), rand_t(r, &[3])]
    });
    run_case("add_bias_nc", &|g, v| g.add_bias(v[0], v[1], 0), &|r| {
        vec![rand_t(r, &[2, 3, 2, 2]), rand_t(r, &[2, 3])]
    });
}

#[test]
fn linear_algebra_and_vision_ops() {
    run_case("matmul", &|g, v| g.matmul(v[0], v[1]), &|r| vec![rand_t(r, &[3, 4]), rand_t(r, &[4, 2])]);
    run_case("softmax_last", &|g, v| g.softmax(v[0], 1), &|r| vec![rand_t(r, &[3, 5])]);
    run_case("softmax_mid", &|g, v| g.softmax(v[0], 1), &|r| vec![rand_t(r, &[2, 4, 3])]);
    run_case("conv2d", &|g, v| g.conv2d(v[0], v[1]), &|r| {
        vec![rand_t(r, &[2, 2, 5, 4]), rand_t(r, &[3, 2, 3, 3])]
    });
    run_case("maxpool2d", &|g, v| g.maxpool2d(v[0]), &|r| vec![distinct(r, &[2, 2, 4, 6])]);
    run_case("upsample2x", &|g, v| g.upsample2x(v[0]), &|r| vec![rand_t(r, &[1, 2, 3, 2])]);
}

#[test]
fn composite_network_gradient() {
    // conv → relu → pool → mean over space → linear → softmax → log
    let build: &Build = &|g, v| {
        let h = g.conv2d(v[0], v[1])?;
        let h = g.add_bias(h, v[2], 1)?;
        let h = g.relu(h);
        let h = g.maxpool2d(h)?;
        let h = g.reshape(h, &[2, 4])?;
        let h = g.mean_axis(h, 1)?;
        let h = g.reshape(h, &[1, 2])?;
        let h = g.matmul(h, v[3])?;
        let p = g.softmax(h, 1)?;
        Ok(g.log(p))
    };
    run_case("network", build, &|r| {
        vec![
            distinct(r, &[1, 1, 4, 4]),
            rand_t(r, &[2, 1, 3, 3]),
            rand_t(r, &[2]),
            rand_t(r, &[2, 3]),
        ]
    });
}
