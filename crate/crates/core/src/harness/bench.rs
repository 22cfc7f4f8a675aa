use std::fmt::Write as _;
use std::time::Instant;

use imgcore::{box_sum, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bgf::{masked_guided_filter, GuidedFilterConfig};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Side of the square image for `box_sum`.
    pub box_size: usize,
    /// Side of the square image for the masked filter.
    pub filter_size: usize,
    pub radii: Vec<usize>,
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            box_size: 1024,
            filter_size: 512,
            radii: vec![2, 4, 8, 16, 32],
            runs: 5,
            warmup: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub radius: usize,
    /// Median wall-clock milliseconds.
    pub box_sum_ms: f64,
    pub filter_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn time_median(warmup: usize, runs: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(times))
}

fn random_image(rng: &mut ChaCha8Rng, size: usize, channels: usize) -> Image {
    Image::from_fn(size, size, channels, |_, _, _| rng.gen::<f32>())
}

/// Times `box_sum` and `masked_guided_filter` at each radius on fixed random
/// images: warmup runs, then the median of `runs`.
pub fn bench(cfg: &BenchConfig) -> Result<BenchTable> {
    if cfg.runs == 0 || cfg.radii.is_empty() {
        return Err(invalid("bench needs at least one run and one radius"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plane = random_image(&mut rng, cfg.box_size, 1);
    let b = random_image(&mut rng, cfg.filter_size, 3);
    let r = random_image(&mut rng, cfg.filter_size, 3);
    let half = cfg.filter_size as f32 / 2.0;
    let m = Image::from_fn(cfg.filter_size, cfg.filter_size, 1, |y, x, _| {
        let (dy, dx) = (y as f32 - half, x as f32 - half);
        if dy * dy + dx * dx < half * half * 0.5 {
            1.0
        } else {
            0.0
        }
    });
    let mut rows = Vec::with_capacity(cfg.radii.len());
    for &radius in &cfg.radii {
        let box_sum_ms = time_median(cfg.warmup, cfg.runs, || {
            std::hint::black_box(box_sum(&plane, radius));
            Ok(())
        })?;
        let fc = GuidedFilterConfig::new(radius, 1e-4);
        let filter_ms = time_median(cfg.warmup, cfg.runs, || {
            std::hint::black_box(masked_guided_filter(&b, &r, &m, &fc)?);
            Ok(())
        })?;
        log::info!("radius {radius}: box_sum {box_sum_ms:.2} ms, filter {filter_ms:.2} ms");
        rows.push(BenchRow {
            radius,
            box_sum_ms,
            filter_ms,
        });
    }
    Ok(BenchTable { config: cfg.clone(), rows })
}

impl BenchTable {
    /// Time at the largest radius over time at the smallest, for
    /// (`box_sum`, filter).
    pub fn scaling_ratio(&self) -> (f64, f64) {
        let lo = self.rows.iter().min_by_key(|r| r.radius).expect("bench has rows");
        let hi = self.rows.iter().max_by_key(|r| r.radius).expect("bench has rows");
        (hi.box_sum_ms / lo.box_sum_ms, hi.filter_ms / lo.filter_ms)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>6} {:>14} {:>14}\n",
            "radius",
            format!("box {}² ms", self.config.box_size),
            format!("filter {}² ms", self.config.filter_size)
        );
        for r in &self.rows {
            let _ = writeln!(out, "{:>6} {:>14.3} {:>14.3}", r.radius, r.box_sum_ms, r.filter_ms);
        }
        out
    }
}
