use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use imgcore::io::{read_npy, read_png, write_npy, write_png};
use imgcore::Image;
use lmdeblur::bgf::{masked_guided_filter, standard_guided_filter, GuideMode, GuidedFilterConfig};
use lmdeblur::clbdm::{
    assemble_confidence_map, detect_patches, score_detection, train_detector, DetectorConfig, DetectorNet, TrainConfig,
};
use lmdeblur::datagen::{desk_record_specs, generate_dataset, DatasetManifest, Split};
use lmdeblur::diffsandbox::{
    load_model, refine, save_model, train_diffusion, DiffusionModel, DiffusionSchedule, DiffusionTrainConfig,
    RefineConfig, UNetConfig,
};
use lmdeblur::harness::{bench, build_version, report_path, BenchConfig, MaskSource, Pipeline, PipelineConfig};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "lmdeblur", version = build_version(), about = "Local motion deblurring toolkit")]
struct Cli {
    /// Seed for generation, training, sampling and evaluation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML key-value file with settings for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory that relative output paths are written under.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Detected,
    GroundTruth,
    Empty,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset and its manifest.
    GenData {
        #[arg(long, default_value_t = 240)]
        count: usize,
        /// Image size as HxW.
        #[arg(long, default_value = "128x128")]
        size: String,
        /// Fraction of records tagged for evaluation.
        #[arg(long, default_value_t = 1.0 / 6.0)]
        eval_fraction: f64,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train the patch blur detector on a manifest's training split.
    TrainDetector {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 16)]
        patch: usize,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        /// Stop after this many optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value = "det.ckpt")]
        out: PathBuf,
    },
    /// Predict a blur mask for one image.
    Detect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        soft_out: Option<PathBuf>,
        /// Overrides the checkpoint's threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Masked guided filtering of a blurry image with a short exposure.
    Restore {
        #[arg(long)]
        blur: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        radius: usize,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        /// Guide every channel with the reference luma.
        #[arg(long)]
        luma: bool,
        /// Run the standard unmasked filter over the whole image.
        #[arg(long)]
        unmasked: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy diffusion model on crops of the training split.
    TrainDiffusion {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value = "diff.ckpt")]
        out: PathBuf,
    },
    /// Diffusion refinement of a restored image.
    Refine {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Blurry input used outside the mask; defaults to the restored image.
        #[arg(long)]
        blur: Option<PathBuf>,
        #[arg(long, default_value_t = 0.3)]
        strength: f64,
        #[arg(long, default_value_t = 32)]
        tile: usize,
        /// Keep the refined tiles everywhere instead of only inside the mask.
        #[arg(long)]
        no_recompose: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline on a manifest split and write a report.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        detector: Option<PathBuf>,
        #[arg(long)]
        diffusion: Option<PathBuf>,
        #[arg(long, value_enum)]
        mask_source: Option<MaskArg>,
        #[arg(long)]
        max_records: Option<usize>,
        /// Skip writing per-record images.
        #[arg(long)]
        no_images: bool,
    },
    /// Time box sums and the masked filter across radii.
    Bench {
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        box_size: Option<usize>,
        #[arg(long)]
        filter_size: Option<usize>,
    },
}

struct Ctx {
    seed: Option<u64>,
    config: Option<PathBuf>,
    out_dir: Option<PathBuf>,
}

impl Ctx {
    /// Settings from `--config`, or defaults.
    fn settings<T: DeserializeOwned + Default>(&self) -> Result<T> {
        match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
            None => Ok(T::default()),
        }
    }

    /// Resolves an output path under `--out-dir` and creates its parent.
    fn output(&self, path: &Path) -> Result<PathBuf> {
        let full = match &self.out_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        };
        if let Some(parent) = full.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        Ok(full)
    }
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s.split_once(['x', 'X']).context("size must look like HxW")?;
    Ok((h.trim().parse()?, w.trim().parse()?))
}

fn is_npy(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("npy"))
}

/// `.npy` paths hold raw f32 planes; anything else is read as PNG.
fn read_image(path: &Path) -> Result<Image> {
    let img = if is_npy(path) { read_npy(path) } else { read_png(path) };
    img.with_context(|| format!("reading {}", path.display()))
}

/// Masks may be stored with any channel count; the first channel is used.
fn read_mask(path: &Path) -> Result<Image> {
    let m = read_image(path)?;
    Ok(if m.channels() == 1 { m } else { m.channel(0) })
}

fn save_image(img: &Image, path: &Path) -> Result<()> {
    let res = if is_npy(path) { write_npy(img, path) } else { write_png(img, path) };
    res.with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let ctx = Ctx {
        seed: cli.seed,
        config: cli.config,
        out_dir: cli.out_dir,
    };
    match cli.command {
        Command::GenData {
            count,
            size,
            eval_fraction,
            out,
        } => {
            let (h, w) = parse_size(&size)?;
            let dir = ctx.output(&out)?;
            let specs = desk_record_specs(count, h, w, ctx.seed.unwrap_or(0), eval_fraction);
            let manifest = generate_dataset(&specs, &dir)?;
            println!(
                "wrote {} records ({} eval) to {}",
                manifest.records.len(),
                manifest.split(Split::Eval).count(),
                dir.display()
            );
        }
        Command::TrainDetector {
            data,
            patch,
            tau,
            steps,
            epochs,
            lr,
            out,
        } => {
            let manifest = DatasetManifest::load(&data)?;
            let mut train: TrainConfig = ctx.settings()?;
            train.max_steps = steps.or(train.max_steps);
            train.epochs = epochs.unwrap_or(train.epochs);
            train.lr = lr.unwrap_or(train.lr);
            let cfg = DetectorConfig {
                patch_size: patch,
                tau,
                seed: ctx.seed.unwrap_or(0),
                ..DetectorConfig::default()
            };
            let (net, log) = train_detector(&manifest, &cfg, &train)?;
            let path = ctx.output(&out)?;
            net.save(&cfg, &path)?;
            println!(
                "trained {} epochs, clean loss {:.4} -> {:.4}; saved {}",
                log.epochs.len(),
                log.initial_clean_loss,
                log.final_clean_loss(),
                path.display()
            );
            let eval = manifest.load_split(Split::Eval)?;
            if !eval.is_empty() {
                let pairs: Vec<_> = eval.iter().map(|s| (&s.blurred, &s.mask)).collect();
                let score = score_detection(&pairs, cfg.threshold, |b| Ok(detect_patches(b, &cfg, &net)?))?;
                println!(
                    "eval: patch acc {:.4}, pixel acc {:.4}, miou {:.4}",
                    score.patch_acc, score.pixel.acc, score.pixel.miou
                );
            }
        }
        Command::Detect {
            ckpt,
            input,
            out,
            soft_out,
            threshold,
        } => {
            let (net, mut cfg) = DetectorNet::load(&ckpt)?;
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            let img = read_image(&input)?;
            let pc = detect_patches(&img, &cfg, &net)?;
            let map = assemble_confidence_map(&pc.values, &pc.grid)?;
            save_image(&map.binary(cfg.threshold)?, &ctx.output(&out)?)?;
            if let Some(soft) = soft_out {
                save_image(&map.soft, &ctx.output(&soft)?)?;
            }
        }
        Command::Restore {
            blur,
            reference,
            mask,
            radius,
            eps,
            luma,
            unmasked,
            out,
        } => {
            let cfg = GuidedFilterConfig {
                radius,
                epsilon: eps,
                mode: if luma { GuideMode::Luma } else { GuideMode::PerChannel },
            };
            let (b, r) = (read_image(&blur)?, read_image(&reference)?);
            let h = if unmasked {
                standard_guided_filter(&b, &r, &cfg)?
            } else {
                let mask = mask.context("--mask is required unless --unmasked is given")?;
                masked_guided_filter(&b, &r, &read_mask(&mask)?, &cfg)?
            };
            save_image(&h, &ctx.output(&out)?)?;
        }
        Command::TrainDiffusion {
            data,
            steps,
            batch,
            lr,
            out,
        } => {
            let manifest = DatasetManifest::load(&data)?;
            let samples = manifest.load_split(Split::Train)?;
            let mut cfg: DiffusionTrainConfig = ctx.settings()?;
            cfg.steps = steps.unwrap_or(cfg.steps);
            cfg.batch_size = batch.unwrap_or(cfg.batch_size);
            cfg.lr = lr.unwrap_or(cfg.lr);
            cfg.seed = ctx.seed.unwrap_or(cfg.seed);
            let schedule = DiffusionSchedule::default();
            let model = DiffusionModel::new(UNetConfig::default(), cfg.seed);
            let (model, losses) = train_diffusion(model, schedule.clone(), &samples, &cfg)?;
            let path = ctx.output(&out)?;
            save_model(&model, &schedule, &path)?;
            let tail = &losses[losses.len().saturating_sub(20)..];
            println!(
                "trained {} steps, mean loss of the last {} steps {:.4}; saved {}",
                losses.len(),
                tail.len(),
                tail.iter().sum::<f64>() / tail.len().max(1) as f64,
                path.display()
            );
        }
        Command::Refine {
            ckpt,
            input,
            reference,
            mask,
            blur,
            strength,
            tile,
            no_recompose,
            out,
        } => {
            let (model, schedule) = load_model(&ckpt)?;
            let h = read_image(&input)?;
            let b = match blur {
                Some(p) => read_image(&p)?,
                None => h.clone(),
            };
            let cfg = RefineConfig {
                strength,
                tile,
                recompose: !no_recompose,
                seed: ctx.seed.unwrap_or(0),
            };
            let result = refine(&model, &schedule, &h, &read_image(&reference)?, &read_mask(&mask)?, &b, &cfg)?;
            save_image(&result, &ctx.output(&out)?)?;
        }
        Command::Eval {
            data,
            detector,
            diffusion,
            mask_source,
            max_records,
            no_images,
        } => {
            let mut cfg = match &ctx.config {
                Some(p) => PipelineConfig::load(p)?,
                None => PipelineConfig::default(),
            };
            cfg.detector = detector.or(cfg.detector);
            cfg.diffusion = diffusion.or(cfg.diffusion);
            if let Some(m) = mask_source {
                cfg.mask_source = match m {
                    MaskArg::Detected => MaskSource::Detected,
                    MaskArg::GroundTruth => MaskSource::GroundTruth,
                    MaskArg::Empty => MaskSource::Empty,
                };
            }
            cfg.max_records = max_records.or(cfg.max_records);
            cfg.seed = ctx.seed.unwrap_or(cfg.seed);
            let manifest = DatasetManifest::load(&data)?;
            let dir = ctx.out_dir.clone().unwrap_or_else(|| PathBuf::from("eval"));
            std::fs::create_dir_all(&dir)?;
            let report = Pipeline::load(&cfg)?.evaluate(&manifest, (!no_images).then_some(dir.as_path()))?;
            report.save(report_path(&dir))?;
            print!("{}", report.to_table());
            println!("report written to {}", report_path(&dir).display());
            if !report.failures.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Bench {
            runs,
            box_size,
            filter_size,
        } => {
            let mut cfg: BenchConfig = ctx.settings()?;
            cfg.runs = runs.unwrap_or(cfg.runs);
            cfg.box_size = box_size.unwrap_or(cfg.box_size);
            cfg.filter_size = filter_size.unwrap_or(cfg.filter_size);
            cfg.seed = ctx.seed.unwrap_or(cfg.seed);
            let table = bench(&cfg)?;
            print!("{}", table.to_table());
            let (box_ratio, filter_ratio) = table.scaling_ratio();
            println!("largest/smallest radius: box_sum {box_ratio:.2}x, filter {filter_ratio:.2}x");
            if let Some(dir) = &ctx.out_dir {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("bench.json"), serde_json::to_string_pretty(&table)?)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// The error chain joined by `: `, skipping causes that the previous
/// message already ends with.
fn describe(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let s = cause.to_string();
        if !parts.last().is_some_and(|p| p.ends_with(&s)) {
            parts.push(s);
        }
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
