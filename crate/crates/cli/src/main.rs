//! droaug: train image classifiers with augmentation plus a gradient-norm
//! variation penalty, then evaluate them under PGD attacks and calibrated
//! corruptions.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use droaug_core::adversary::{robust_accuracy, AttackConfig};
use droaug_core::corruptions::{
    build_corrupted_set, calibrate_severity, default_spec, mean_corruption_accuracy,
    CalibrationTarget, CorruptionKind, CorruptionSpec, ALL_KINDS,
};
use droaug_core::data::{digits, load_cifar_binary, load_idx, write_idx_images, write_idx_labels};
use droaug_core::error::ErrorClass;
use droaug_core::models::{load_checkpoint, save_checkpoint};
use droaug_core::report::{attacks_to_csv, emit_report, metrics_from_csv, metrics_to_csv};
use droaug_core::robust::{
    approximation_gap_study, gap_rows_to_csv, BallNorm, GradNorm, RobustLossConfig,
    WdroOracleConfig,
};
use droaug_core::train::{
    train, AttackMetrics, Augmentation, CorruptionMetrics, DataSource, MetricsReport, TrainConfig,
};
use droaug_core::{Dataset, Model, Scalar};

#[derive(Parser)]
#[command(name = "droaug", version, about = "Variation-regularized robust training toolkit")]
struct Cli {
    /// JSON config file (training fields mirror the run config schema).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root RNG seed (overrides the config seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Floating-point precision for training/evaluation math.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    /// Output directory for checkpoints, metrics, and reports.
    #[arg(long, global = true, default_value = "runs/out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// IDX image file (MNIST layout).
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// CIFAR binary file (record size auto-detected).
    #[arg(long)]
    cifar: Option<PathBuf>,
    /// Synthesize this many samples from the bundled digit corpus.
    #[arg(long)]
    synth: Option<usize>,
    /// Side length for synthesized digits.
    #[arg(long, default_value_t = 28)]
    synth_side: usize,
    /// Keep only the first N samples.
    #[arg(long)]
    limit: Option<usize>,
}

impl DataArgs {
    fn load<F: Scalar>(&self, seed: u64) -> droaug_core::Result<Dataset<F>> {
        let ds = match (&self.images, &self.labels, &self.cifar, self.synth) {
            (Some(i), Some(l), None, None) => load_idx(i, l)?,
            (None, None, Some(c), None) => load_cifar_binary(c)?,
            (None, None, None, Some(n)) => digits::synth_digits(
                &digits::DigitSynthConfig {
                    count: n,
                    side: self.synth_side,
                    ..Default::default()
                },
                seed,
            )?,
            _ => {
                return Err(droaug_core::Error::Invalid(
                    "provide exactly one of --images/--labels, --cifar, or --synth".into(),
                ))
            }
        };
        Ok(match self.limit {
            Some(n) => ds.take(n),
            None => ds,
        })
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model per the JSON config (flags override).
    Train {
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Variation-penalty weight ρ.
        #[arg(long)]
        rho: Option<f64>,
        /// Augmentation strategy: none, mixup, augmix, or noisymix
        /// (defaults per strategy; use the config file for full control).
        #[arg(long)]
        augmentation: Option<String>,
        #[arg(long)]
        train_limit: Option<usize>,
    },
    /// Clean accuracy of a checkpoint on a dataset.
    EvalClean {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// PGD robust accuracy; appends eps/steps/accuracy rows to metrics.csv.
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Budgets; accepts floats or fractions like 8/255.
        #[arg(long, value_parser = parse_eps, num_args = 1.., default_values = ["4/255", "8/255", "16/255"])]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        /// Step size (defaults to eps/8).
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        random_start: bool,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Generate corrupted copies of a dataset (IDX + JSON manifests), and
    /// evaluate a checkpoint on them when given.
    Corrupt {
        /// Comma-separated corruption kinds, or "all".
        #[arg(long, default_value = "all")]
        kinds: String,
        /// Severity labels to generate.
        #[arg(long, value_delimiter = ',', default_values_t = [1u8, 2, 3, 4, 5])]
        severities: Vec<u8>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Calibration JSON produced by `calibrate` (kind → severity → intensity).
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Bisect corruption intensities to hit target accuracies with a
    /// reference checkpoint.
    Calibrate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Kinds to calibrate (comma separated or "all").
        #[arg(long, default_value = "all")]
        kinds: String,
        /// Anchor preset: c10-like (85..51%) or c100-like (60..20%).
        #[arg(long, default_value = "c10-like")]
        anchors: String,
        #[arg(long, default_value_t = 0.02)]
        tolerance: f64,
        /// Intensity search bracket.
        #[arg(long, default_value_t = 0.0)]
        lo: f64,
        #[arg(long, default_value_t = 4.0)]
        hi: f64,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Gap between the brute-force W-DRO oracle and the surrogate risk
    /// across ball radii (always evaluated in f64).
    VerifyGap {
        /// Checkpoint to verify; otherwise a fresh model is built.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "cnn-small")]
        model: String,
        /// Number of samples in the evaluation batch.
        #[arg(long, default_value_t = 8)]
        samples: usize,
        /// Ball radii; defaults to doublings of 0.001 up to 0.064.
        #[arg(long, value_delimiter = ',')]
        rhos: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = BallArg::L2)]
        ball: BallArg,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Re-render summary.json and SVG charts from a metrics CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Write a synthesized digit dataset as IDX train/test pairs.
    GenData {
        #[arg(long, default_value_t = 10_000)]
        train_count: usize,
        #[arg(long, default_value_t = 2_000)]
        test_count: usize,
        #[arg(long, default_value_t = 28)]
        side: usize,
        #[arg(long, default_value_t = 1.0)]
        jitter: f64,
        #[arg(long, default_value_t = 0.08)]
        noise_std: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BallArg {
    L2,
    Linf,
}

fn parse_eps(s: &str) -> Result<f64, String> {
    if let Some((num, den)) = s.split_once('/') {
        let n: f64 = num.trim().parse().map_err(|_| format!("bad eps '{s}'"))?;
        let d: f64 = den.trim().parse().map_err(|_| format!("bad eps '{s}'"))?;
        if d == 0.0 {
            return Err("eps denominator is zero".into());
        }
        return Ok(n / d);
    }
    s.parse().map_err(|_| format!("bad eps '{s}'"))
}

fn parse_kinds(s: &str) -> droaug_core::Result<Vec<CorruptionKind>> {
    if s == "all" {
        return Ok(ALL_KINDS.to_vec());
    }
    s.split(',')
        .map(|k| CorruptionKind::parse(k.trim()).map_err(Into::into))
        .collect()
}

fn load_train_config(cli: &Cli) -> droaug_core::Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(path) => TrainConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => TrainConfig {
            model: "cnn-small".into(),
            epochs: 10,
            batch_size: 128,
            lr_init: 0.1,
            lr_min: 1e-5,
            momentum: 0.9,
            weight_decay: 5e-4,
            augmentation: Augmentation::None,
            robust: RobustLossConfig::default(),
            seed: 0,
            data: DataSource::SynthDigits {
                train_count: 10_000,
                test_count: 2_000,
                side: 28,
                jitter: 1.0,
                noise_std: 0.08,
            },
            train_limit: None,
            eval_limit: None,
        },
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Merge existing metrics.csv rows with new attack/corruption results.
fn merge_metrics(out_dir: &Path, update: impl FnOnce(&mut MetricsReport)) -> droaug_core::Result<()> {
    let path = out_dir.join("metrics.csv");
    let mut report = if path.exists() {
        metrics_from_csv(&std::fs::read_to_string(&path)?)?
    } else {
        MetricsReport::default()
    };
    update(&mut report);
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(&path, metrics_to_csv(&report))?;
    emit_report(&report, out_dir)?;
    Ok(())
}

fn run<F: Scalar>(cli: &Cli) -> droaug_core::Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.cmd {
        Cmd::Train {
            model,
            epochs,
            batch_size,
            rho,
            augmentation,
            train_limit,
        } => {
            let mut cfg = load_train_config(cli)?;
            if let Some(m) = model {
                cfg.model = m.clone();
            }
            if let Some(e) = epochs {
                cfg.epochs = *e;
            }
            if let Some(b) = batch_size {
                cfg.batch_size = *b;
            }
            if let Some(r) = rho {
                cfg.robust.rho = *r;
            }
            if let Some(t) = train_limit {
                cfg.train_limit = Some(*t);
            }
            if let Some(a) = augmentation {
                cfg.augmentation = match a.as_str() {
                    "none" => Augmentation::None,
                    "mixup" => Augmentation::Mixup(Default::default()),
                    "augmix" => Augmentation::Augmix(Default::default()),
                    "noisymix" => Augmentation::Noisymix(Default::default()),
                    other => {
                        return Err(droaug_core::Error::Invalid(format!(
                            "unknown augmentation '{other}'"
                        )))
                    }
                };
            }
            cfg.validate()?;
            let (model, report) = train::<F>(&cfg)?;
            std::fs::create_dir_all(&cli.out)?;
            let ckpt = cli.out.join("checkpoint.droa");
            save_checkpoint(&model, &ckpt)?;
            std::fs::write(
                cli.out.join("config.json"),
                serde_json::to_string_pretty(&cfg)?,
            )?;
            let files = emit_report(&report, &cli.out)?;
            for e in &report.epochs {
                println!(
                    "epoch {:>3}: loss {:.4} penalty {:.6} clean {}",
                    e.epoch,
                    e.train_loss,
                    e.penalty,
                    e.clean_accuracy
                        .map_or("-".into(), |a| format!("{a:.4}"))
                );
            }
            println!("checkpoint: {}", ckpt.display());
            for f in files {
                println!("wrote: {}", f.display());
            }
            Ok(())
        }
        Cmd::EvalClean { checkpoint, data } => {
            let model: Model<F> = load_checkpoint(checkpoint)?;
            let ds: Dataset<F> = data.load(seed)?;
            let acc = model.accuracy(&ds)?;
            println!("clean_accuracy {acc:.4} ({} samples)", ds.len());
            Ok(())
        }
        Cmd::Attack {
            checkpoint,
            eps,
            steps,
            step_size,
            random_start,
            data,
        } => {
            let model: Model<F> = load_checkpoint(checkpoint)?;
            let ds: Dataset<F> = data.load(seed)?;
            let mut rows = Vec::new();
            for &e in eps {
                let cfg = AttackConfig {
                    eps: e,
                    steps: *steps,
                    step_size: *step_size,
                    random_start: *random_start,
                    seed,
                };
                let acc = robust_accuracy(&model, &ds, &cfg)?;
                println!("eps {e:.6} steps {steps}: robust_accuracy {acc:.4}");
                rows.push(AttackMetrics {
                    eps: e,
                    steps: *steps,
                    accuracy: acc,
                });
            }
            std::fs::create_dir_all(&cli.out)?;
            std::fs::write(cli.out.join("attacks.csv"), attacks_to_csv(&rows))?;
            merge_metrics(&cli.out, |r| r.attacks.extend(rows))?;
            println!("updated: {}", cli.out.join("metrics.csv").display());
            Ok(())
        }
        Cmd::Corrupt {
            kinds,
            severities,
            checkpoint,
            calibration,
            data,
        } => {
            let ds: Dataset<F> = data.load(seed)?;
            let calibrated: Option<serde_json::Value> = calibration
                .as_ref()
                .map(|p| -> droaug_core::Result<_> {
                    Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
                })
                .transpose()?;
            let mut specs = Vec::new();
            for kind in parse_kinds(kinds)? {
                for &s in severities {
                    let spec = match calibrated
                        .as_ref()
                        .and_then(|c| c.get(kind.name()))
                        .and_then(|k| k.get(s.to_string()))
                        .and_then(|v| v.as_f64())
                    {
                        Some(intensity) => {
                            CorruptionSpec::from_intensity(kind, intensity).with_severity(s)
                        }
                        None => default_spec(kind, s),
                    };
                    specs.push(spec);
                }
            }
            let dir = cli.out.join("corrupted");
            let sets = build_corrupted_set(&ds, &specs, seed, Some(&dir))?;
            println!("wrote {} corrupted sets to {}", sets.len(), dir.display());
            if let Some(ckpt) = checkpoint {
                let model: Model<F> = load_checkpoint(ckpt)?;
                let report = mean_corruption_accuracy(&model, &sets)?;
                let mut rows = Vec::new();
                for row in &report.rows {
                    println!(
                        "{:>14} s{}: accuracy {:.4}",
                        row.kind.name(),
                        row.severity.unwrap_or(0),
                        row.accuracy
                    );
                    rows.push(CorruptionMetrics {
                        kind: row.kind.name().into(),
                        severity: row.severity.unwrap_or(0),
                        accuracy: row.accuracy,
                    });
                }
                println!("mean corruption accuracy {:.4}", report.mean_accuracy);
                merge_metrics(&cli.out, |r| r.corruptions.extend(rows))?;
            }
            Ok(())
        }
        Cmd::Calibrate {
            checkpoint,
            kinds,
            anchors,
            tolerance,
            lo,
            hi,
            data,
        } => {
            let model: Model<F> = load_checkpoint(checkpoint)?;
            let ds: Dataset<F> = data.load(seed)?;
            let target = match anchors.as_str() {
                "c10-like" => CalibrationTarget::c10_like(),
                "c100-like" => CalibrationTarget::c100_like(),
                other => {
                    return Err(droaug_core::Error::Invalid(format!(
                        "unknown anchor preset '{other}'"
                    )))
                }
            };
            target.validate()?;
            let mut out = serde_json::Map::new();
            for kind in parse_kinds(kinds)? {
                let mut per_kind = serde_json::Map::new();
                for (&severity, &acc_target) in &target.anchors {
                    let result = calibrate_severity(
                        kind,
                        acc_target,
                        &model,
                        &ds,
                        (*lo, *hi),
                        *tolerance,
                        seed,
                    )?;
                    println!(
                        "{:>14} s{severity}: intensity {:.5} accuracy {:.4} (target {acc_target:.2}, {} evals)",
                        kind.name(),
                        result.intensity,
                        result.achieved_accuracy,
                        result.evaluations
                    );
                    per_kind.insert(
                        severity.to_string(),
                        serde_json::json!(result.intensity),
                    );
                }
                out.insert(kind.name().to_string(), per_kind.into());
            }
            std::fs::create_dir_all(&cli.out)?;
            let path = cli.out.join("calibration.json");
            std::fs::write(&path, serde_json::to_string_pretty(&out)?)?;
            println!("wrote: {}", path.display());
            Ok(())
        }
        Cmd::VerifyGap {
            checkpoint,
            model,
            samples,
            rhos,
            ball,
            data,
        } => {
            // Verification always runs in 64-bit.
            let ds: Dataset<f64> = data.load(seed)?;
            let m: Model<f64> = match checkpoint {
                Some(p) => load_checkpoint(p)?,
                None => {
                    let spec = droaug_core::train::resolve_model_spec(
                        model,
                        ds.image_shape(),
                        ds.classes,
                    );
                    droaug_core::build_model(&spec, seed)?
                }
            };
            let idx: Vec<usize> = (0..(*samples).min(ds.len())).collect();
            let batch = ds.batch(&idx);
            let rhos = rhos
                .clone()
                .unwrap_or_else(|| (0..7).map(|k| 0.001 * 2f64.powi(k)).collect());
            let mut oracle = WdroOracleConfig::ascent(rhos[0]);
            oracle.ball_norm = match ball {
                BallArg::L2 => BallNorm::L2,
                BallArg::Linf => BallNorm::Linf,
            };
            oracle.seed = seed;
            let robust_cfg = RobustLossConfig {
                grad_norm: match ball {
                    BallArg::L2 => GradNorm::L2,
                    BallArg::Linf => GradNorm::L1,
                },
                ..Default::default()
            };
            let rows = approximation_gap_study(&m, &batch, &rhos, &robust_cfg, &oracle)?;
            for r in &rows {
                println!(
                    "rho {:.4}: Rn {:.6} D {:.6} gap {:.3e} slope {:.3}",
                    r.rho, r.r_n, r.d_oracle, r.gap, r.slope_running
                );
            }
            std::fs::create_dir_all(&cli.out)?;
            let path = cli.out.join("gap.csv");
            std::fs::write(&path, gap_rows_to_csv(&rows))?;
            println!("wrote: {}", path.display());
            Ok(())
        }
        Cmd::Report { metrics } => {
            let report = metrics_from_csv(&std::fs::read_to_string(metrics)?)?;
            let files = emit_report(&report, &cli.out)?;
            for f in files {
                println!("wrote: {}", f.display());
            }
            Ok(())
        }
        Cmd::GenData {
            train_count,
            test_count,
            side,
            jitter,
            noise_std,
        } => {
            std::fs::create_dir_all(&cli.out)?;
            let mk = |count: usize, tag: u64| {
                digits::synth_digits::<f32>(
                    &digits::DigitSynthConfig {
                        count,
                        side: *side,
                        jitter: *jitter,
                        noise_std: *noise_std,
                        ..Default::default()
                    },
                    droaug_core::rng::derive_seed(seed, &[droaug_core::rng::tags::DATA, tag]),
                )
            };
            for (name, ds) in [("train", mk(*train_count, 1)?), ("test", mk(*test_count, 2)?)] {
                let img = cli.out.join(format!("digits-{name}-images.idx"));
                let lab = cli.out.join(format!("digits-{name}-labels.idx"));
                write_idx_images(&img, &ds.images)?;
                write_idx_labels(&lab, &ds.labels)?;
                println!("wrote: {} ({} samples)", img.display(), ds.len());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.precision {
        Precision::F32 => run::<f32>(&cli),
        Precision::F64 => run::<f64>(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
                ErrorClass::Internal => 1,
            };
            ExitCode::from(code)
        }
    }
}
