//! Command-line front end tying the pipeline together.
//!
//! Verbs: `train`, `finetune`, `predict`, `evaluate`, `phantom`. Exit codes:
//! 0 success, 1 validation error (bad arguments, unreadable or malformed
//! inputs), 2 runtime error (failures after compute starts).

mod config;

use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use cardioseg::data::{
    self, AugmentationConfig, Dataset, LoadOptions, ManifestRow, Structure,
};
use cardioseg::metrics::{self, MetricsReport};
use cardioseg::net::{self, NetworkSpec};
use cardioseg::phantom::{self, PhantomSpec};
use cardioseg::train::{self as trainer, TrainConfig};

use config::{pick, pick_opt, FileConfig};

#[derive(Parser, Debug)]
#[command(name = "cardioseg", version, about = "Fully convolutional ventricle segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from random initialization.
    Train(TrainArgs),
    /// Train starting from transplanted source weights at a reduced
    /// learning rate.
    Finetune(TrainArgs),
    /// Segment images listed in a manifest with a trained model.
    Predict(PredictArgs),
    /// Score predictions against ground-truth contours.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic phantom dataset.
    Phantom(PhantomArgs),
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Flat `key = value` configuration file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest CSV (id,image,contour_endo,contour_epi).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Network description file; defaults to the built-in architecture.
    #[arg(long)]
    arch: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-image parallelism (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Class count of the built-in architecture.
    #[arg(long = "k-classes")]
    k_classes: Option<usize>,
    /// Ground-truth structure: endo, epi, or multi.
    #[arg(long)]
    structure: Option<String>,
    /// Augmentation preset: none, flips, sunnybrook, lvsc, rvsc.
    #[arg(long)]
    augment: Option<String>,
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long = "base-lr")]
    base_lr: Option<f64>,
    #[arg(long)]
    power: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long = "weight-decay")]
    weight_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// Fraction of manifest rows held out for the development Dice.
    #[arg(long = "dev-split")]
    dev_split: Option<f64>,
    /// Source weight file to transplant from (finetune only).
    #[arg(long = "source-weights")]
    source_weights: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained weight file.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory holding `<id>_mask.pgm` predictions.
    #[arg(long)]
    pred: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Phantom family: a (ventricle rings) or b (crescent).
    #[arg(long)]
    family: Option<String>,
    /// Square image side in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Number of images.
    #[arg(long)]
    count: Option<usize>,
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn validation(e: impl Display) -> Self {
        CliError::Validation(e.to_string())
    }

    fn runtime(e: impl Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, anything else is a
            // validation failure.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(args) => run_train(args, false),
        Command::Finetune(args) => run_train(args, true),
        Command::Predict(args) => run_predict(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Phantom(args) => run_phantom(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Settings shared by every verb, resolved as flags > file > defaults.
struct Resolved {
    file: FileConfig,
    manifest: Option<PathBuf>,
    arch: Option<PathBuf>,
    out: PathBuf,
    seed: u64,
    k_classes: Option<usize>,
    structure: Structure,
    augment: AugmentationConfig,
}

fn resolve_common(common: &CommonArgs) -> CliResult<Resolved> {
    let file = match &common.config {
        Some(path) => FileConfig::load(path).map_err(CliError::Validation)?,
        None => FileConfig::default(),
    };
    let manifest = common
        .manifest
        .clone()
        .or_else(|| file.get_path("manifest"));
    let arch = common.arch.clone().or_else(|| file.get_path("arch"));
    let out = common
        .out
        .clone()
        .or_else(|| file.get_path("out"))
        .unwrap_or_else(|| PathBuf::from("out"));
    let seed = pick(common.seed, file.get_parsed("seed"), 0).map_err(CliError::Validation)?;
    let k_classes =
        pick_opt(common.k_classes, file.get_parsed("k_classes")).map_err(CliError::Validation)?;
    let structure_name = common
        .structure
        .clone()
        .or_else(|| file.get("structure").map(String::from))
        .unwrap_or_else(|| "endo".to_string());
    let structure = Structure::parse(&structure_name).map_err(CliError::validation)?;
    let augment_name = common
        .augment
        .clone()
        .or_else(|| file.get("augment").map(String::from))
        .unwrap_or_else(|| "flips".to_string());
    let augment = match augment_name.as_str() {
        "none" => AugmentationConfig::none(),
        "flips" => AugmentationConfig::flips_and_rotations(),
        "sunnybrook" => AugmentationConfig::sunnybrook(),
        "lvsc" => AugmentationConfig::lvsc(),
        "rvsc" => AugmentationConfig::rvsc(),
        other => {
            return Err(CliError::Validation(format!(
                "unknown augmentation preset {other}"
            )))
        }
    };
    if let Some(workers) = pick_opt(common.workers, file.get_parsed("workers"))
        .map_err(CliError::Validation)?
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(CliError::runtime)?;
    }
    Ok(Resolved {
        file,
        manifest,
        arch,
        out,
        seed,
        k_classes,
        structure,
        augment,
    })
}

fn require_file(path: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    let path = path
        .clone()
        .ok_or_else(|| CliError::Validation(format!("missing required {what}")))?;
    if !path.exists() {
        return Err(CliError::Validation(format!(
            "{what} {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

/// Architecture plus class count: an explicit network file wins, otherwise
/// the built-in layout at the requested class count.
fn resolve_spec(resolved: &Resolved) -> CliResult<(NetworkSpec, usize)> {
    match &resolved.arch {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Validation(format!(
                    "network file {} does not exist",
                    path.display()
                )));
            }
            let text = std::fs::read_to_string(path).map_err(CliError::validation)?;
            let spec = NetworkSpec::parse(&text).map_err(CliError::validation)?;
            let k = spec.classes().map_err(CliError::validation)?;
            if let Some(flag_k) = resolved.k_classes {
                if flag_k != k {
                    return Err(CliError::Validation(format!(
                        "--k-classes {flag_k} conflicts with network file ({k} classes)"
                    )));
                }
            }
            Ok((spec, k))
        }
        None => {
            let k = resolved
                .k_classes
                .unwrap_or_else(|| resolved.structure.classes());
            Ok((net::default_spec(k, 1), k))
        }
    }
}

fn split_rows(rows: Vec<ManifestRow>, dev_split: f64, seed: u64) -> (Vec<ManifestRow>, Vec<ManifestRow>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if dev_split <= 0.0 || rows.len() < 2 {
        return (rows, vec![]);
    }
    let mut indices: Vec<usize> = (0..rows.len()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_dead_beef);
    indices.shuffle(&mut rng);
    let dev_count = ((rows.len() as f64 * dev_split).round() as usize)
        .clamp(1, rows.len() - 1);
    let dev_set: std::collections::HashSet<usize> = indices[..dev_count].iter().copied().collect();
    let mut train_rows = Vec::new();
    let mut dev_rows = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        if dev_set.contains(&i) {
            dev_rows.push(row);
        } else {
            train_rows.push(row);
        }
    }
    (train_rows, dev_rows)
}

fn print_warnings(dataset: &Dataset) {
    for w in &dataset.warnings {
        eprintln!("warning: {w}");
    }
}

fn run_train(args: TrainArgs, finetune: bool) -> CliResult<()> {
    let resolved = resolve_common(&args.common)?;
    let file = &resolved.file;
    let defaults = if finetune {
        TrainConfig::fine_tune_default()
    } else {
        TrainConfig::default()
    };
    let cfg = TrainConfig {
        base_lr: pick(args.base_lr, file.get_parsed("base_lr"), defaults.base_lr)
            .map_err(CliError::Validation)?,
        power: pick(args.power, file.get_parsed("power"), defaults.power)
            .map_err(CliError::Validation)?,
        momentum: pick(args.momentum, file.get_parsed("momentum"), defaults.momentum)
            .map_err(CliError::Validation)?,
        weight_decay: pick(
            args.weight_decay,
            file.get_parsed("weight_decay"),
            defaults.weight_decay,
        )
        .map_err(CliError::Validation)?,
        epochs: pick(args.epochs, file.get_parsed("epochs"), defaults.epochs)
            .map_err(CliError::Validation)?,
        max_iter: pick_opt(args.max_iter, file.get_parsed("max_iter"))
            .map_err(CliError::Validation)?,
        batch_size: pick(args.batch_size, file.get_parsed("batch_size"), defaults.batch_size)
            .map_err(CliError::Validation)?,
        seed: resolved.seed,
        fine_tune: finetune,
        classes: 2, // replaced below once the spec is known
    };
    let dev_split = pick(args.dev_split, file.get_parsed("dev_split"), 0.1)
        .map_err(CliError::Validation)?;
    let source_weights = args
        .source_weights
        .clone()
        .or_else(|| file.get_path("source_weights"));

    // Validate every referenced path before compute starts.
    let manifest = require_file(&resolved.manifest, "--manifest")?;
    let (spec, classes) = resolve_spec(&resolved)?;
    let cfg = TrainConfig { classes, ..cfg };
    cfg.validate().map_err(CliError::validation)?;
    let source_weights = if finetune {
        Some(require_file(&Some(source_weights.ok_or_else(|| {
            CliError::Validation("finetune requires --source-weights".into())
        })?), "--source-weights")?)
    } else {
        None
    };
    let rows = data::parse_manifest(&manifest).map_err(CliError::validation)?;
    if rows.is_empty() {
        return Err(CliError::Validation(format!(
            "manifest {} lists no samples",
            manifest.display()
        )));
    }
    std::fs::create_dir_all(&resolved.out).map_err(CliError::validation)?;

    let (train_rows, dev_rows) = split_rows(rows, dev_split, resolved.seed);
    let train_data = data::load_rows(
        &train_rows,
        &LoadOptions {
            cfg: resolved.augment.clone(),
            train: true,
            structure: resolved.structure,
        },
    )
    .map_err(CliError::runtime)?;
    print_warnings(&train_data);
    let dev_data = data::load_rows(
        &dev_rows,
        &LoadOptions {
            cfg: resolved.augment.clone(),
            train: false,
            structure: resolved.structure,
        },
    )
    .map_err(CliError::runtime)?;
    print_warnings(&dev_data);

    let (store, report) = if let Some(source) = source_weights {
        trainer::fine_tune(&spec, &source, &train_data.samples, &dev_data.samples, &cfg)
            .map_err(CliError::runtime)?
    } else {
        let init = net::init_xavier(&spec, cfg.seed).map_err(CliError::runtime)?;
        trainer::train(&spec, init, &train_data.samples, &dev_data.samples, &cfg)
            .map_err(CliError::runtime)?
    };

    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if !report.transplanted.is_empty() {
        println!(
            "transplanted {} layers: {}",
            report.transplanted.len(),
            report.transplanted.join(", ")
        );
        if !report.skipped.is_empty() {
            println!("initialized fresh: {}", report.skipped.join(", "));
        }
    }

    let weights_path = resolved.out.join("weights.fcnw");
    store.save(&weights_path).map_err(CliError::runtime)?;
    let arch_path = resolved.out.join("network.txt");
    std::fs::write(&arch_path, spec.serialize()).map_err(CliError::runtime)?;
    let report_path = resolved.out.join("train_report.csv");
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(CliError::runtime)?;
    std::fs::write(&report_path, csv).map_err(CliError::runtime)?;

    println!(
        "trained {} iterations over {} samples; weights -> {}",
        report.iters.len(),
        train_data.samples.len(),
        weights_path.display()
    );
    match report.final_dev_dice() {
        Some(d) => println!("final development-split Dice: {d:.4}"),
        None => println!("final development-split Dice: n/a (no development split)"),
    }
    Ok(())
}

fn run_predict(args: PredictArgs) -> CliResult<()> {
    let resolved = resolve_common(&args.common)?;
    let manifest = require_file(&resolved.manifest, "--manifest")?;
    let weights_path = require_file(
        &args
            .weights
            .clone()
            .or_else(|| resolved.file.get_path("weights")),
        "--weights",
    )?;
    let (spec, classes) = resolve_spec(&resolved)?;
    let (store, _) =
        net::load_weights(&weights_path, &spec, true).map_err(CliError::validation)?;
    let rows = data::parse_manifest(&manifest).map_err(CliError::validation)?;
    std::fs::create_dir_all(&resolved.out).map_err(CliError::validation)?;

    let inputs =
        data::load_prediction_inputs(&rows, &resolved.augment).map_err(CliError::runtime)?;
    let out_dir = resolved.out.clone();
    let maxval = (classes - 1).max(1) as u8;
    let lines: Vec<String> = inputs
        .par_iter()
        .map(|input| -> Result<String, String> {
            let started = Instant::now();
            let shape = input.image.shape();
            let heat = net::forward(&spec, &store, &input.image).map_err(|e| e.to_string())?;
            let mask = net::argmax_mask(&heat);
            data::write_pgm8(
                out_dir.join(format!("{}_mask.pgm", input.id)),
                shape.h,
                shape.w,
                maxval,
                &mask,
            )
            .map_err(|e| e.to_string())?;
            let foreground: Vec<u8> = mask.iter().map(|&v| (v != 0) as u8).collect();
            let contour_note = match metrics::mask_to_contour(&foreground, shape.h, shape.w) {
                Some(contour) => {
                    contour
                        .write_file(out_dir.join(format!("{}_contour.txt", input.id)))
                        .map_err(|e| e.to_string())?;
                    String::new()
                }
                None => "; no object detected, contour omitted".to_string(),
            };
            Ok(format!(
                "{}: {}x{} in {:.1} ms{}",
                input.id,
                shape.h,
                shape.w,
                started.elapsed().as_secs_f64() * 1e3,
                contour_note
            ))
        })
        .collect::<Result<_, _>>()
        .map_err(CliError::Runtime)?;
    for line in lines {
        println!("{line}");
    }
    println!("predicted {} images -> {}", inputs.len(), resolved.out.display());
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> CliResult<()> {
    let resolved = resolve_common(&args.common)?;
    let manifest = require_file(&resolved.manifest, "--manifest")?;
    let pred_dir = require_file(
        &args.pred.clone().or_else(|| resolved.file.get_path("pred")),
        "--pred",
    )?;
    let rows = data::parse_manifest(&manifest).map_err(CliError::validation)?;
    std::fs::create_dir_all(&resolved.out).map_err(CliError::validation)?;

    // Every truth id must have a prediction before any scoring starts.
    for row in &rows {
        let mask_path = pred_dir.join(format!("{}_mask.pgm", row.id));
        if !mask_path.exists() {
            return Err(CliError::Validation(format!(
                "prediction and truth ids disagree: no prediction for {} (expected {})",
                row.id,
                mask_path.display()
            )));
        }
    }

    let truth = data::load_rows(
        &rows,
        &LoadOptions {
            cfg: resolved.augment.clone(),
            train: false,
            structure: resolved.structure,
        },
    )
    .map_err(CliError::runtime)?;
    print_warnings(&truth);

    // Binary evaluation per structure; the multi encoding splits into blood
    // pool (endo) and pool+ring (epi).
    type Projection = Box<dyn Fn(&[u8]) -> Vec<u8> + Sync>;
    let structures: Vec<(&str, Projection)> = match resolved.structure {
        Structure::Endo => vec![("endo", Box::new(|m: &[u8]| metrics::structure_mask(m, 1, true)))],
        Structure::Epi => vec![("epi", Box::new(|m: &[u8]| metrics::structure_mask(m, 1, true)))],
        Structure::Multi => vec![
            ("endo", Box::new(|m: &[u8]| metrics::structure_mask(m, 2, true))),
            ("epi", Box::new(|m: &[u8]| metrics::structure_mask(m, 1, true))),
        ],
    };

    for (name, project) in structures {
        let rows_metrics: Vec<metrics::ImageMetrics> = truth
            .samples
            .par_iter()
            .map(|sample| -> CliResult<metrics::ImageMetrics> {
                let (h, w) = (sample.height(), sample.width());
                let mask_path = pred_dir.join(format!("{}_mask.pgm", sample.id));
                let (ph, pw, pred16) =
                    data::read_pgm_file(&mask_path).map_err(CliError::runtime)?;
                if (ph, pw) != (h, w) {
                    return Err(CliError::Runtime(format!(
                        "{}: prediction is {ph}x{pw}, truth is {h}x{w}",
                        sample.id
                    )));
                }
                let pred_labels: Vec<u8> = pred16.iter().map(|&v| v.min(255) as u8).collect();
                let pred_bin = project(&pred_labels);
                let truth_bin = project(&sample.mask);
                metrics::evaluate_masks(&sample.id, &pred_bin, &truth_bin, h, w, sample.spacing_mm)
                    .map_err(CliError::runtime)
            })
            .collect::<CliResult<_>>()?;

        let report = MetricsReport::from_rows(name, rows_metrics);
        let path = resolved.out.join(format!("evaluation_{name}.csv"));
        let mut csv = Vec::new();
        report.write_csv(&mut csv).map_err(CliError::runtime)?;
        std::fs::write(&path, csv).map_err(CliError::runtime)?;
        let a = &report.aggregate;
        println!(
            "{name}: n={} dice={} apd_mm={} hausdorff_mm={} good={}% -> {}",
            a.n,
            a.dice.0.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
            a.apd_mm.0.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into()),
            a.hausdorff_mm.0.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into()),
            a.good_pct.map(|v| format!("{v:.2}")).unwrap_or_else(|| "n/a".into()),
            path.display()
        );
    }
    Ok(())
}

fn run_phantom(args: PhantomArgs) -> CliResult<()> {
    let resolved = resolve_common(&args.common)?;
    let file = &resolved.file;
    let family = args
        .family
        .clone()
        .or_else(|| file.get("family").map(String::from))
        .unwrap_or_else(|| "a".to_string());
    let size = pick(args.size, file.get_parsed("size"), 64).map_err(CliError::Validation)?;
    let count = pick(args.count, file.get_parsed("count"), 32).map_err(CliError::Validation)?;
    let spec = match family.as_str() {
        "a" => PhantomSpec::family_a(size, count, resolved.seed),
        "b" => PhantomSpec::family_b(size, count, resolved.seed),
        other => {
            return Err(CliError::Validation(format!(
                "unknown phantom family {other} (expected a or b)"
            )))
        }
    };
    let samples = phantom::generate(&spec).map_err(CliError::runtime)?;
    let manifest = phantom::write_dataset(&samples, &resolved.out).map_err(CliError::runtime)?;
    println!(
        "wrote {} family-{} phantoms ({}x{}) -> {}",
        samples.len(),
        family,
        size,
        size,
        manifest.display()
    );
    Ok(())
}

