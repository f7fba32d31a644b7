//! Command-line interface. One thin binary; every subcommand is a small
//! wrapper over the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::data::cifar::import_cifar10;
use crate::data::io::{load_dataset, save_dataset};
use crate::data::poison::{poison_dataset, LabelMode, PoisonConfig};
use crate::data::synth::{generate_pair, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{curves_csv, evaluate};
use crate::filter::{filter_precision, filter_split, loss_filter_split, FilterMethod, FilterResult};
use crate::model::{build_model, ArchId, ModelState};
use crate::pipeline::{resolve_trigger, run_pipeline, sweep, PipelineConfig, SweepAxis};
use crate::ssl::{ssl_train, strip_labels, SSLConfig};
use crate::train::{supervised_train, Augmentation, TrainConfig};
use crate::unlearn::{active_unlearn, UnlearnConfig};

#[derive(Parser)]
#[command(
    name = "detox",
    version,
    about = "Backdoor-defense training pipeline: poison, train, filter, unlearn, fine-tune, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled image dataset (train + test directories).
    GenData(GenDataArgs),
    /// Import CIFAR-10 binary batches into the dataset directory format.
    ImportCifar10(ImportArgs),
    /// Inject a backdoor trigger into a clean dataset.
    Poison(PoisonArgs),
    /// Stage SL: supervised training with per-subset accuracy tracking.
    TrainSl(TrainArgs),
    /// Split a dataset into filtered poisoned/clean subsets by entropy.
    Filter(FilterArgs),
    /// Stage AU: unlearn the filtered poisoned subset by gradient ascent.
    Unlearn(UnlearnArgs),
    /// Stage ASSFT: semi-supervised fine-tuning on the filtered clean subset.
    Finetune(FinetuneArgs),
    /// Evaluate a checkpoint: clean accuracy and attack success rate.
    Evaluate(EvaluateArgs),
    /// Run a full configured pipeline.
    Pipeline(PipelineArgs),
    /// Run one pipeline per value along a poison-rate or filter-rate axis.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory; `train/` and `test/` subdirectories are created.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    train: usize,
    #[arg(long, default_value_t = 2000)]
    test: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ImportArgs {
    /// Directory holding data_batch_*.bin and test_batch.bin.
    #[arg(long)]
    bin_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    train: usize,
    #[arg(long, default_value_t = 2000)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PoisonArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// `badnets`, `blended`, `sig`, or a trigger-spec JSON path.
    #[arg(long)]
    attack: String,
    #[arg(long)]
    rate: f64,
    #[arg(long)]
    target: usize,
    #[arg(long, value_parser = parse_label_mode, default_value = "poison")]
    label_mode: LabelMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_label_mode(s: &str) -> std::result::Result<LabelMode, String> {
    match s {
        "poison" => Ok(LabelMode::PoisonLabel),
        "clean" => Ok(LabelMode::CleanLabel),
        other => Err(format!("unknown label mode {other} (use poison|clean)")),
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "small_cnn")]
    arch: String,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f32,
    #[arg(long, default_value_t = 0.9)]
    momentum: f32,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f32,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    /// `none` or `standard` (flip + small translation).
    #[arg(long, default_value = "none")]
    augment: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint output path. Metrics go to `<out>.metrics.csv` unless
    /// --metrics overrides.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    #[arg(long, value_parser = parse_filter_method, default_value = "entropy")]
    method: FilterMethod,
    #[arg(long)]
    out: PathBuf,
}

fn parse_filter_method(s: &str) -> std::result::Result<FilterMethod, String> {
    match s {
        "entropy" => Ok(FilterMethod::Entropy),
        "loss" => Ok(FilterMethod::Loss),
        other => Err(format!("unknown filter method {other} (use entropy|loss)")),
    }
}

#[derive(Args)]
struct UnlearnArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    filter: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f32,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    /// Loss clamp in nats; ascent pauses above it. 0 disables the clamp.
    #[arg(long, default_value_t = 10.0)]
    clamp: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    filter: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.95)]
    tau: f32,
    #[arg(long, default_value_t = 1.0)]
    lambda_u: f32,
    #[arg(long, default_value_t = 5e-4)]
    beta: f32,
    #[arg(long, default_value_t = 7)]
    ratio: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f32,
    #[arg(long, default_value_t = 0.9)]
    momentum: f32,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// `badnets`, `blended`, `sig`, or a trigger-spec JSON path. Omit to
    /// skip the attack measurement.
    #[arg(long)]
    attack: Option<String>,
    #[arg(long)]
    target: Option<usize>,
    /// Count test samples already labeled with the target class.
    #[arg(long, default_value_t = false)]
    include_target: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Skip stages whose artifacts exist in the output directory.
    #[arg(long, default_value_t = false)]
    resume: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// `rate` (poisoning rate) or `gamma` (filtering rate).
    #[arg(long)]
    axis: String,
    /// Comma-separated values, e.g. `0.1,0.3,0.5`.
    #[arg(long)]
    values: String,
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::ImportCifar10(a) => import_cifar(a),
        Command::Poison(a) => poison(a),
        Command::TrainSl(a) => train_sl(a),
        Command::Filter(a) => filter(a),
        Command::Unlearn(a) => unlearn(a),
        Command::Finetune(a) => finetune(a),
        Command::Evaluate(a) => eval_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = SynthConfig {
        classes: a.classes,
        height: a.size,
        width: a.size,
        seed: a.seed,
        ..Default::default()
    };
    let (train, test) = generate_pair(&cfg, a.train, a.test)?;
    save_dataset(&train, &a.out.join("train"), None, None)?;
    save_dataset(&test, &a.out.join("test"), None, None)?;
    println!(
        "wrote {} train / {} test samples ({}x{}x3, {} classes) under {}",
        a.train,
        a.test,
        a.size,
        a.size,
        a.classes,
        a.out.display()
    );
    Ok(())
}

fn import_cifar(a: ImportArgs) -> Result<()> {
    let (train, test) = import_cifar10(&a.bin_dir, a.train, a.test, a.seed)?;
    save_dataset(&train, &a.out.join("train"), None, None)?;
    save_dataset(&test, &a.out.join("test"), None, None)?;
    println!(
        "imported {} train / {} test CIFAR-10 samples under {}",
        train.len(),
        test.len(),
        a.out.display()
    );
    Ok(())
}

fn poison(a: PoisonArgs) -> Result<()> {
    let (clean, _) = load_dataset(&a.dataset)?;
    let (h, w, c) = clean.image_dims();
    let spec = resolve_trigger(&a.attack, h, w, c)?;
    let cfg = PoisonConfig {
        rate_alpha: a.rate,
        target_class: a.target,
        label_mode: a.label_mode,
        seed: a.seed,
    };
    let poisoned = poison_dataset(&clean, &cfg, &spec)?;
    save_dataset(&poisoned, &a.out, Some(&spec), Some(a.label_mode))?;
    crate::fsutil::write_atomic_string(
        &a.out.join("trigger.json"),
        &serde_json::to_string_pretty(&spec)?,
    )?;
    let (_, poisoned_idx) = poisoned.subset_views();
    println!(
        "poisoned {} of {} samples (target class {}) -> {}",
        poisoned_idx.len(),
        poisoned.len(),
        a.target,
        a.out.display()
    );
    Ok(())
}

fn train_sl(a: TrainArgs) -> Result<()> {
    let (ds, _) = load_dataset(&a.dataset)?;
    let arch = ArchId::parse(&a.arch)?;
    let augmentation = match a.augment.as_str() {
        "none" => Augmentation::None,
        "standard" => Augmentation::Standard,
        other => return Err(Error::config(format!("unknown augmentation {other}"))),
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        augmentation,
        seed: a.seed,
    };
    let model = build_model(arch, ds.class_count, a.seed)?;
    let (model, metrics) = supervised_train(model, &ds, &cfg, None)?;
    model.save(&a.out)?;
    let metrics_path = a
        .metrics
        .unwrap_or_else(|| a.out.with_extension("metrics.csv"));
    crate::fsutil::write_atomic_string(&metrics_path, &curves_csv(&[metrics.clone()]))?;
    let last = metrics.epochs.last();
    println!(
        "trained {} for {} epochs (final loss {:.4}) -> {}",
        arch,
        a.epochs,
        last.map(|r| r.mean_loss).unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

fn filter(a: FilterArgs) -> Result<()> {
    let model = ModelState::load(&a.ckpt)?;
    let (ds, _) = load_dataset(&a.dataset)?;
    let result = match a.method {
        FilterMethod::Entropy => filter_split(&model, &ds, a.gamma)?,
        FilterMethod::Loss => loss_filter_split(&model, &ds, a.gamma)?,
    };
    result.save(&a.out)?;
    print!(
        "filtered {} suspected poisoned / {} trusted clean samples -> {}",
        result.poisoned_idx.len(),
        result.clean_idx.len(),
        a.out.display()
    );
    if ds.any_poisoned() {
        let (precision, purity) = filter_precision(&result, &ds);
        print!(" (ground truth: precision {precision:.3}, purity {purity:.3})");
    }
    println!();
    Ok(())
}

fn unlearn(a: UnlearnArgs) -> Result<()> {
    let model = ModelState::load(&a.ckpt)?;
    let (ds, _) = load_dataset(&a.dataset)?;
    let fr = FilterResult::load(&a.filter)?;
    let cfg = UnlearnConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        loss_clamp: (a.clamp > 0.0).then_some(a.clamp),
        batch_size: a.batch,
        seed: a.seed,
    };
    let (model, metrics) = active_unlearn(model, &ds, &fr.poisoned_idx, &cfg, None)?;
    model.save(&a.out)?;
    if let Some(p) = a.metrics {
        crate::fsutil::write_atomic_string(&p, &curves_csv(&[metrics.clone()]))?;
    }
    println!(
        "unlearned {} samples over {} epochs (forget-set loss {:.3}) -> {}",
        fr.poisoned_idx.len(),
        a.epochs,
        metrics.epochs.last().map(|r| r.mean_loss).unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

fn finetune(a: FinetuneArgs) -> Result<()> {
    let model = ModelState::load(&a.ckpt)?;
    let (ds, _) = load_dataset(&a.dataset)?;
    let fr = FilterResult::load(&a.filter)?;
    let semi = strip_labels(&ds, &fr.clean_idx)?;
    let cfg = SSLConfig {
        epochs: a.epochs,
        lambda_u: a.lambda_u,
        beta_reg: a.beta,
        confidence_tau: a.tau,
        unlabeled_ratio: a.ratio,
        learning_rate: a.lr,
        momentum: a.momentum,
        batch_size: a.batch,
        seed: a.seed,
    };
    let (model, metrics) = ssl_train(model, &semi, &cfg, None)?;
    model.save(&a.out)?;
    if let Some(p) = a.metrics {
        crate::fsutil::write_atomic_string(&p, &curves_csv(&[metrics.clone()]))?;
    }
    println!(
        "fine-tuned on {} labeled / {} unlabeled samples over {} epochs -> {}",
        semi.labeled_labels.len(),
        semi.unlabeled_src.len(),
        a.epochs,
        a.out.display()
    );
    Ok(())
}

fn eval_cmd(a: EvaluateArgs) -> Result<()> {
    let model = ModelState::load(&a.ckpt)?;
    let (test, _) = load_dataset(&a.test)?;
    let (h, w, c) = test.image_dims();
    let attack = match (&a.attack, a.target) {
        (Some(name), Some(target)) => Some((resolve_trigger(name, h, w, c)?, target)),
        (Some(_), None) => {
            return Err(Error::config("--attack requires --target".to_string()))
        }
        _ => None,
    };
    let mut report = evaluate(&model, &test, attack.as_ref().map(|(s, t)| (s, *t)))?;
    if a.include_target {
        if let Some((spec, target)) = &attack {
            report.attack_success_rate = Some(crate::eval::attack_success_rate(
                &model, &test, spec, *target, true,
            )?);
        }
    }
    match report.attack_success_rate {
        Some(asr) => println!(
            "stage {}: CA {:.2}%  ASR {:.2}%",
            report.stage,
            report.clean_accuracy * 100.0,
            asr * 100.0
        ),
        None => println!(
            "stage {}: CA {:.2}%",
            report.stage,
            report.clean_accuracy * 100.0
        ),
    }
    if let Some(out) = a.out {
        crate::fsutil::write_atomic_string(&out, &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn pipeline_cmd(a: PipelineArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&a.config)?;
    let manifest = run_pipeline(&cfg, a.resume)?;
    for s in &manifest.stages {
        if let Some(e) = &s.eval {
            match e.attack_success_rate {
                Some(asr) => println!(
                    "stage {:>6}: CA {:.2}%  ASR {:.2}%",
                    s.name,
                    e.clean_accuracy * 100.0,
                    asr * 100.0
                ),
                None => println!("stage {:>6}: CA {:.2}%", s.name, e.clean_accuracy * 100.0),
            }
        }
    }
    println!("manifest: {}", cfg.out_dir.join("manifest.json").display());
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&a.config)?;
    let axis = SweepAxis::parse(&a.axis)?;
    let values = a
        .values
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad sweep value: {s}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let runs = sweep(&cfg, axis, &values)?;
    let mut failures = 0;
    for run in &runs {
        match &run.result {
            Ok(m) => {
                let last = m.stages.iter().rev().find_map(|s| s.eval.as_ref());
                if let Some(e) = last {
                    println!(
                        "value {:>6}: final CA {:.2}%  ASR {}",
                        run.value,
                        e.clean_accuracy * 100.0,
                        e.attack_success_rate
                            .map(|v| format!("{:.2}%", v * 100.0))
                            .unwrap_or_else(|| "-".to_string())
                    );
                }
            }
            Err(e) => {
                failures += 1;
                println!("value {:>6}: failed ({e})", run.value);
            }
        }
    }
    println!("comparison: {}", cfg.out_dir.join("sweep.csv").display());
    if failures == runs.len() {
        return Err(Error::stage("sweep", "every sweep run failed"));
    }
    Ok(())
}
