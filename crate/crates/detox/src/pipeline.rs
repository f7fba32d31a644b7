//! End-to-end run orchestration: poison, train, filter, unlearn, fine-tune,
//! evaluate after every stage, and persist a reproducible run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::io::load_dataset;
use crate::data::poison::{poison_dataset, LabelMode, PoisonConfig};
use crate::data::triggers::{badnets_patch, blended_default, sig_default, TriggerSpec};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::{emit_report, evaluate, EvalReport};
use crate::filter::{filter_precision, filter_split, loss_filter_split, FilterMethod, FilterResult};
use crate::model::{build_model, ArchId, ModelState};
use crate::rng::derive_seed;
use crate::ssl::{ssl_train, strip_labels, SSLConfig};
use crate::train::{supervised_train, StageMetrics, TrainConfig};
use crate::unlearn::{active_unlearn, UnlearnConfig};

pub const MANIFEST_SCHEMA: &str = "detox-run/1";

/// Which stages run, and in what order. Filtering runs implicitly whenever
/// a later stage consumes its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageOrder {
    SlFilterAuAssft,
    SlAu,
    SlAssft,
    SlAssftAu,
    SlOnly,
}

impl StageOrder {
    pub fn parse(s: &str) -> Result<StageOrder> {
        match s {
            "sl-filter-au-assft" => Ok(StageOrder::SlFilterAuAssft),
            "sl-au" => Ok(StageOrder::SlAu),
            "sl-assft" => Ok(StageOrder::SlAssft),
            "sl-assft-au" => Ok(StageOrder::SlAssftAu),
            "sl-only" => Ok(StageOrder::SlOnly),
            other => Err(Error::config(format!("unknown stage order: {other}"))),
        }
    }

    fn needs_filter(&self) -> bool {
        !matches!(self, StageOrder::SlOnly)
    }
}

/// How the training set gets tampered before the defense runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// `badnets`, `blended`, `sig`, or a path to a trigger-spec JSON file.
    pub trigger: String,
    pub rate_alpha: f64,
    pub target_class: usize,
    pub label_mode: LabelMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub train_dir: PathBuf,
    pub test_dir: PathBuf,
    pub out_dir: PathBuf,
    pub arch: ArchId,
    pub stage_order: StageOrder,
    pub seed: u64,
    pub gamma: f64,
    #[serde(default = "default_filter_method")]
    pub filter_method: FilterMethod,
    /// Absent means the training data is used as-is (no poisoning).
    #[serde(default)]
    pub attack: Option<AttackConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub unlearn: UnlearnConfig,
    #[serde(default)]
    pub ssl: SSLConfig,
}

fn default_filter_method() -> FilterMethod {
    FilterMethod::Entropy
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&s).map_err(|e| Error::config(format!("bad config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic_string(path, &serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub checkpoint: Option<PathBuf>,
    pub metrics_csv: Option<PathBuf>,
    pub eval: Option<EvalReport>,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterSummary {
    pub method: FilterMethod,
    pub gamma: f64,
    pub poisoned_count: usize,
    pub clean_count: usize,
    /// Ground-truth quality, present when the dataset carries a mask.
    pub precision: Option<f64>,
    pub purity: Option<f64>,
    pub file: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub version: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    pub filter: Option<FilterSummary>,
    pub total_wall_secs: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest> {
        let s = std::fs::read_to_string(path)?;
        serde_json::from_str(&s).map_err(|e| Error::format(format!("bad manifest: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic_string(path, &serde_json::to_string_pretty(self)?)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

/// Compare manifests ignoring wall-clock fields.
pub fn manifest_eq_modulo_timing(a: &RunManifest, b: &RunManifest) -> bool {
    let strip = |m: &RunManifest| -> serde_json::Value {
        let mut v = serde_json::to_value(m).expect("manifest serializes");
        v["total_wall_secs"] = serde_json::Value::Null;
        if let Some(stages) = v["stages"].as_array_mut() {
            for s in stages {
                s["wall_secs"] = serde_json::Value::Null;
            }
        }
        v
    };
    strip(a) == strip(b)
}

/// Resolve a trigger name or spec-file path against the dataset's dims.
pub fn resolve_trigger(name: &str, h: usize, w: usize, c: usize) -> Result<TriggerSpec> {
    match name {
        "badnets" => Ok(badnets_patch(c)),
        "blended" => Ok(blended_default(h, w, c)),
        "sig" => Ok(sig_default()),
        path => {
            let s = std::fs::read_to_string(path).map_err(|e| {
                Error::config(format!("trigger {path} is neither a known name nor a readable file: {e}"))
            })?;
            serde_json::from_str(&s).map_err(|e| Error::config(format!("bad trigger spec: {e}")))
        }
    }
}

struct StageCtx<'a> {
    cfg: &'a PipelineConfig,
    test: &'a LabeledDataset,
    attack: Option<(&'a TriggerSpec, usize)>,
    prior: Option<&'a RunManifest>,
}

impl<'a> StageCtx<'a> {
    fn monitor(&self) -> crate::eval::EvalMonitor<'a> {
        crate::eval::EvalMonitor {
            test: self.test,
            attack: self.attack,
            every: usize::MAX, // per-epoch CA/ASR only at the final epoch
        }
    }

    /// A resumable stage: reuse the checkpoint recorded by a previous run
    /// when present, otherwise execute `run`.
    fn model_stage(
        &self,
        name: &str,
        run: impl FnOnce() -> Result<(ModelState, StageMetrics)>,
    ) -> Result<(ModelState, StageRecord, Option<StageMetrics>)> {
        let ckpt_path = self.cfg.out_dir.join(format!("{name}.ckpt"));
        if let Some(prior) = self.prior {
            if let Some(rec) = prior.stage(name) {
                if let Some(p) = &rec.checkpoint {
                    if p.exists() {
                        let model = ModelState::load(p)?;
                        return Ok((model, rec.clone(), None));
                    }
                }
            }
        }
        let started = Instant::now();
        let (model, metrics) = run()?;
        model.save(&ckpt_path)?;
        let csv_path = self.cfg.out_dir.join(format!("{name}_metrics.csv"));
        crate::fsutil::write_atomic_string(&csv_path, &crate::eval::curves_csv(&[metrics.clone()]))?;
        let eval = evaluate(&model, self.test, self.attack)?;
        let record = StageRecord {
            name: name.to_string(),
            checkpoint: Some(ckpt_path),
            metrics_csv: Some(csv_path),
            eval: Some(eval),
            wall_secs: started.elapsed().as_secs_f64(),
        };
        Ok((model, record, Some(metrics)))
    }
}

/// Execute a full pipeline run. Stages execute in `cfg.stage_order`; the
/// model is evaluated after every stage; all artifacts land in
/// `cfg.out_dir`; the manifest is written atomically. On a stage failure a
/// partial manifest marked failed is persisted and the error is returned.
pub fn run_pipeline(cfg: &PipelineConfig, resume: bool) -> Result<RunManifest> {
    let total_start = Instant::now();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let manifest_path = cfg.out_dir.join("manifest.json");

    let prior: Option<RunManifest> = if resume && manifest_path.exists() {
        let m = RunManifest::load(&manifest_path)?;
        if m.config == *cfg {
            Some(m)
        } else {
            None
        }
    } else {
        None
    };

    let mut manifest = RunManifest {
        schema: MANIFEST_SCHEMA.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        status: RunStatus::Failed,
        error: None,
        config: cfg.clone(),
        stages: Vec::new(),
        filter: None,
        total_wall_secs: 0.0,
    };

    match run_stages(cfg, prior.as_ref(), &mut manifest) {
        Ok(()) => {
            manifest.status = RunStatus::Completed;
            manifest.total_wall_secs = manifest.stages.iter().map(|s| s.wall_secs).sum();
            manifest.save(&manifest_path)?;
            Ok(manifest)
        }
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
            manifest.total_wall_secs = total_start.elapsed().as_secs_f64();
            manifest.save(&manifest_path)?;
            Err(e)
        }
    }
}

fn run_stages(
    cfg: &PipelineConfig,
    prior: Option<&RunManifest>,
    manifest: &mut RunManifest,
) -> Result<()> {
    if !(cfg.gamma > 0.0 && cfg.gamma <= 0.5) && cfg.stage_order.needs_filter() {
        return Err(Error::config(format!(
            "filtering rate {} outside (0, 0.5]",
            cfg.gamma
        )));
    }

    let (train_clean, _) = load_dataset(&cfg.train_dir)?;
    let (test, _) = load_dataset(&cfg.test_dir)?;
    let (h, w, c) = test.image_dims();

    // attacker side
    let attack: Option<(TriggerSpec, usize)> = match &cfg.attack {
        Some(a) if a.rate_alpha > 0.0 => {
            let spec = resolve_trigger(&a.trigger, h, w, c)?;
            Some((spec, a.target_class))
        }
        _ => None,
    };
    let train_ds: LabeledDataset = match (&cfg.attack, &attack) {
        (Some(a), Some((spec, _))) => {
            let pc = PoisonConfig {
                rate_alpha: a.rate_alpha,
                target_class: a.target_class,
                label_mode: a.label_mode,
                seed: derive_seed(cfg.seed, "poison"),
            };
            poison_dataset(&train_clean, &pc, spec)
                .map_err(|e| Error::stage("poison", e))?
        }
        _ => train_clean,
    };

    let ctx = StageCtx {
        cfg,
        test: &test,
        attack: attack.as_ref().map(|(s, t)| (s, *t)),
        prior,
    };

    // stage SL
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = derive_seed(cfg.seed, "sl");
    let model0 = build_model(cfg.arch, train_ds.class_count, derive_seed(cfg.seed, "model"))?;
    let (mut model, record, _) = ctx.model_stage("sl", || {
        supervised_train(model0, &train_ds, &train_cfg, Some(&ctx.monitor()))
            .map_err(|e| Error::stage("sl", e))
    })?;
    manifest.stages.push(record);

    // filter
    let filter_result: Option<FilterResult> = if cfg.stage_order.needs_filter() {
        let started = Instant::now();
        let filter_path = cfg.out_dir.join("filter.json");
        let (result, wall, reused) = match prior.and_then(|p| p.stage("filter")) {
            Some(rec) if filter_path.exists() => {
                (FilterResult::load(&filter_path)?, rec.wall_secs, true)
            }
            _ => {
                let r = match cfg.filter_method {
                    FilterMethod::Entropy => filter_split(&model, &train_ds, cfg.gamma),
                    FilterMethod::Loss => loss_filter_split(&model, &train_ds, cfg.gamma),
                }
                .map_err(|e| Error::stage("filter", e))?;
                r.save(&filter_path)?;
                (r, started.elapsed().as_secs_f64(), false)
            }
        };
        let _ = reused;
        let (precision, purity) = if train_ds.any_poisoned() {
            let (p, q) = filter_precision(&result, &train_ds);
            (Some(p), Some(q))
        } else {
            (None, None)
        };
        manifest.filter = Some(FilterSummary {
            method: cfg.filter_method,
            gamma: cfg.gamma,
            poisoned_count: result.poisoned_idx.len(),
            clean_count: result.clean_idx.len(),
            precision,
            purity,
            file: filter_path,
        });
        manifest.stages.push(StageRecord {
            name: "filter".to_string(),
            checkpoint: None,
            metrics_csv: None,
            eval: None,
            wall_secs: wall,
        });
        Some(result)
    } else {
        None
    };

    // remaining model stages in the configured order
    let tail: &[&str] = match cfg.stage_order {
        StageOrder::SlOnly => &[],
        StageOrder::SlAu => &["au"],
        StageOrder::SlAssft => &["assft"],
        StageOrder::SlAssftAu => &["assft", "au"],
        StageOrder::SlFilterAuAssft => &["au", "assft"],
    };
    for &stage in tail {
        let fr = filter_result
            .as_ref()
            .expect("filter runs before any dependent stage");
        match stage {
            "au" => {
                let mut ucfg = cfg.unlearn.clone();
                ucfg.seed = derive_seed(cfg.seed, "au");
                let input = model;
                let (m, record, _) = ctx.model_stage("au", || {
                    active_unlearn(input, &train_ds, &fr.poisoned_idx, &ucfg, Some(&ctx.monitor()))
                        .map_err(|e| Error::stage("au", e))
                })?;
                model = m;
                manifest.stages.push(record);
            }
            "assft" => {
                let mut scfg = cfg.ssl.clone();
                scfg.seed = derive_seed(cfg.seed, "assft");
                let semi = strip_labels(&train_ds, &fr.clean_idx)
                    .map_err(|e| Error::stage("assft", e))?;
                let input = model;
                let (m, record, _) = ctx.model_stage("assft", || {
                    ssl_train(input, &semi, &scfg, Some(&ctx.monitor()))
                        .map_err(|e| Error::stage("assft", e))
                })?;
                model = m;
                manifest.stages.push(record);
            }
            _ => unreachable!(),
        }
    }

    // run-level CSV artifacts
    let reports: Vec<EvalReport> = manifest
        .stages
        .iter()
        .filter_map(|s| s.eval.clone())
        .collect();
    emit_report(&reports, &[], &cfg.out_dir)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PoisonRate,
    FilterRate,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<SweepAxis> {
        match s {
            "rate" | "poison_rate" => Ok(SweepAxis::PoisonRate),
            "gamma" | "filter_rate" => Ok(SweepAxis::FilterRate),
            other => Err(Error::config(format!("unknown sweep axis: {other}"))),
        }
    }
}

pub struct SweepRun {
    pub value: f64,
    pub out_dir: PathBuf,
    pub result: Result<RunManifest>,
}

/// One full pipeline per axis value, sharing the base seed. Per-run errors
/// are recorded; remaining runs continue. A joined comparison CSV lands in
/// the template's out_dir.
pub fn sweep(template: &PipelineConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRun>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value".to_string()));
    }
    let mut runs = Vec::new();
    for &v in values {
        let mut cfg = template.clone();
        let tag = match axis {
            SweepAxis::PoisonRate => {
                match cfg.attack.as_mut() {
                    Some(a) => a.rate_alpha = v,
                    None => {
                        return Err(Error::config(
                            "poison-rate sweep needs an attack block in the config".to_string(),
                        ))
                    }
                }
                format!("rate_{v}")
            }
            SweepAxis::FilterRate => {
                cfg.gamma = v;
                format!("gamma_{v}")
            }
        };
        cfg.out_dir = template.out_dir.join(tag);
        let result = run_pipeline(&cfg, false);
        runs.push(SweepRun {
            value: v,
            out_dir: cfg.out_dir,
            result,
        });
    }

    let mut csv = String::from("axis,value,status,stage,clean_accuracy,attack_success_rate\n");
    let axis_name = match axis {
        SweepAxis::PoisonRate => "poison_rate",
        SweepAxis::FilterRate => "filter_rate",
    };
    for run in &runs {
        match &run.result {
            Ok(m) => {
                for s in &m.stages {
                    if let Some(e) = &s.eval {
                        csv.push_str(&format!(
                            "{axis_name},{},completed,{},{:.6},{}\n",
                            run.value,
                            s.name,
                            e.clean_accuracy,
                            e.attack_success_rate
                                .map(|v| format!("{v:.6}"))
                                .unwrap_or_default(),
                        ));
                    }
                }
            }
            Err(e) => {
                csv.push_str(&format!("{axis_name},{},failed: {e},,,\n", run.value));
            }
        }
    }
    std::fs::create_dir_all(&template.out_dir)?;
    crate::fsutil::write_atomic_string(&template.out_dir.join("sweep.csv"), &csv)?;
    Ok(runs)
}
