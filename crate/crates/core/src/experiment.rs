//! Experiment configuration, named presets, and the train / sweep /
//! prune-baseline drivers with their JSON and CSV reports.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Sample, SynthSpec};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::{OptimizerName, OptimizerSpec, RegConfig};
use crate::prox::Variant;
use crate::prune::{prune_finetune_prune, PruneSchedule};
use crate::train::{evaluate, Evaluation, Trainer};

pub const SCHEMA_VERSION: u32 = 1;

/// Fine-tune fractions tried by the pruning baseline.
pub const FINETUNE_FRACTIONS: [f64; 4] = [0.0, 0.1, 0.2, 0.3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
}

fn default_embed_dim() -> usize {
    16
}

fn default_hidden() -> Vec<usize> {
    vec![32, 16]
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            embed_dim: default_embed_dim(),
            hidden_dims: default_hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthSpec),
    /// libsvm files; without `test` the last 10% of `train` is held out.
    Libsvm {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthSpec::default())
    }
}

fn default_optimizer() -> OptimizerSpec {
    OptimizerSpec::new(OptimizerName::Adam, true, 1e-3)
}

fn default_epochs() -> usize {
    1
}

fn default_batch_size() -> usize {
    64
}

fn default_repeats() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub reg: RegConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Seeds model initialization and batch order. Repeat `k` uses `seed + k`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSection::default(),
            data: DataSource::default(),
            optimizer: default_optimizer(),
            reg: RegConfig::default(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            seed: 0,
            output_dir: None,
            repeats: default_repeats(),
        }
    }
}

fn config_err(path: &str, e: impl std::fmt::Display) -> Error {
    Error::Config {
        path: path.to_string(),
        reason: e.to_string(),
    }
}

impl ExperimentConfig {
    /// Parses a JSON document. Errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = fs::read_to_string(p).map_err(|e| config_err(&p.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate().map_err(|e| config_err("optimizer", e))?;
        self.reg.validate().map_err(|e| config_err("reg", e))?;
        if self.epochs == 0 {
            return Err(config_err("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size", "must be positive"));
        }
        if self.repeats == 0 {
            return Err(config_err("repeats", "must be positive"));
        }
        if self.model.embed_dim == 0 {
            return Err(config_err("model.embed_dim", "must be positive"));
        }
        if self.model.hidden_dims.contains(&0) {
            return Err(config_err("model.hidden_dims", "widths must be positive"));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate().map_err(|e| config_err("data.synthetic", e))?;
        }
        Ok(())
    }
}

/// Train/test splits with the vocabulary shape the model needs.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub num_features: usize,
    pub num_fields: usize,
    /// Known informative features (synthetic data only).
    pub support: Option<BTreeSet<usize>>,
}

pub fn prepare_data(source: &DataSource) -> Result<PreparedData> {
    match source {
        DataSource::Synthetic(spec) => {
            let d = data::generate(spec)?;
            Ok(PreparedData {
                train: d.train,
                test: d.test,
                num_features: d.num_features,
                num_fields: d.num_fields,
                support: Some(d.ground_truth_support),
            })
        }
        DataSource::Libsvm { train, test } => {
            let mut tr = data::load_libsvm(train)?;
            let te = match test {
                Some(p) => data::load_libsvm(p)?,
                None => tr.split_off(data::split_point(tr.len())),
            };
            let num_fields = tr
                .first()
                .map(|s| s.feature_ids.len())
                .ok_or_else(|| config_err("data.libsvm.train", "no samples"))?;
            if num_fields == 0 {
                return Err(config_err("data.libsvm.train", "samples have no features"));
            }
            for (i, s) in tr.iter().chain(&te).enumerate() {
                if s.feature_ids.len() != num_fields {
                    return Err(config_err(
                        "data.libsvm",
                        format!("sample {} has {} features, expected {num_fields}", i + 1, s.feature_ids.len()),
                    ));
                }
            }
            let num_features = tr
                .iter()
                .chain(&te)
                .flat_map(|s| s.feature_ids.iter().copied())
                .max()
                .map_or(0, |m| m + 1);
            Ok(PreparedData {
                train: tr,
                test: te,
                num_features,
                num_fields,
                support: None,
            })
        }
    }
}

impl PreparedData {
    pub fn model_config(&self, section: &ModelSection, seed: u64) -> ModelConfig {
        ModelConfig {
            num_features: self.num_features,
            embed_dim: section.embed_dim,
            num_fields: self.num_fields,
            hidden_dims: section.hidden_dims.clone(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub logloss: f64,
    pub auc: Option<f64>,
    pub sparsity: f64,
    pub nonzero_groups: usize,
    pub wall_ms: u128,
}

impl EpochMetrics {
    fn from_eval(epoch: usize, train_loss: f64, e: Evaluation, wall_ms: u128) -> Self {
        Self {
            epoch,
            train_loss,
            logloss: e.logloss,
            auc: e.auc,
            sparsity: e.sparsity,
            nonzero_groups: e.nonzero_groups,
            wall_ms,
        }
    }
}

/// One training run: per-epoch test metrics and the final model.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    pub model: Model,
    pub features_seen: BTreeSet<usize>,
}

impl TrainedRun {
    pub fn last(&self) -> &EpochMetrics {
        self.epochs.last().expect("at least one epoch")
    }
}

/// Trains one model from `seed` and evaluates on the test split after each epoch.
pub fn train_once(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    optimizer: &OptimizerSpec,
    reg: &RegConfig,
    seed: u64,
) -> Result<TrainedRun> {
    let model = Model::new(data.model_config(&cfg.model, seed))?;
    let mut trainer = Trainer::new(model, optimizer.clone(), reg.clone(), cfg.batch_size, seed)?;
    let start = Instant::now();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let loss = trainer.train_epoch(&data.train)?;
        let eval = trainer.evaluate(&data.test)?;
        epochs.push(EpochMetrics::from_eval(epoch, loss, eval, start.elapsed().as_millis()));
    }
    Ok(TrainedRun {
        seed,
        epochs,
        model: trainer.model,
        features_seen: trainer.features_seen,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
}

impl Stat {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                stddev: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let stddev = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, stddev }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub repeats: usize,
    pub logloss: Stat,
    pub auc: Stat,
    pub sparsity: Stat,
    pub nonzero_groups: Stat,
}

impl Aggregate {
    pub fn of<'a>(metrics: impl IntoIterator<Item = &'a EpochMetrics>) -> Self {
        let m: Vec<&EpochMetrics> = metrics.into_iter().collect();
        let col = |f: &dyn Fn(&EpochMetrics) -> f64| Stat::of(&m.iter().map(|e| f(e)).collect::<Vec<_>>());
        Self {
            repeats: m.len(),
            logloss: col(&|e| e.logloss),
            auc: col(&|e| e.auc.unwrap_or(f64::NAN)),
            sparsity: col(&|e| e.sparsity),
            nonzero_groups: col(&|e| e.nonzero_groups as f64),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub optimizer: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub aggregate: Aggregate,
}

/// Runs `cfg.repeats` seeds in parallel. Returns the report and the models.
pub fn run_train(cfg: &ExperimentConfig, data: &PreparedData) -> Result<(RunReport, Vec<TrainedRun>)> {
    cfg.validate()?;
    let runs: Vec<TrainedRun> = (0..cfg.repeats as u64)
        .into_par_iter()
        .map(|k| train_once(cfg, data, &cfg.optimizer, &cfg.reg, cfg.seed + k))
        .collect::<Result<_>>()?;
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        command: "train".into(),
        optimizer: cfg.optimizer.display_name(),
        config: cfg.clone(),
        runs: runs
            .iter()
            .map(|r| RunRecord {
                seed: r.seed,
                epochs: r.epochs.clone(),
            })
            .collect(),
        aggregate: Aggregate::of(runs.iter().map(|r| r.last())),
    };
    Ok((report, runs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Vary λ₂₁; λ₁ stays at its configured value.
    L21,
    /// Vary λ₁ with λ₂₁ = 0.
    L1,
}

impl std::str::FromStr for SweepMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "l21" => Ok(SweepMode::L21),
            "l1" => Ok(SweepMode::L1),
            other => Err(format!("unknown sweep mode `{other}` (expected l21 or l1)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda21: f64,
    pub variant: Variant,
    pub aggregate: Aggregate,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub command: String,
    pub optimizer: String,
    pub mode: SweepMode,
    pub config: ExperimentConfig,
    pub points: Vec<SweepPoint>,
}

/// Regularization for one sweep point.
pub fn sweep_reg(base: &RegConfig, mode: SweepMode, lambda: f64) -> RegConfig {
    let mut reg = base.clone();
    match mode {
        SweepMode::L21 => reg.lambda21 = lambda,
        SweepMode::L1 => {
            reg.lambda1 = lambda;
            reg.lambda21 = 0.0;
        }
    }
    reg
}

/// One group-optimizer run per grid point (and repeat), at a fixed seed.
pub fn run_sweep(cfg: &ExperimentConfig, data: &PreparedData, grid: &[f64], mode: SweepMode) -> Result<SweepReport> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(config_err("grid", "must not be empty"));
    }
    if !cfg.optimizer.group && cfg.optimizer.name != OptimizerName::Ftrl {
        return Err(config_err("optimizer.group", "a sweep needs a group optimizer (or ftrl)"));
    }
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|i| (0..cfg.repeats as u64).map(move |k| (i, k)))
        .collect();
    let results: Vec<TrainedRun> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let reg = sweep_reg(&cfg.reg, mode, grid[i]);
            train_once(cfg, data, &cfg.optimizer, &reg, cfg.seed + k)
        })
        .collect::<Result<_>>()?;
    let points = grid
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let reg = sweep_reg(&cfg.reg, mode, lambda);
            let runs: Vec<&TrainedRun> = jobs
                .iter()
                .zip(&results)
                .filter(|((j, _), _)| *j == i)
                .map(|(_, r)| r)
                .collect();
            SweepPoint {
                lambda,
                lambda1: reg.lambda1,
                lambda21: reg.lambda21,
                variant: reg.variant,
                aggregate: Aggregate::of(runs.iter().map(|r| r.last())),
                runs: runs
                    .iter()
                    .map(|r| RunRecord {
                        seed: r.seed,
                        epochs: r.epochs.clone(),
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(SweepReport {
        schema_version: SCHEMA_VERSION,
        command: "sweep".into(),
        optimizer: cfg.optimizer.display_name(),
        mode,
        config: cfg.clone(),
        points,
    })
}

/// How many embedding rows the pruning baseline keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneTarget {
    Keep(usize),
    /// Keep-rate relative to the features seen in training.
    KeepRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionResult {
    pub finetune_fraction: f64,
    pub metrics: Evaluation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneRun {
    pub seed: u64,
    pub target_keep: usize,
    pub unpruned: Evaluation,
    pub fractions: Vec<FractionResult>,
    pub best: FractionResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneReport {
    pub schema_version: u32,
    pub command: String,
    pub optimizer: String,
    pub target: PruneTarget,
    pub config: ExperimentConfig,
    pub runs: Vec<PruneRun>,
    pub best_auc: Stat,
}

/// Resolves a target against the features seen in training.
pub fn resolve_keep(target: PruneTarget, features_seen: usize, num_features: usize) -> Result<usize> {
    let keep = match target {
        PruneTarget::Keep(k) => k,
        PruneTarget::KeepRate(r) => {
            if !(0.0..=1.0).contains(&r) {
                return Err(config_err("target_sparsity", format!("must be in [0, 1], got {r}")));
            }
            (r * features_seen as f64).round() as usize
        }
    };
    if keep > num_features {
        return Err(config_err("target_keep", format!("{keep} exceeds {num_features} features")));
    }
    Ok(keep)
}

/// Prunes an already trained run at every fine-tune fraction and keeps the
/// best test AUC.
pub fn prune_trained(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    run: &TrainedRun,
    optimizer: &OptimizerSpec,
    target_keep: usize,
) -> Result<PruneRun> {
    let unpruned = evaluate(&run.model, &data.test, &run.features_seen)?;
    let fractions: Vec<FractionResult> = FINETUNE_FRACTIONS
        .par_iter()
        .map(|&f| {
            let schedule = PruneSchedule {
                target_keep,
                finetune_fraction: f,
            };
            let pruned = prune_finetune_prune(&run.model, &data.train, &schedule, optimizer, cfg.batch_size, run.seed)?;
            Ok(FractionResult {
                finetune_fraction: f,
                metrics: evaluate(&pruned, &data.test, &run.features_seen)?,
            })
        })
        .collect::<Result<_>>()?;
    let best = *fractions
        .iter()
        .max_by(|a, b| {
            let (x, y) = (a.metrics.auc.unwrap_or(f64::NEG_INFINITY), b.metrics.auc.unwrap_or(f64::NEG_INFINITY));
            // prefer the earlier fraction on ties
            x.total_cmp(&y).then(b.finetune_fraction.total_cmp(&a.finetune_fraction))
        })
        .expect("fractions are nonempty");
    Ok(PruneRun {
        seed: run.seed,
        target_keep,
        unpruned,
        fractions,
        best,
    })
}

/// Trains the vanilla form of the configured optimizer without
/// regularization, then runs prune / fine-tune / prune.
pub fn run_prune_baseline(cfg: &ExperimentConfig, data: &PreparedData, target: PruneTarget) -> Result<PruneReport> {
    cfg.validate()?;
    let mut optimizer = cfg.optimizer.clone();
    optimizer.group = false;
    let runs: Vec<PruneRun> = (0..cfg.repeats as u64)
        .into_par_iter()
        .map(|k| {
            let run = train_once(cfg, data, &optimizer, &RegConfig::none(), cfg.seed + k)?;
            let keep = resolve_keep(target, run.features_seen.len(), data.num_features)?;
            prune_trained(cfg, data, &run, &optimizer, keep)
        })
        .collect::<Result<_>>()?;
    let best_auc = Stat::of(&runs.iter().map(|r| r.best.metrics.auc.unwrap_or(f64::NAN)).collect::<Vec<_>>());
    Ok(PruneReport {
        schema_version: SCHEMA_VERSION,
        command: "prune-baseline".into(),
        optimizer: optimizer.display_name(),
        target,
        config: cfg.clone(),
        runs,
        best_auc,
    })
}

/// Named configuration presets from the published hyperparameter tables.
pub const PRESETS: &[&str] = &[
    "table5-adam-mlp",
    "table5-adam-opnn",
    "table5-adam-dcn",
    "table5-adagrad-mlp",
    "table5-adagrad-opnn",
    "table5-adagrad-dcn",
    "table6-mlp",
    "table6-opnn",
    "table6-dcn",
    "table7-mlp",
    "table7-opnn",
    "table7-dcn",
];

fn table5_lr(name: OptimizerName, model: &str) -> Option<f64> {
    match (name, model) {
        (OptimizerName::Adam, "mlp" | "opnn") => Some(1e-4),
        (OptimizerName::Adam, "dcn") => Some(1e-3),
        (OptimizerName::Adagrad, "mlp" | "opnn" | "dcn") => Some(1e-2),
        _ => None,
    }
}

/// Applies a preset. `table5-*` sets the optimizer family and learning rate
/// (keeping the vanilla/group choice); `table6-*` (Group Adam) and
/// `table7-*` (Group Adagrad) set the optimizer, its learning rate and
/// λ₁/λ₂₁/λ₂.
pub fn apply_preset(cfg: &mut ExperimentConfig, preset: &str) -> Result<()> {
    let unknown = || config_err("preset", format!("unknown preset `{preset}`; known: {}", PRESETS.join(", ")));
    let parts: Vec<&str> = preset.split('-').collect();
    match parts.as_slice() {
        ["table5", opt, model] => {
            let name = match *opt {
                "adam" => OptimizerName::Adam,
                "adagrad" => OptimizerName::Adagrad,
                _ => return Err(unknown()),
            };
            cfg.optimizer.name = name;
            cfg.optimizer.lr = table5_lr(name, model).ok_or_else(unknown)?;
        }
        ["table6" | "table7", model] => {
            let (name, l1, l21, l2) = match (parts[0], *model) {
                ("table6", "mlp") => (OptimizerName::Adam, 5e-3, 1e-2, 1e-5),
                ("table6", "opnn") => (OptimizerName::Adam, 8e-5, 1e-5, 1e-5),
                ("table6", "dcn") => (OptimizerName::Adam, 4e-4, 5e-4, 1e-5),
                ("table7", "mlp") => (OptimizerName::Adagrad, 0.0, 1e-2, 1e-5),
                ("table7", "opnn") => (OptimizerName::Adagrad, 8e-5, 8e-5, 1e-5),
                ("table7", "dcn") => (OptimizerName::Adagrad, 0.0, 4e-3, 1e-5),
                _ => return Err(unknown()),
            };
            cfg.optimizer.name = name;
            cfg.optimizer.group = true;
            cfg.optimizer.lr = table5_lr(name, model).ok_or_else(unknown)?;
            cfg.reg.lambda1 = l1;
            cfg.reg.lambda21 = l21;
            cfg.reg.lambda2 = l2;
        }
        _ => return Err(unknown()),
    }
    Ok(())
}

/// λ₂₁ grid for the practical variant.
pub const GRID_S: [f64; 10] = [0.0, 1e-4, 2.5e-4, 5e-4, 1e-3, 2.5e-3, 5e-3, 7.5e-3, 1e-2, 2.5e-2];
/// λ₂₁ grid for the exact variant.
pub const GRID_S_TILDE: [f64; 10] = [0.0, 0.05, 0.075, 0.1, 0.125, 0.15, 0.175, 0.2, 0.225, 0.25];

/// `table8-s`, `table8-stilde`, or a comma-separated list of numbers.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    match spec {
        "table8-s" => Ok(GRID_S.to_vec()),
        "table8-stilde" => Ok(GRID_S_TILDE.to_vec()),
        list => list
            .split(',')
            .map(|s| {
                let v: f64 = s.trim().parse().map_err(|_| config_err("grid", format!("bad value `{s}`")))?;
                if v >= 0.0 && v.is_finite() {
                    Ok(v)
                } else {
                    Err(config_err("grid", format!("values must be finite and >= 0, got {v}")))
                }
            })
            .collect(),
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `epoch,logloss,auc,sparsity,nonzero_groups,wall_ms`.
pub fn write_metrics_csv<W: Write>(mut out: W, epochs: &[EpochMetrics]) -> Result<()> {
    writeln!(out, "epoch,logloss,auc,sparsity,nonzero_groups,wall_ms")?;
    for e in epochs {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.epoch,
            e.logloss,
            opt_num(e.auc),
            e.sparsity,
            e.nonzero_groups,
            e.wall_ms
        )?;
    }
    Ok(())
}

/// One row per grid point with means and standard deviations over repeats.
pub fn write_sweep_csv<W: Write>(mut out: W, report: &SweepReport) -> Result<()> {
    writeln!(
        out,
        "lambda1,lambda21,variant,logloss,auc,auc_std,sparsity,sparsity_std,nonzero_groups"
    )?;
    for p in &report.points {
        let a = &p.aggregate;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.lambda1,
            p.lambda21,
            p.variant.as_str(),
            a.logloss.mean,
            a.auc.mean,
            a.auc.stddev,
            a.sparsity.mean,
            a.sparsity.stddev,
            a.nonzero_groups.mean
        )?;
    }
    Ok(())
}

pub fn write_prune_csv<W: Write>(mut out: W, report: &PruneReport) -> Result<()> {
    writeln!(out, "seed,target_keep,finetune_fraction,logloss,auc,sparsity,nonzero_groups")?;
    for r in &report.runs {
        for f in &r.fractions {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.seed,
                r.target_keep,
                f.finetune_fraction,
                f.metrics.logloss,
                opt_num(f.metrics.auc),
                f.metrics.sparsity,
                f.metrics.nonzero_groups
            )?;
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// `report.json`, `metrics.csv` (first repeat), `metrics_rep{k}.csv` for
/// further repeats, and `checkpoint.json` of the first repeat's model.
pub fn write_train_outputs(dir: &Path, report: &RunReport, runs: &[TrainedRun]) -> Result<()> {
    create_dir(dir)?;
    write_json(dir.join("report.json"), report)?;
    for (k, r) in report.runs.iter().enumerate() {
        let name = if k == 0 {
            "metrics.csv".to_string()
        } else {
            format!("metrics_rep{k}.csv")
        };
        write_metrics_csv(fs::File::create(dir.join(name))?, &r.epochs)?;
    }
    if let Some(first) = runs.first() {
        first.model.save(dir.join("checkpoint.json"))?;
    }
    Ok(())
}

pub fn write_sweep_outputs(dir: &Path, report: &SweepReport) -> Result<()> {
    create_dir(dir)?;
    write_json(dir.join("sweep.json"), report)?;
    write_sweep_csv(fs::File::create(dir.join("sweep.csv"))?, report)
}

pub fn write_prune_outputs(dir: &Path, report: &PruneReport) -> Result<()> {
    create_dir(dir)?;
    write_json(dir.join("prune.json"), report)?;
    write_prune_csv(fs::File::create(dir.join("prune.csv"))?, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_tables() {
        let mut cfg = ExperimentConfig::default();
        apply_preset(&mut cfg, "table5-adam-mlp").unwrap();
        assert_eq!(cfg.optimizer.lr, 1e-4);
        apply_preset(&mut cfg, "table6-dcn").unwrap();
        assert_eq!((cfg.reg.lambda1, cfg.reg.lambda21, cfg.reg.lambda2), (4e-4, 5e-4, 1e-5));
        assert_eq!(cfg.optimizer.lr, 1e-3);
        assert!(cfg.optimizer.group);
        apply_preset(&mut cfg, "table7-opnn").unwrap();
        assert_eq!(cfg.optimizer.name, OptimizerName::Adagrad);
        assert_eq!((cfg.reg.lambda1, cfg.reg.lambda21), (8e-5, 8e-5));
        for p in PRESETS {
            apply_preset(&mut cfg, p).unwrap();
        }
        assert!(apply_preset(&mut cfg, "table9-mlp").is_err());
    }

    #[test]
    fn default_lambda2() {
        let cfg = ExperimentConfig::from_json(r#"{"reg": {"lambda21": 0.01}}"#).unwrap();
        assert_eq!(cfg.reg.lambda2, 1e-5);
        assert!(cfg.reg.apply_to.contains("embedding"));
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = ExperimentConfig::from_json(r#"{"optimizer": {"name": "adam", "lr": "fast"}}"#).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "optimizer.lr"),
            other => panic!("{other}"),
        }
        let err = ExperimentConfig::from_json(r#"{"epochs": 0}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "epochs"));
        let err = ExperimentConfig::from_json(r#"{"optimizer": {"name": "ftrl", "group": true, "lr": 0.1}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "optimizer"));
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("table8-s").unwrap().len(), 10);
        assert_eq!(parse_grid("table8-stilde").unwrap()[9], 0.25);
        assert_eq!(parse_grid("0, 1e-3").unwrap(), vec![0.0, 1e-3]);
        assert!(parse_grid("a").is_err());
        assert!(parse_grid("-1").is_err());
    }

    #[test]
    fn stat_of_values() {
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.stddev - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[5.0]).stddev, 0.0);
    }

    #[test]
    fn keep_resolution() {
        assert_eq!(resolve_keep(PruneTarget::KeepRate(0.1), 200, 300).unwrap(), 20);
        assert_eq!(resolve_keep(PruneTarget::Keep(7), 200, 300).unwrap(), 7);
        assert!(resolve_keep(PruneTarget::Keep(301), 200, 300).is_err());
    }
}
