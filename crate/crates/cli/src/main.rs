//! `sgl`: train, sweep, prune-baseline, prox-selftest and regret commands.
//!
//! Settings are layered: JSON config file, then `--preset`, then flags.
//! Exit codes: 0 success, 2 config or input error, 3 numeric failure,
//! 4 self-test failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sgl_optim::data::SynthSpec;
use sgl_optim::experiment::{
    apply_preset, parse_grid, prepare_data, run_prune_baseline, run_sweep, run_train, write_prune_outputs,
    write_sweep_outputs, write_train_outputs, Aggregate, DataSource, ExperimentConfig, PruneTarget, Stat, SweepMode,
    GRID_S, GRID_S_TILDE,
};
use sgl_optim::optim::{OptimizerSpec, RegConfig};
use sgl_optim::prox::Variant;
use sgl_optim::regret::{run_regret, write_regret_csv, LrDecay, OnlineProblem, ProblemKind, RegretSummary};
use sgl_optim::selftest::run_prox_selftest;
use sgl_optim::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_SELFTEST: u8 = 4;

#[derive(Parser)]
#[command(name = "sgl", version, about = "Sparse group lasso optimizers: experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration.
    Train(ExperimentArgs),
    /// One run per regularization strength.
    Sweep(SweepArgs),
    /// Magnitude-pruning baseline on the vanilla optimizer.
    PruneBaseline(PruneArgs),
    /// Compare the closed-form prox against the brute-force oracle.
    ProxSelftest(SelftestArgs),
    /// Empirical regret on an online convex problem.
    Regret(RegretArgs),
}

#[derive(Args, Default)]
struct ExperimentArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named hyperparameter preset, e.g. table6-dcn.
    #[arg(long)]
    preset: Option<String>,
    /// Optimizer such as adam, group-adam, group-adagrad or ftrl.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda21: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Group gate: practical or exact.
    #[arg(long)]
    variant: Option<Variant>,
    /// Blocks the penalty applies to.
    #[arg(long, value_delimiter = ',')]
    apply_to: Option<Vec<String>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Independent runs from seeds seed, seed+1, ...
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    hidden_dims: Option<Vec<usize>>,
    /// libsvm training file; replaces synthetic data.
    #[arg(long)]
    train_file: Option<PathBuf>,
    /// libsvm test file; defaults to the last 10% of the training file.
    #[arg(long, requires = "train_file")]
    test_file: Option<PathBuf>,
    #[arg(long)]
    num_fields: Option<usize>,
    #[arg(long)]
    vocab_per_field: Option<usize>,
    #[arg(long)]
    informative_fraction: Option<f64>,
    #[arg(long)]
    num_samples: Option<usize>,
    /// Label flip probability of the synthetic generator.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    weight_scale: Option<f64>,
    /// Seed of the synthetic generator.
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// table8-s, table8-stilde or a comma-separated list. Defaults to the
    /// grid matching the variant.
    #[arg(long)]
    grid: Option<String>,
    /// Which penalty the grid drives: l21 or l1.
    #[arg(long, default_value = "l21")]
    mode: SweepMode,
}

#[derive(Args)]
struct PruneArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Embedding rows to keep.
    #[arg(long, conflicts_with = "target_sparsity", required_unless_present = "target_sparsity")]
    target_keep: Option<usize>,
    /// Keep-rate over the features seen in training.
    #[arg(long)]
    target_sparsity: Option<f64>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 1000)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes selftest.json with every case.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RegretArgs {
    /// quadratic, stationary, alternating, zero or logistic.
    #[arg(long, default_value = "quadratic")]
    problem: ProblemKind,
    #[arg(long, default_value_t = 5)]
    dim: usize,
    #[arg(long, default_value_t = 1 << 14)]
    horizon: usize,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Optimizer family; always run in its group form.
    #[arg(long, default_value = "adagrad")]
    optimizer: String,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// constant or inv-sqrt.
    #[arg(long, default_value = "constant")]
    lr_decay: LrDecay,
    #[arg(long, default_value_t = 0.0)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda21: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda2: f64,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn config_error(path: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

fn build_config(args: &ExperimentArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(preset) = &args.preset {
        apply_preset(&mut cfg, preset)?;
    }
    if let Some(name) = &args.optimizer {
        let (name, group) = OptimizerSpec::parse_name(name).map_err(|e| config_error("optimizer", e))?;
        cfg.optimizer.name = name;
        cfg.optimizer.group = group;
    }
    let opt = &mut cfg.optimizer;
    set(&mut opt.lr, args.lr);
    set(&mut opt.beta1, args.beta1);
    set(&mut opt.beta2, args.beta2);
    set(&mut opt.gamma, args.gamma);
    set(&mut opt.epsilon, args.epsilon);
    let reg = &mut cfg.reg;
    set(&mut reg.lambda1, args.lambda1);
    set(&mut reg.lambda21, args.lambda21);
    set(&mut reg.lambda2, args.lambda2);
    set(&mut reg.variant, args.variant);
    if let Some(blocks) = &args.apply_to {
        reg.apply_to = blocks.iter().cloned().collect();
    }
    set(&mut cfg.epochs, args.epochs);
    set(&mut cfg.batch_size, args.batch_size);
    set(&mut cfg.seed, args.seed);
    set(&mut cfg.repeats, args.repeats);
    set(&mut cfg.model.embed_dim, args.embed_dim);
    if let Some(h) = &args.hidden_dims {
        cfg.model.hidden_dims = h.clone();
    }
    if let Some(train) = &args.train_file {
        cfg.data = DataSource::Libsvm {
            train: train.clone(),
            test: args.test_file.clone(),
        };
    }
    let synth_flags = args.num_fields.is_some()
        || args.vocab_per_field.is_some()
        || args.informative_fraction.is_some()
        || args.num_samples.is_some()
        || args.noise.is_some()
        || args.weight_scale.is_some()
        || args.data_seed.is_some();
    match &mut cfg.data {
        DataSource::Synthetic(spec) => apply_synth(spec, args),
        DataSource::Libsvm { .. } if synth_flags => {
            return Err(config_error("data", "synthetic-data flags given but the data source is libsvm"));
        }
        DataSource::Libsvm { .. } => {}
    }
    if args.output_dir.is_some() {
        cfg.output_dir = args.output_dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_synth(spec: &mut SynthSpec, args: &ExperimentArgs) {
    set(&mut spec.num_fields, args.num_fields);
    set(&mut spec.vocab_per_field, args.vocab_per_field);
    set(&mut spec.informative_fraction, args.informative_fraction);
    set(&mut spec.num_samples, args.num_samples);
    set(&mut spec.noise, args.noise);
    set(&mut spec.weight_scale, args.weight_scale);
    set(&mut spec.seed, args.data_seed);
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

fn pm(s: &Stat) -> String {
    format!("{:.4} ± {:.4}", s.mean, s.stddev)
}

fn print_aggregate(label: &str, a: &Aggregate) {
    println!(
        "{label}: auc {}  logloss {}  keep-rate {}  nonzero groups {}  (n = {})",
        pm(&a.auc),
        pm(&a.logloss),
        pm(&a.sparsity),
        pm(&a.nonzero_groups),
        a.repeats
    );
}

fn cmd_train(args: &ExperimentArgs) -> Result<(), Error> {
    let cfg = build_config(args)?;
    let data = prepare_data(&cfg.data)?;
    let (report, runs) = run_train(&cfg, &data)?;
    print_aggregate(&report.optimizer, &report.aggregate);
    if let Some(dir) = &cfg.output_dir {
        write_train_outputs(dir, &report, &runs)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Error> {
    let cfg = build_config(&args.exp)?;
    let grid = match &args.grid {
        Some(g) => parse_grid(g)?,
        None if cfg.reg.variant == Variant::ExactSTilde => GRID_S_TILDE.to_vec(),
        None => GRID_S.to_vec(),
    };
    let data = prepare_data(&cfg.data)?;
    let report = run_sweep(&cfg, &data, &grid, args.mode)?;
    println!("lambda,auc,auc_std,keep_rate,nonzero_groups");
    for p in &report.points {
        let a = &p.aggregate;
        println!(
            "{},{:.6},{:.6},{:.6},{}",
            p.lambda, a.auc.mean, a.auc.stddev, a.sparsity.mean, a.nonzero_groups.mean
        );
    }
    if let Some(dir) = &cfg.output_dir {
        write_sweep_outputs(dir, &report)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn cmd_prune(args: &PruneArgs) -> Result<(), Error> {
    let cfg = build_config(&args.exp)?;
    let target = match (args.target_keep, args.target_sparsity) {
        (Some(k), _) => PruneTarget::Keep(k),
        (None, Some(r)) => PruneTarget::KeepRate(r),
        (None, None) => return Err(config_error("target_keep", "give --target-keep or --target-sparsity")),
    };
    let data = prepare_data(&cfg.data)?;
    let report = run_prune_baseline(&cfg, &data, target)?;
    for run in &report.runs {
        println!(
            "seed {}: keep {}  unpruned auc {:.4}  best auc {:.4} at fine-tune fraction {}",
            run.seed,
            run.target_keep,
            run.unpruned.auc.unwrap_or(f64::NAN),
            run.best.metrics.auc.unwrap_or(f64::NAN),
            run.best.finetune_fraction
        );
    }
    println!("{} pruned: best auc {}", report.optimizer, pm(&report.best_auc));
    if let Some(dir) = &cfg.output_dir {
        write_prune_outputs(dir, &report)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_selftest(args: &SelftestArgs) -> Result<bool, Error> {
    let summary = run_prox_selftest(args.cases, args.seed);
    println!(
        "{} (certified {}, worst diff {:.3e})",
        summary.headline(),
        summary.certified,
        summary.worst_diff
    );
    if let Some(dir) = &args.output_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("selftest.json"), &summary)?;
    }
    Ok(summary.passed())
}

fn cmd_regret(args: &RegretArgs) -> Result<(), Error> {
    let (name, _) = OptimizerSpec::parse_name(&args.optimizer).map_err(|e| config_error("optimizer", e))?;
    let mut spec = OptimizerSpec::new(name, name != sgl_optim::optim::OptimizerName::Ftrl, args.lr);
    set(&mut spec.beta1, args.beta1);
    set(&mut spec.beta2, args.beta2);
    set(&mut spec.epsilon, args.epsilon);
    spec.validate().map_err(|e| config_error("optimizer", e.to_string()))?;
    if spec.schedule().is_none() {
        return Err(config_error("optimizer", "regret runs need an adaptive optimizer, not ftrl"));
    }
    if args.repeats == 0 {
        return Err(config_error("repeats", "must be positive"));
    }
    let reg = RegConfig::new(args.lambda1, args.lambda21, args.lambda2, &[sgl_optim::regret::BLOCK]);
    reg.validate().map_err(|e| config_error("reg", e.to_string()))?;
    let mut summaries: Vec<RegretSummary> = Vec::new();
    for k in 0..args.repeats as u64 {
        let problem = OnlineProblem {
            kind: args.problem,
            dim: args.dim,
            horizon: args.horizon,
            radius: args.radius,
            seed: args.seed + k,
        };
        problem.validate().map_err(|e| config_error("problem", e.to_string()))?;
        let run = run_regret(&problem, &spec, &reg, args.lr_decay)?;
        let s = run.summary();
        let bound = match (s.bound.rhs, s.bound.holds) {
            (Some(rhs), Some(true)) => format!("holds (rhs {rhs:.3})"),
            (Some(rhs), _) => format!("VIOLATED (rhs {rhs:.3})"),
            _ => "condition unmet".to_string(),
        };
        println!(
            "seed {}: R_T {:.4}  slope {}  premise {:.3}  bound {bound}",
            problem.seed,
            s.final_regret,
            s.slope.map_or("n/a".into(), |v| format!("{v:.3}")),
            s.premise_fraction
        );
        summaries.push(s);
    }
    if args.repeats > 1 {
        let finals: Vec<f64> = summaries.iter().map(|s| s.final_regret).collect();
        let slopes: Vec<f64> = summaries.iter().filter_map(|s| s.slope).collect();
        println!("R_T {}  slope {}", pm(&Stat::of(&finals)), pm(&Stat::of(&slopes)));
    }
    if let Some(dir) = &args.output_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("regret.json"), &summaries)?;
        for (k, s) in summaries.iter().enumerate() {
            let name = if k == 0 {
                "regret.csv".to_string()
            } else {
                format!("regret_rep{k}.csv")
            };
            write_regret_csv(std::fs::File::create(dir.join(name))?, &s.curve)?;
        }
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_numeric() { EXIT_NUMERIC } else { EXIT_CONFIG })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::PruneBaseline(a) => cmd_prune(a),
        Command::Regret(a) => cmd_regret(a),
        Command::ProxSelftest(a) => match cmd_selftest(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(EXIT_SELFTEST),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => exit_for(&e),
    }
}
