//! Benchmark CLI: dataset generation, training, evaluation, calibration
//! sweeps and sensitivity inspection for the DC-OPF learned-dispatch
//! pipeline.
//!
//! Exit codes: 0 success, 2 usage, 3 validation (bad case data, hash
//! mismatch, invalid calibration), 4 numerical failure.

mod config;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use config::FileConfig;
use dcopf_core::calibration::{
    apply_plan, compute_sensitivity, plan_from_epsilon, plan_from_percent, worst_case_error_bound,
    CalibrationPlan,
};
use dcopf_core::dataset::{generate_dataset, Regime, TrainingDataset};
use dcopf_core::grid::{build_admittance, parse_case, CaseFormat, GridError, PowerNetwork};
use dcopf_core::mlp::{load_model, save_model, train, TrainConfig};
use dcopf_core::pipeline::Fallback;
use dcopf_core::report::{evaluate, run_sweep, Predictor};
use dcopf_core::solver::SolverOptions;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_VALIDATION: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "dcopf-bench", version, about)]
struct Cli {
    /// Optional TOML config file; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $DCOPF_BENCH_OUT or ".").
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CaseArgs {
    /// Path to the case file.
    #[arg(long)]
    case: PathBuf,
    /// Case file format.
    #[arg(long, value_parser = ["matpower", "json"], default_value = "matpower")]
    format: String,
}

#[derive(Args, Clone, Default)]
struct SolverArgs {
    /// KKT residual tolerance.
    #[arg(long)]
    tol_kkt: Option<f64>,
    /// Duality gap tolerance.
    #[arg(long)]
    tol_gap: Option<f64>,
    /// Interior-point iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Solver chatter on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Clone, Default)]
struct TrainArgs {
    /// Hidden layer widths, comma separated (e.g. 32,16,8).
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Weight of the squared-error loss term.
    #[arg(long)]
    w1: Option<f64>,
    /// Weight of the line-violation penalty term.
    #[arg(long)]
    w2: Option<f64>,
    /// Training seed (init + shuffle order).
    #[arg(long)]
    train_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample loads, solve them and write train/test dataset files.
    GenData {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        n_train: usize,
        #[arg(long)]
        n_test: usize,
        /// Sampling window as fractions of the default load, "lo:hi".
        #[arg(long)]
        range: Option<String>,
        /// Percent calibration fraction (e.g. 0.035); 0 = uncalibrated.
        #[arg(long)]
        percent: Option<f64>,
        /// Absolute calibration from a per-generator error bound (MW).
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Basename for the output files (default: case stem).
        #[arg(long)]
        tag: Option<String>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Train a model on a dataset file.
    Train {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        tag: Option<String>,
    },
    /// Evaluate a model (or the stored-label oracle) on a test set.
    Eval {
        #[command(flatten)]
        case: CaseArgs,
        /// Model file; omit with --oracle.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Existing test-set file.
        #[arg(long)]
        test_set: Option<PathBuf>,
        /// Sample a fresh test set in this regime instead.
        #[arg(long, value_parser = ["full", "light", "heavy"])]
        regime: Option<String>,
        /// Fresh test-set size (with --regime).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = ["none", "l1-projection"], default_value = "l1-projection")]
        fallback: String,
        /// Replay the stored ground-truth scaling factors instead of a
        /// model (protocol check).
        #[arg(long, default_value_t = false)]
        oracle: bool,
        #[arg(long)]
        tag: Option<String>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Train and evaluate one model per calibration value.
    Sweep {
        #[command(flatten)]
        case: CaseArgs,
        /// Comma-separated percent values (e.g. 0.5,3.5,7).
        #[arg(long)]
        calibrations: String,
        #[arg(long)]
        n_train: usize,
        #[arg(long)]
        n_test: usize,
        #[arg(long)]
        range: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_parser = ["none", "l1-projection"], default_value = "l1-projection")]
        fallback: String,
        #[arg(long)]
        tag: Option<String>,
    },
    /// Print sensitivity factors and calibration plans for a case.
    Calibrate {
        #[command(flatten)]
        case: CaseArgs,
        /// Build an absolute plan from this error bound (MW).
        #[arg(long)]
        epsilon: Option<f64>,
        /// Build a percent plan from this fraction.
        #[arg(long)]
        percent: Option<f64>,
        /// Lipschitz constant for the worst-case error bound.
        #[arg(long)]
        lambda: Option<f64>,
        /// Input-domain diameter for the worst-case error bound.
        #[arg(long)]
        diameter: Option<f64>,
        /// Max neurons per hidden layer for the bound.
        #[arg(long)]
        neurons: Option<u32>,
        /// Hidden layer count for the bound.
        #[arg(long)]
        hidden_layers: Option<u32>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }
    fn numerical(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }
    fn other(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::other(format!("{e:#}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file_config = match &cli.config {
        Some(path) => FileConfig::load(path)
            .map_err(|e| Failure::validation(format!("config file: {e:#}")))?,
        None => FileConfig::default(),
    };
    let out_dir = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("DCOPF_BENCH_OUT").map(PathBuf::from))
        .or_else(|| file_config.out_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    match cli.command {
        Command::GenData {
            case,
            n_train,
            n_test,
            range,
            percent,
            epsilon,
            seed,
            tag,
            solver,
        } => cmd_gen_data(
            &out_dir,
            &file_config,
            case,
            n_train,
            n_test,
            range,
            percent,
            epsilon,
            seed,
            tag,
            solver,
        ),
        Command::Train {
            case,
            dataset,
            train,
            tag,
        } => cmd_train(&out_dir, &file_config, case, dataset, train, tag),
        Command::Eval {
            case,
            model,
            test_set,
            regime,
            n,
            seed,
            fallback,
            oracle,
            tag,
            solver,
        } => cmd_eval(
            &out_dir,
            &file_config,
            case,
            model,
            test_set,
            regime,
            n,
            seed,
            &fallback,
            oracle,
            tag,
            solver,
        ),
        Command::Sweep {
            case,
            calibrations,
            n_train,
            n_test,
            range,
            seed,
            train,
            fallback,
            tag,
        } => cmd_sweep(
            &out_dir,
            &file_config,
            case,
            &calibrations,
            n_train,
            n_test,
            range,
            seed,
            train,
            &fallback,
            tag,
        ),
        Command::Calibrate {
            case,
            epsilon,
            percent,
            lambda,
            diameter,
            neurons,
            hidden_layers,
        } => cmd_calibrate(
            case,
            epsilon,
            percent,
            lambda,
            diameter,
            neurons,
            hidden_layers,
        ),
    }
}

fn load_case(args: &CaseArgs) -> Result<PowerNetwork, Failure> {
    let format = match args.format.as_str() {
        "json" => CaseFormat::NativeJson,
        _ => CaseFormat::MatpowerSubset,
    };
    let parsed = parse_case(&args.case, format).map_err(|e| match e {
        GridError::Io { .. } => Failure::other(e.to_string()),
        GridError::Parse { .. } | GridError::Validation(_) | GridError::Singular(_) => {
            Failure::validation(e.to_string())
        }
    })?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    Ok(parsed.network)
}

fn parse_range(text: Option<&str>, file_config: &FileConfig) -> Result<(f64, f64), Failure> {
    let fallback = file_config.range.unwrap_or((1.0, 1.3));
    let Some(text) = text else {
        return Ok(fallback);
    };
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 2 {
        return Err(Failure::validation(format!(
            "range must be lo:hi, got '{text}'"
        )));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| Failure::validation(format!("bad range low '{}'", parts[0])))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| Failure::validation(format!("bad range high '{}'", parts[1])))?;
    Ok((lo, hi))
}

fn solver_options(args: &SolverArgs, file_config: &FileConfig) -> SolverOptions {
    let defaults = SolverOptions::default();
    SolverOptions {
        tol_kkt: args
            .tol_kkt
            .or(file_config.tol_kkt)
            .unwrap_or(defaults.tol_kkt),
        tol_gap: args
            .tol_gap
            .or(file_config.tol_gap)
            .unwrap_or(defaults.tol_gap),
        max_iter: args
            .max_iter
            .or(file_config.max_iter)
            .unwrap_or(defaults.max_iter),
        verbosity: args.verbose,
    }
}

fn train_config(args: &TrainArgs, file_config: &FileConfig) -> Result<TrainConfig, Failure> {
    let defaults = TrainConfig::default();
    let hidden = match args.hidden.as_deref() {
        Some(text) => Some(parse_hidden(text)?),
        None => file_config.hidden.clone(),
    };
    Ok(TrainConfig {
        hidden_dims: hidden,
        epochs: args
            .epochs
            .or(file_config.epochs)
            .unwrap_or(defaults.epochs),
        batch_size: args
            .batch
            .or(file_config.batch_size)
            .unwrap_or(defaults.batch_size),
        learning_rate: args
            .lr
            .or(file_config.learning_rate)
            .unwrap_or(defaults.learning_rate),
        momentum: args
            .momentum
            .or(file_config.momentum)
            .unwrap_or(defaults.momentum),
        w1: args.w1.or(file_config.w1).unwrap_or(defaults.w1),
        w2: args.w2.or(file_config.w2).unwrap_or(defaults.w2),
        seed: args.train_seed.unwrap_or(defaults.seed),
    })
}

fn parse_hidden(text: &str) -> Result<Vec<usize>, Failure> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Failure::validation(format!("bad hidden width '{p}'")))
        })
        .collect()
}

fn build_plan(
    net: &PowerNetwork,
    percent: Option<f64>,
    epsilon: Option<f64>,
) -> Result<CalibrationPlan, Failure> {
    match (percent, epsilon) {
        (Some(_), Some(_)) => Err(Failure::validation(
            "--percent and --epsilon are mutually exclusive",
        )),
        (Some(c), None) => plan_from_percent(c).map_err(|e| Failure::validation(e.to_string())),
        (None, Some(eps)) => {
            let adm = build_admittance(net).map_err(|e| Failure::validation(e.to_string()))?;
            let sens = compute_sensitivity(&adm);
            plan_from_epsilon(&sens, net.n_generators(), eps, net)
                .map_err(|e| Failure::validation(e.to_string()))
        }
        (None, None) => Ok(CalibrationPlan::none()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_data(
    out_dir: &Path,
    file_config: &FileConfig,
    case: CaseArgs,
    n_train: usize,
    n_test: usize,
    range: Option<String>,
    percent: Option<f64>,
    epsilon: Option<f64>,
    seed: u64,
    tag: Option<String>,
    _solver: SolverArgs,
) -> Result<(), Failure> {
    let net = load_case(&case)?;
    let adm = build_admittance(&net).map_err(|e| Failure::validation(e.to_string()))?;
    let range = parse_range(range.as_deref(), file_config)?;
    let plan = build_plan(&net, percent, epsilon)?;
    let (train_ds, test_ds, stats) =
        generate_dataset(&net, &adm, &plan, n_train, n_test, range, seed).map_err(|e| {
            use dcopf_core::dataset::DatasetError::*;
            match e {
                InvalidRange { .. } | Calibration(_) => Failure::validation(e.to_string()),
                CalibrationTooAggressive { .. } => Failure::validation(e.to_string()),
                _ => Failure::numerical(e.to_string()),
            }
        })?;
    let tag = tag.unwrap_or_else(|| net.name.clone());
    let train_path = out_dir.join(format!("{tag}-train.ds"));
    let test_path = out_dir.join(format!("{tag}-test.ds"));
    train_ds
        .save(&train_path)
        .map_err(|e| Failure::other(e.to_string()))?;
    test_ds
        .save(&test_path)
        .map_err(|e| Failure::other(e.to_string()))?;
    let manifest = serde_json::json!({
        "case": net.name,
        "network_id": net.content_hash(),
        "calibration": plan,
        "calibrated": !plan.is_identity(),
        "seed": seed,
        "range": range,
        "n_train": n_train,
        "n_test": n_test,
        "train_discarded": stats.train_discarded,
        "train_attempts": stats.train_attempts,
        "test_discarded": stats.test_discarded,
        "test_attempts": stats.test_attempts,
        "files": {
            "train": train_path.display().to_string(),
            "test": test_path.display().to_string(),
        },
    });
    let manifest_path = out_dir.join(format!("{tag}-manifest.json"));
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .with_context(|| format!("writing {}", manifest_path.display()))?;
    println!(
        "wrote {} ({} records, {} discarded), {} ({} records, {} discarded), {}",
        train_path.display(),
        train_ds.records.len(),
        stats.train_discarded,
        test_path.display(),
        test_ds.records.len(),
        stats.test_discarded,
        manifest_path.display()
    );
    Ok(())
}

fn cmd_train(
    out_dir: &Path,
    file_config: &FileConfig,
    case: CaseArgs,
    dataset: PathBuf,
    train_args: TrainArgs,
    tag: Option<String>,
) -> Result<(), Failure> {
    let net = load_case(&case)?;
    let adm = build_admittance(&net).map_err(|e| Failure::validation(e.to_string()))?;
    let ds = TrainingDataset::load(&dataset, net.n_buses())
        .map_err(|e| Failure::validation(e.to_string()))?;
    let config = train_config(&train_args, file_config)?;
    let (model, trace) = train(&net, &adm, &ds, &config).map_err(|e| {
        use dcopf_core::mlp::MlpError::*;
        match e {
            NanLoss { .. } => Failure::numerical(e.to_string()),
            Io { .. } | Format { .. } => Failure::other(e.to_string()),
            _ => Failure::validation(e.to_string()),
        }
    })?;
    let tag = tag.unwrap_or_else(|| net.name.clone());
    let model_path = out_dir.join(format!("{tag}-model.bin"));
    save_model(&model, &model_path).map_err(|e| Failure::other(e.to_string()))?;
    let trace_path = out_dir.join(format!("{tag}-trace.csv"));
    let mut csv = String::from("epoch,l_pg,l_pen,total\n");
    for t in &trace {
        csv.push_str(&format!("{},{},{},{}\n", t.epoch, t.l_pg, t.l_pen, t.total));
    }
    std::fs::write(&trace_path, csv)
        .with_context(|| format!("writing {}", trace_path.display()))?;
    if let Some(last) = trace.last() {
        println!(
            "trained {} epochs: l_pg {:.3e}, l_pen {:.3e}; wrote {} and {}",
            trace.len(),
            last.l_pg,
            last.l_pen,
            model_path.display(),
            trace_path.display()
        );
    } else {
        println!(
            "trained 0 epochs (initialization only); wrote {}",
            model_path.display()
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    out_dir: &Path,
    file_config: &FileConfig,
    case: CaseArgs,
    model_path: Option<PathBuf>,
    test_set: Option<PathBuf>,
    regime: Option<String>,
    n: Option<usize>,
    seed: u64,
    fallback: &str,
    oracle: bool,
    tag: Option<String>,
    solver: SolverArgs,
) -> Result<(), Failure> {
    let net = load_case(&case)?;
    let adm = build_admittance(&net).map_err(|e| Failure::validation(e.to_string()))?;
    let fallback = match fallback {
        "none" => Fallback::None,
        _ => Fallback::L1Projection,
    };
    let opts = solver_options(&solver, file_config);

    let test = match (test_set, regime) {
        (Some(path), None) => TrainingDataset::load(&path, net.n_buses())
            .map_err(|e| Failure::validation(e.to_string()))?,
        (None, Some(regime)) => {
            let regime = match regime.as_str() {
                "light" => Regime::Light,
                "heavy" => Regime::Heavy,
                _ => Regime::Full,
            };
            let n = n.ok_or_else(|| Failure::validation("--regime requires --n"))?;
            let (_, test, _) = generate_dataset(
                &net,
                &adm,
                &CalibrationPlan::none(),
                0,
                n,
                regime.range(),
                seed,
            )
            .map_err(|e| Failure::numerical(e.to_string()))?;
            test
        }
        (Some(_), Some(_)) => {
            return Err(Failure::validation(
                "--test-set and --regime are mutually exclusive",
            ))
        }
        (None, None) => {
            return Err(Failure::validation(
                "one of --test-set or --regime is required",
            ))
        }
    };

    let model = match (&model_path, oracle) {
        (Some(path), false) => {
            Some(load_model(path).map_err(|e| Failure::validation(e.to_string()))?)
        }
        (None, true) => None,
        (Some(_), true) => {
            return Err(Failure::validation(
                "--model and --oracle are mutually exclusive",
            ))
        }
        (None, false) => return Err(Failure::validation("--model or --oracle is required")),
    };
    if let Some(m) = &model {
        let hash = net.content_hash();
        if m.network_hash != hash {
            return Err(Failure::validation(format!(
                "model is bound to network {}, case is {}",
                m.network_hash, hash
            )));
        }
    }
    let predictor = match &model {
        Some(m) => Predictor::Model(m),
        None => Predictor::Oracle,
    };
    let report = evaluate(&net, &adm, &test, predictor, fallback, &opts).map_err(|e| {
        use dcopf_core::report::ReportError::*;
        match e {
            NetworkMismatch { .. } => Failure::validation(e.to_string()),
            _ => Failure::numerical(e.to_string()),
        }
    })?;

    let tag = tag.unwrap_or_else(|| net.name.clone());
    let instances_path = out_dir.join(format!("{tag}-instances.csv"));
    let summary_path = out_dir.join(format!("{tag}-summary.csv"));
    let md_path = out_dir.join(format!("{tag}-report.md"));
    let predictions_path = out_dir.join(format!("{tag}-predictions.jsonl"));
    std::fs::write(&instances_path, report.instances_csv())
        .with_context(|| format!("writing {}", instances_path.display()))?;
    std::fs::write(&predictions_path, report.prediction_log.join("\n") + "\n")
        .with_context(|| format!("writing {}", predictions_path.display()))?;
    std::fs::write(&summary_path, report.summary_csv())
        .with_context(|| format!("writing {}", summary_path.display()))?;
    std::fs::write(&md_path, report.markdown())
        .with_context(|| format!("writing {}", md_path.display()))?;
    print!("{}", report.markdown());
    let a = &report.aggregates;
    println!(
        "n={} feasibility={:.2}% loss={:.2}% avg_time_model={:.3}ms avg_time_solver={:.3}ms speedup=x{:.0}",
        a.n_instances,
        a.feasibility_rate_pct,
        a.optimality_loss_pct,
        a.avg_time_dnn_ms,
        a.avg_time_solver_ms,
        a.avg_speedup
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    out_dir: &Path,
    file_config: &FileConfig,
    case: CaseArgs,
    calibrations: &str,
    n_train: usize,
    n_test: usize,
    range: Option<String>,
    seed: u64,
    train_args: TrainArgs,
    fallback: &str,
    tag: Option<String>,
) -> Result<(), Failure> {
    let net = load_case(&case)?;
    let adm = build_admittance(&net).map_err(|e| Failure::validation(e.to_string()))?;
    let range = parse_range(range.as_deref(), file_config)?;
    let config = train_config(&train_args, file_config)?;
    let fallback = match fallback {
        "none" => Fallback::None,
        _ => Fallback::L1Projection,
    };
    if calibrations.trim().is_empty() {
        return Err(Failure {
            code: 2,
            message: "empty calibration list".into(),
        });
    }
    let cs: Vec<f64> = calibrations
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map(|v| v / 100.0)
                .map_err(|_| Failure::validation(format!("bad calibration '{p}' (percent)")))
        })
        .collect::<Result<_, _>>()?;
    if cs.is_empty() {
        return Err(Failure {
            code: 2,
            message: "empty calibration list".into(),
        });
    }
    let sweep = run_sweep(
        &net, &adm, &cs, n_train, n_test, range, seed, &config, fallback,
    );
    let tag = tag.unwrap_or_else(|| net.name.clone());
    let md_path = out_dir.join(format!("{tag}-sweep.md"));
    let csv_path = out_dir.join(format!("{tag}-sweep.csv"));
    std::fs::write(&md_path, sweep.markdown())
        .with_context(|| format!("writing {}", md_path.display()))?;
    std::fs::write(&csv_path, sweep.summary_csv())
        .with_context(|| format!("writing {}", csv_path.display()))?;
    print!("{}", sweep.markdown());
    let failures = sweep.entries.iter().filter(|e| e.outcome.is_err()).count();
    if failures == sweep.entries.len() {
        return Err(Failure::numerical("every sweep entry failed"));
    }
    if failures > 0 {
        eprintln!("warning: {failures} sweep entries failed (see table)");
    }
    Ok(())
}

fn cmd_calibrate(
    case: CaseArgs,
    epsilon: Option<f64>,
    percent: Option<f64>,
    lambda: Option<f64>,
    diameter: Option<f64>,
    neurons: Option<u32>,
    hidden_layers: Option<u32>,
) -> Result<(), Failure> {
    let net = load_case(&case)?;
    let adm = build_admittance(&net).map_err(|e| Failure::validation(e.to_string()))?;
    let sens = compute_sensitivity(&adm);
    let (mut k_max, mut k_argmax) = (f64::MIN, 0usize);
    let mut k_sum = 0.0;
    for (i, &k) in sens.k.iter().enumerate() {
        k_sum += k;
        if k > k_max {
            k_max = k;
            k_argmax = i;
        }
    }
    let br = &net.branches[k_argmax];
    println!(
        "case {}: {} buses, {} generators, {} lines",
        net.name,
        net.n_buses(),
        net.n_generators(),
        net.branches.len()
    );
    println!(
        "sensitivity matrix: {}x{}; max |entry| {:.4}",
        sens.m.nrows(),
        sens.m.ncols(),
        sens.m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    );
    println!(
        "error amplification k: max {:.4} on line {} ({}-{}), mean {:.4}",
        k_max,
        k_argmax,
        net.buses[br.from].id,
        net.buses[br.to].id,
        k_sum / sens.k.len() as f64
    );

    if let (Some(lambda), Some(diameter), Some(neurons), Some(hidden_layers)) =
        (lambda, diameter, neurons, hidden_layers)
    {
        let bound = worst_case_error_bound(lambda, diameter, neurons, hidden_layers)
            .map_err(|e| Failure::validation(e.to_string()))?;
        println!(
            "worst-case prediction error bound: {bound:.6e} (lambda={lambda}, d={diameter}, \
             neurons={neurons}, hidden={hidden_layers})"
        );
    }

    if let Some(eps) = epsilon {
        let plan = plan_from_epsilon(&sens, net.n_generators(), eps, &net)
            .map_err(|e| Failure::validation(e.to_string()))?;
        println!("{}", serde_json::to_string_pretty(&plan).unwrap());
        apply_plan(&net, &plan).map_err(|e| Failure::validation(e.to_string()))?;
    }
    if let Some(c) = percent {
        let plan = plan_from_percent(c).map_err(|e| Failure::validation(e.to_string()))?;
        let limits = apply_plan(&net, &plan).map_err(|e| Failure::validation(e.to_string()))?;
        println!("{}", serde_json::to_string_pretty(&plan).unwrap());
        let slack = net.slack_generator();
        println!(
            "calibrated slack range: [{:.3}, {:.3}] MW",
            limits.gen_min_mw[slack], limits.gen_max_mw[slack]
        );
    }
    Ok(())
}
