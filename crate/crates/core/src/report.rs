//! Evaluation harness: run a predictor over a test set, re-solve each
//! instance cold with the interior-point solver as the baseline, and
//! aggregate feasibility, cost and runtime metrics into CSV and
//! Markdown reports.
//!
//! Conventions: the feasibility rate counts direct (pre-projection)
//! predictions; the optimality loss is the mean of per-instance
//! relative cost excess; the speedup is the mean of per-instance
//! runtime ratios, not the ratio of mean runtimes. Instances run
//! serially so the timing columns are free of scheduler contention.

use crate::calibration::{plan_from_percent, CalibrationPlan, EffectiveLimits};
use crate::dataset::{generate_dataset, TrainingDataset};
use crate::grid::{AdmittanceSystem, PowerNetwork};
use crate::mlp::{train, MlpModel, TrainConfig};
use crate::pipeline::{predict, realize_prediction, Fallback};
use crate::solver::{solve_dcopf, DcOpfProblem, SolveStatus, SolverOptions};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("test set is bound to network {dataset}, evaluating against {network}")]
    NetworkMismatch { dataset: String, network: String },
    #[error("baseline solve failed on instance {index}: {status:?}")]
    BaselineFailed { index: usize, status: SolveStatus },
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error(transparent)]
    Solve(#[from] crate::solver::SolveError),
    #[error("csv parse error at line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// The prediction source under evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Model(&'a MlpModel),
    /// Test hook: replay the stored ground-truth scaling factors.
    Oracle,
}

/// One evaluated test instance. Times are in seconds; `time_dnn`
/// covers the full prediction path including projection when applied.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceRow {
    pub index: usize,
    pub feasible_direct: bool,
    pub projected: bool,
    pub cost_dnn: f64,
    pub cost_ref: f64,
    pub time_dnn: f64,
    pub time_solver: f64,
    pub ratio: f64,
}

/// Aggregate block, always recomputable from the per-instance rows.
#[derive(Debug, Clone, Serialize)]
pub struct Aggregates {
    pub n_instances: usize,
    /// Percent of instances feasible before any projection.
    pub feasibility_rate_pct: f64,
    pub avg_cost_dnn: f64,
    pub avg_cost_ref: f64,
    /// Mean of per-instance (cost_dnn - cost_ref) / cost_ref, percent.
    pub optimality_loss_pct: f64,
    pub avg_time_dnn_ms: f64,
    pub avg_time_solver_ms: f64,
    /// Mean of per-instance time_solver / time_dnn ratios.
    pub avg_speedup: f64,
}

impl Aggregates {
    pub fn from_rows(rows: &[InstanceRow]) -> Aggregates {
        let n = rows.len();
        let nf = n as f64;
        let feasible = rows.iter().filter(|r| r.feasible_direct).count();
        let mean = |f: &dyn Fn(&InstanceRow) -> f64| -> f64 {
            if n == 0 {
                0.0
            } else {
                rows.iter().map(f).sum::<f64>() / nf
            }
        };
        Aggregates {
            n_instances: n,
            feasibility_rate_pct: if n == 0 {
                0.0
            } else {
                100.0 * feasible as f64 / nf
            },
            avg_cost_dnn: mean(&|r| r.cost_dnn),
            avg_cost_ref: mean(&|r| r.cost_ref),
            optimality_loss_pct: mean(&|r| 100.0 * (r.cost_dnn - r.cost_ref) / r.cost_ref),
            avg_time_dnn_ms: mean(&|r| r.time_dnn * 1e3),
            avg_time_solver_ms: mean(&|r| r.time_solver * 1e3),
            avg_speedup: mean(&|r| r.ratio),
        }
    }
}

/// Everything that went into a run, echoed for reproducibility.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub case_name: String,
    pub network_id: String,
    pub calibration: CalibrationPlan,
    pub data_seed: u64,
    pub range: (f64, f64),
    pub n_instances: usize,
    pub fallback: Fallback,
    pub oracle: bool,
}

#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub per_instance: Vec<InstanceRow>,
    pub aggregates: Aggregates,
    pub config: ConfigEcho,
    /// One JSON line per instance with the full prediction record.
    pub prediction_log: Vec<String>,
}

/// Evaluate a predictor over a test dataset. The baseline re-solves
/// every instance cold under the original limits; its cost is the
/// optimality reference and its wall time the speedup denominator.
pub fn evaluate(
    net: &PowerNetwork,
    adm: &AdmittanceSystem,
    test: &TrainingDataset,
    predictor: Predictor,
    fallback: Fallback,
    opts: &SolverOptions,
) -> Result<EvaluationReport, ReportError> {
    let network_id = net.content_hash();
    if test.network_id != network_id {
        return Err(ReportError::NetworkMismatch {
            dataset: test.network_id.clone(),
            network: network_id,
        });
    }
    let original = EffectiveLimits::original(net);
    let mut rows = Vec::with_capacity(test.records.len());
    let mut prediction_log = Vec::with_capacity(test.records.len());
    for (index, rec) in test.records.iter().enumerate() {
        let load = &rec.sample.loads_mw;
        let pred = match predictor {
            Predictor::Model(model) => predict(model, net, adm, load, fallback)?,
            Predictor::Oracle => realize_prediction(net, adm, &rec.alpha, load, fallback, 0.0)?,
        };
        let prob = DcOpfProblem::new(net, adm, load.clone(), original.clone())?;
        let baseline = solve_dcopf(&prob, opts);
        if baseline.status != SolveStatus::Optimal {
            return Err(ReportError::BaselineFailed {
                index,
                status: baseline.status,
            });
        }
        let time_dnn = pred.timing.total().max(1e-9);
        prediction_log.push(pred.to_json_line());
        rows.push(InstanceRow {
            index,
            feasible_direct: pred.feasible_direct,
            projected: pred.projected,
            cost_dnn: pred.cost,
            cost_ref: baseline.cost,
            time_dnn,
            time_solver: baseline.solve_time,
            ratio: baseline.solve_time / time_dnn,
        });
    }
    let aggregates = Aggregates::from_rows(&rows);
    Ok(EvaluationReport {
        per_instance: rows,
        aggregates,
        prediction_log,
        config: ConfigEcho {
            case_name: net.name.clone(),
            network_id,
            calibration: test.calibration.clone(),
            data_seed: test.seed,
            range: test.range,
            n_instances: test.records.len(),
            fallback,
            oracle: matches!(predictor, Predictor::Oracle),
        },
    })
}

impl EvaluationReport {
    /// Per-instance rows as CSV. Floats use Rust's shortest
    /// round-trip formatting, so parsing the file back reproduces the
    /// exact values.
    pub fn instances_csv(&self) -> String {
        let mut out = String::from(
            "index,feasible_direct,projected,cost_dnn,cost_ref,time_dnn_s,time_solver_s,ratio\n",
        );
        for r in &self.per_instance {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.index,
                r.feasible_direct,
                r.projected,
                r.cost_dnn,
                r.cost_ref,
                r.time_dnn,
                r.time_solver,
                r.ratio
            ));
        }
        out
    }

    /// Aggregate block as a one-row CSV.
    pub fn summary_csv(&self) -> String {
        let a = &self.aggregates;
        format!(
            "n_instances,feasibility_rate_pct,avg_cost_dnn,avg_cost_ref,optimality_loss_pct,avg_time_dnn_ms,avg_time_solver_ms,avg_speedup\n{},{},{},{},{},{},{},{}\n",
            a.n_instances,
            a.feasibility_rate_pct,
            a.avg_cost_dnn,
            a.avg_cost_ref,
            a.optimality_loss_pct,
            a.avg_time_dnn_ms,
            a.avg_time_solver_ms,
            a.avg_speedup
        )
    }

    /// Markdown table in the usual benchmark layout.
    pub fn markdown(&self) -> String {
        let a = &self.aggregates;
        let calib = match &self.config.calibration.mode {
            crate::calibration::CalibrationMode::Percent { fraction } => {
                format!("{:.1}%", fraction * 100.0)
            }
            crate::calibration::CalibrationMode::Absolute { .. } => "absolute".to_string(),
        };
        let mut out = String::new();
        out.push_str(&format!(
            "| Case | Calibration | Feasibility rate (%) | Avg cost model ($/h) | Avg cost ref ($/h) | Loss (%) | Avg time model (ms) | Avg time solver (ms) | Avg speedup |\n\
             |------|-------------|----------------------|----------------------|--------------------|----------|---------------------|----------------------|-------------|\n\
             | {} | {} | {:.2} | {:.1} | {:.1} | {:.2} | {:.3} | {:.3} | x{:.0} |\n",
            self.config.case_name,
            calib,
            a.feasibility_rate_pct,
            a.avg_cost_dnn,
            a.avg_cost_ref,
            a.optimality_loss_pct,
            a.avg_time_dnn_ms,
            a.avg_time_solver_ms,
            a.avg_speedup
        ));
        out
    }
}

/// Parse rows written by [`EvaluationReport::instances_csv`].
pub fn parse_instances_csv(text: &str) -> Result<Vec<InstanceRow>, ReportError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let err = |message: String| ReportError::Csv {
            line: i + 1,
            message,
        };
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(err(format!("expected 8 columns, got {}", parts.len())));
        }
        let parse_f = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{e}: '{s}'")));
        let parse_b = |s: &str| s.parse::<bool>().map_err(|e| err(format!("{e}: '{s}'")));
        rows.push(InstanceRow {
            index: parts[0]
                .parse()
                .map_err(|e| err(format!("{e}: '{}'", parts[0])))?,
            feasible_direct: parse_b(parts[1])?,
            projected: parse_b(parts[2])?,
            cost_dnn: parse_f(parts[3])?,
            cost_ref: parse_f(parts[4])?,
            time_dnn: parse_f(parts[5])?,
            time_solver: parse_f(parts[6])?,
            ratio: parse_f(parts[7])?,
        });
    }
    Ok(rows)
}

/// One calibration setting inside a sweep: either a finished report or
/// the error that stopped it.
#[derive(Debug)]
pub struct SweepEntry {
    pub calibration_fraction: f64,
    pub outcome: Result<EvaluationReport, String>,
}

#[derive(Debug)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
}

impl SweepResult {
    /// Comparison table over the sweep, one row per calibration value.
    pub fn markdown(&self) -> String {
        let mut out = String::from(
            "| Calibration | Feasibility rate (%) | Avg cost model ($/h) | Avg cost ref ($/h) | Loss (%) | Avg speedup |\n\
             |-------------|----------------------|----------------------|--------------------|----------|-------------|\n",
        );
        for e in &self.entries {
            match &e.outcome {
                Ok(report) => {
                    let a = &report.aggregates;
                    out.push_str(&format!(
                        "| {:.1}% | {:.2} | {:.1} | {:.1} | {:.2} | x{:.0} |\n",
                        e.calibration_fraction * 100.0,
                        a.feasibility_rate_pct,
                        a.avg_cost_dnn,
                        a.avg_cost_ref,
                        a.optimality_loss_pct,
                        a.avg_speedup
                    ));
                }
                Err(message) => {
                    out.push_str(&format!(
                        "| {:.1}% | failed: {} | | | | |\n",
                        e.calibration_fraction * 100.0,
                        message
                    ));
                }
            }
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "calibration_pct,feasibility_rate_pct,avg_cost_dnn,avg_cost_ref,optimality_loss_pct,avg_speedup,error\n",
        );
        for e in &self.entries {
            match &e.outcome {
                Ok(report) => {
                    let a = &report.aggregates;
                    out.push_str(&format!(
                        "{},{},{},{},{},{},\n",
                        e.calibration_fraction * 100.0,
                        a.feasibility_rate_pct,
                        a.avg_cost_dnn,
                        a.avg_cost_ref,
                        a.optimality_loss_pct,
                        a.avg_speedup
                    ));
                }
                Err(message) => {
                    out.push_str(&format!(
                        "{},,,,,,\"{}\"\n",
                        e.calibration_fraction * 100.0,
                        message.replace('"', "'")
                    ));
                }
            }
        }
        out
    }
}

/// Sweep driver: for each calibration fraction, generate datasets from
/// the shared seed, train a model and evaluate it on the (shared) test
/// split. Failures are recorded per entry and the sweep continues.
#[allow(clippy::too_many_arguments)]
pub fn run_sweep(
    net: &PowerNetwork,
    adm: &AdmittanceSystem,
    calibrations: &[f64],
    n_train: usize,
    n_test: usize,
    range: (f64, f64),
    data_seed: u64,
    train_config: &TrainConfig,
    fallback: Fallback,
) -> SweepResult {
    let mut entries = Vec::new();
    for &c in calibrations {
        let outcome = (|| -> Result<EvaluationReport, String> {
            let plan = plan_from_percent(c).map_err(|e| e.to_string())?;
            let (train_ds, test_ds, _) =
                generate_dataset(net, adm, &plan, n_train, n_test, range, data_seed)
                    .map_err(|e| e.to_string())?;
            let (model, _) = train(net, adm, &train_ds, train_config).map_err(|e| e.to_string())?;
            evaluate(
                net,
                adm,
                &test_ds,
                Predictor::Model(&model),
                fallback,
                &SolverOptions::default(),
            )
            .map_err(|e| e.to_string())
        })();
        entries.push(SweepEntry {
            calibration_fraction: c,
            outcome,
        });
    }
    SweepResult { entries }
}
