//! End-to-end prediction path: load features → scaling factors →
//! generation vector (slack by balance) → phase angles → feasibility
//! check against the original limits → optional l1-projection fallback.
//! Each stage is timed with a monotonic clock.

use crate::calibration::EffectiveLimits;
use crate::dataset::alpha_generators;
use crate::grid::{AdmittanceSystem, PowerNetwork};
use crate::mlp::{MlpError, MlpModel};
use crate::solver::{evaluate_cost, l1_project, DcOpfProblem, SolveStatus, FEASIBILITY_TOL};
use nalgebra::DVector;
use serde::Serialize;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Solve(#[from] crate::solver::SolveError),
    #[error("projection failed: original problem is {status:?}")]
    ProjectionFailed { status: SolveStatus },
}

/// What to do when the direct prediction violates a constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    None,
    L1Projection,
}

/// A violated constraint with its magnitude in normalized units
/// (excess of |normalized flow| over 1, or excess outside a generator
/// range as a fraction of the range width).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    Line { index: usize, magnitude: f64 },
    GenLower { index: usize, magnitude: f64 },
    GenUpper { index: usize, magnitude: f64 },
}

impl Violation {
    pub fn magnitude(&self) -> f64 {
        match self {
            Violation::Line { magnitude, .. }
            | Violation::GenLower { magnitude, .. }
            | Violation::GenUpper { magnitude, .. } => *magnitude,
        }
    }
}

/// Stage timings in seconds.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StageTimings {
    pub dnn: f64,
    pub reconstruction: f64,
    pub check: f64,
    pub projection: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.dnn + self.reconstruction + self.check + self.projection
    }
}

/// Outcome of one prediction.
#[derive(Debug, Clone)]
pub struct PredictionResult {
    /// Final generation vector including the slack generator (MW).
    pub p_g_mw: DVector<f64>,
    /// Angles for the final dispatch, zero at the slack (rad).
    pub theta: DVector<f64>,
    /// Whether the direct (pre-projection) prediction satisfied every
    /// original constraint.
    pub feasible_direct: bool,
    pub violations: Vec<Violation>,
    /// True when the l1-projection fallback produced the final dispatch.
    pub projected: bool,
    /// Cost of the final dispatch ($/h).
    pub cost: f64,
    pub timing: StageTimings,
}

impl PredictionResult {
    /// One-line JSON record for streaming logs.
    pub fn to_json_line(&self) -> String {
        let value = serde_json::json!({
            "p_g_mw": self.p_g_mw.as_slice(),
            "theta": self.theta.as_slice(),
            "feasible_direct": self.feasible_direct,
            "projected": self.projected,
            "cost": self.cost,
            "violations": self.violations,
            "timing": self.timing,
        });
        value.to_string()
    }
}

/// Expand predicted scaling factors to a full generation vector: the
/// predicted generators via their ranges, degenerate generators pinned
/// at their fixed output, and the slack generator absorbing the
/// balance residual. Total generation equals total load by
/// construction.
pub fn decode_generation(
    net: &PowerNetwork,
    alpha_hat: &DVector<f64>,
    load_mw: &DVector<f64>,
) -> Result<DVector<f64>, MlpError> {
    let gens = alpha_generators(net);
    if alpha_hat.len() != gens.len() {
        return Err(MlpError::DimensionMismatch {
            what: "scaling factors",
            expected: gens.len(),
            got: alpha_hat.len(),
        });
    }
    let slack_gen = net.slack_generator();
    let mut p = DVector::zeros(net.n_generators());
    for (gi, g) in net.generators.iter().enumerate() {
        if gi != slack_gen {
            p[gi] = g.p_min_mw; // degenerate generators stay pinned
        }
    }
    for (j, &gi) in gens.iter().enumerate() {
        let g = &net.generators[gi];
        p[gi] = g.p_min_mw + alpha_hat[j] * (g.p_max_mw - g.p_min_mw);
    }
    let total_load: f64 = load_mw.iter().sum();
    let non_slack: f64 = (0..net.n_generators())
        .filter(|&i| i != slack_gen)
        .map(|i| p[i])
        .sum();
    p[slack_gen] = total_load - non_slack;
    Ok(p)
}

/// Solve for the phase angles of a dispatch through the cached
/// factorization; the slack entry is exactly zero.
pub fn reconstruct_angles(
    net: &PowerNetwork,
    adm: &AdmittanceSystem,
    p_g_mw: &DVector<f64>,
    load_mw: &DVector<f64>,
) -> DVector<f64> {
    let base = net.base_mva;
    let mut injection = DVector::zeros(net.n_buses());
    for (g, &p) in net.generators.iter().zip(p_g_mw.iter()) {
        injection[g.bus] += p / base;
    }
    injection -= load_mw.map(|l| l / base);
    let reduced = adm.reduce_full(&injection);
    adm.embed_reduced(&adm.solve_reduced(&reduced))
}

/// Check every line (both directions, via normalized flows) and every
/// generator bound including the slack, against the given limits.
pub fn check_feasibility(
    net: &PowerNetwork,
    adm: &AdmittanceSystem,
    p_g_mw: &DVector<f64>,
    theta: &DVector<f64>,
    limits: &EffectiveLimits,
) -> (bool, Vec<Violation>) {
    let base = net.base_mva;
    let mut violations = Vec::new();
    let flows = adm.flows_from_angles(theta);
    for k in 0..net.branches.len() {
        let cap_pu = limits.line_cap_mw[k] / base;
        let normalized = flows[k].abs() / cap_pu;
        if normalized > 1.0 + FEASIBILITY_TOL {
            violations.push(Violation::Line {
                index: k,
                magnitude: normalized - 1.0,
            });
        }
    }
    for gi in 0..net.n_generators() {
        let lo = limits.gen_min_mw[gi];
        let hi = limits.gen_max_mw[gi];
        let width = (hi - lo).abs().max(1.0);
        let p = p_g_mw[gi];
        if p < lo - FEASIBILITY_TOL * width {
            violations.push(Violation::GenLower {
                index: gi,
                magnitude: (lo - p) / width,
            });
        } else if p > hi + FEASIBILITY_TOL * width {
            violations.push(Violation::GenUpper {
                index: gi,
                magnitude: (p - hi) / width,
            });
        }
    }
    (violations.is_empty(), violations)
}

/// Full pipeline: forward pass, decode, angle reconstruction, original
/// -limit feasibility check and the optional projection fallback.
/// `load_mw` is the full per-bus load vector.
pub fn predict(
    model: &MlpModel,
    net: &PowerNetwork,
    adm: &AdmittanceSystem,
    load_mw: &DVector<f64>,
    fallback: Fallback,
) -> Result<PredictionResult, PipelineError> {
    let network_hash = net.content_hash();
    if model.network_hash != network_hash {
        return Err(MlpError::NetworkMismatch {
            model_hash: model.network_hash.clone(),
            network_hash,
        }
        .into());
    }
    let t0 = Instant::now();
    let features = DVector::from_iterator(
        net.load_buses().len(),
        net.load_buses().iter().map(|&b| load_mw[b]),
    );
    let alpha_hat = model.forward_raw(&features)?;
    let dnn_seconds = t0.elapsed().as_secs_f64();
    realize_prediction(net, adm, &alpha_hat, load_mw, fallback, dnn_seconds)
}

/// The pipeline downstream of the forward pass: decode, reconstruct,
/// check and optionally project. Used both by [`predict`] and by
/// oracle-style evaluation that injects ground-truth scaling factors.
pub fn realize_prediction(
    net: &PowerNetwork,
    adm: &AdmittanceSystem,
    alpha_hat: &DVector<f64>,
    load_mw: &DVector<f64>,
    fallback: Fallback,
    dnn_seconds: f64,
) -> Result<PredictionResult, PipelineError> {
    let mut timing = StageTimings {
        dnn: dnn_seconds,
        ..StageTimings::default()
    };
    let t0 = Instant::now();
    let p_hat = decode_generation(net, alpha_hat, load_mw)?;
    let theta = reconstruct_angles(net, adm, &p_hat, load_mw);
    timing.reconstruction = t0.elapsed().as_secs_f64();

    let original = EffectiveLimits::original(net);
    let t2 = Instant::now();
    let (feasible_direct, violations) = check_feasibility(net, adm, &p_hat, &theta, &original);
    timing.check = t2.elapsed().as_secs_f64();

    if feasible_direct || fallback == Fallback::None {
        let cost = evaluate_cost(net, &p_hat).map_err(PipelineError::Solve)?;
        return Ok(PredictionResult {
            p_g_mw: p_hat,
            theta,
            feasible_direct,
            violations,
            projected: false,
            cost,
            timing,
        });
    }

    let t3 = Instant::now();
    let prob = DcOpfProblem::new(net, adm, load_mw.clone(), original)?;
    let projected = l1_project(&prob, &p_hat)?;
    timing.projection = t3.elapsed().as_secs_f64();
    if projected.status != SolveStatus::Optimal {
        return Err(PipelineError::ProjectionFailed {
            status: projected.status,
        });
    }
    Ok(PredictionResult {
        cost: projected.cost,
        p_g_mw: projected.p_g_mw,
        theta: projected.theta,
        feasible_direct,
        violations,
        projected: true,
        timing,
    })
}
