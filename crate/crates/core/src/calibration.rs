//! PTDF sensitivities and preventive limit calibration.
//!
//! The sensitivity matrix M maps non-slack bus injections to per-line
//! flows. Its absolute row sums `k_i` bound how far a line flow can move
//! when every injection is off by at most epsilon, so reducing line `i`'s
//! capacity by `k_i * epsilon` during training-data generation guarantees
//! a predictor with per-generator error below epsilon cannot overload the
//! line at test time. The slack generator absorbs all prediction errors
//! through the balance, so its range shrinks by `(|G|-1) * epsilon`.

use crate::grid::{AdmittanceSystem, PowerNetwork};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("input {name} must be positive, got {value}")]
    NonPositiveInput { name: &'static str, value: f64 },
    #[error("calibration fraction must lie in [0, 1), got {0}")]
    InvalidFraction(f64),
    #[error(
        "line {line} ({from_id}-{to_id}): margin {margin_mw:.3} MW exceeds capacity {capacity_mw:.3} MW"
    )]
    MarginExceedsCapacity {
        line: usize,
        from_id: u32,
        to_id: u32,
        capacity_mw: f64,
        margin_mw: f64,
    },
    #[error("calibrated slack range is empty: [{min_mw:.3}, {max_mw:.3}] MW")]
    EmptySlackRange { min_mw: f64, max_mw: f64 },
    #[error("plan carries {plan} line margins but the network has {network} branches")]
    LineCountMismatch { plan: usize, network: usize },
}

/// PTDF matrix and the per-line error-amplification factors.
#[derive(Debug, Clone)]
pub struct SensitivityMatrix {
    /// |E|×(N-1) matrix of line-flow sensitivities to non-slack bus
    /// injections (dimensionless; valid in per-unit or MW alike).
    pub m: DMatrix<f64>,
    /// Per-line absolute row sums of `m`.
    pub k: DVector<f64>,
}

/// Compute M by solving against the factorized reduced admittance
/// matrix column-wise; no explicit inverse is formed.
pub fn compute_sensitivity(adm: &AdmittanceSystem) -> SensitivityMatrix {
    // M = X~ * B~^-1 and B~ is symmetric, so B~ M' = X~'.
    let m = adm
        .solve_reduced_mat(&adm.x_incidence_reduced.transpose())
        .transpose();
    let k = DVector::from_fn(m.nrows(), |i, _| m.row(i).iter().map(|v| v.abs()).sum());
    SensitivityMatrix { m, k }
}

/// Worst-case approximation error of a ReLU network with `n_hidden`
/// hidden layers of at most `n_neurons` neurons fitting a Lipschitz
/// mapping over an input domain of diameter `diameter`:
/// `lambda * diameter / (4 * (2*n_neurons)^n_hidden)`.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN inputs must fail
pub fn worst_case_error_bound(
    lambda_lip: f64,
    diameter: f64,
    n_neurons: u32,
    n_hidden: u32,
) -> Result<f64, CalibrationError> {
    for (name, value) in [
        ("lambda_lip", lambda_lip),
        ("diameter", diameter),
        ("n_neurons", n_neurons as f64),
        ("n_hidden", n_hidden as f64),
    ] {
        if !(value > 0.0) {
            return Err(CalibrationError::NonPositiveInput { name, value });
        }
    }
    Ok(lambda_lip * diameter / (4.0 * (2.0 * n_neurons as f64).powi(n_hidden as i32)))
}

/// How the margins are expressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum CalibrationMode {
    /// Per-line reductions in MW plus a slack-generator margin in MW.
    Absolute {
        line_margin_mw: Vec<f64>,
        slack_margin_mw: f64,
    },
    /// A single fraction c: every line capacity becomes cap*(1-c) and
    /// each slack range endpoint moves inward by c*(max-min).
    Percent { fraction: f64 },
}

/// A preventive calibration of line and slack-generator limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    #[serde(flatten)]
    pub mode: CalibrationMode,
    /// Where the margins came from (epsilon or percent value).
    pub provenance: String,
}

impl CalibrationPlan {
    /// The identity plan (no calibration).
    pub fn none() -> Self {
        CalibrationPlan {
            mode: CalibrationMode::Percent { fraction: 0.0 },
            provenance: "uncalibrated".into(),
        }
    }

    pub fn is_identity(&self) -> bool {
        match &self.mode {
            CalibrationMode::Percent { fraction } => *fraction == 0.0,
            CalibrationMode::Absolute {
                line_margin_mw,
                slack_margin_mw,
            } => *slack_margin_mw == 0.0 && line_margin_mw.iter().all(|&v| v == 0.0),
        }
    }
}

/// Absolute-mode plan from a per-generator error bound epsilon (MW):
/// line margins `k_i * epsilon`, slack margin `(n_gens - 1) * epsilon`.
/// Validated against the network so oversized margins fail eagerly.
pub fn plan_from_epsilon(
    sens: &SensitivityMatrix,
    n_gens: usize,
    epsilon_mw: f64,
    net: &PowerNetwork,
) -> Result<CalibrationPlan, CalibrationError> {
    if epsilon_mw < 0.0 {
        return Err(CalibrationError::NonPositiveInput {
            name: "epsilon_mw",
            value: epsilon_mw,
        });
    }
    let plan = CalibrationPlan {
        mode: CalibrationMode::Absolute {
            line_margin_mw: sens.k.iter().map(|&k| k * epsilon_mw).collect(),
            slack_margin_mw: (n_gens.saturating_sub(1)) as f64 * epsilon_mw,
        },
        provenance: format!("epsilon = {epsilon_mw} MW"),
    };
    apply_plan(net, &plan)?;
    Ok(plan)
}

/// Percent-mode plan with fraction `c` in [0, 1).
pub fn plan_from_percent(c: f64) -> Result<CalibrationPlan, CalibrationError> {
    if !(0.0..1.0).contains(&c) {
        return Err(CalibrationError::InvalidFraction(c));
    }
    Ok(CalibrationPlan {
        mode: CalibrationMode::Percent { fraction: c },
        provenance: format!("percent: c = {c}"),
    })
}

/// The limits a [`crate::solver::DcOpfProblem`] actually enforces:
/// either the network defaults or a calibrated tightening of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveLimits {
    pub line_cap_mw: Vec<f64>,
    pub gen_min_mw: Vec<f64>,
    pub gen_max_mw: Vec<f64>,
}

impl EffectiveLimits {
    /// The network's own limits, unmodified.
    pub fn original(net: &PowerNetwork) -> Self {
        EffectiveLimits {
            line_cap_mw: net.branches.iter().map(|b| b.capacity_mw).collect(),
            gen_min_mw: net.generators.iter().map(|g| g.p_min_mw).collect(),
            gen_max_mw: net.generators.iter().map(|g| g.p_max_mw).collect(),
        }
    }
}

/// Tighten the network limits according to the plan. Non-slack
/// generator bounds are never touched.
pub fn apply_plan(
    net: &PowerNetwork,
    plan: &CalibrationPlan,
) -> Result<EffectiveLimits, CalibrationError> {
    let mut limits = EffectiveLimits::original(net);
    let slack_gen = net.slack_generator();
    match &plan.mode {
        CalibrationMode::Absolute {
            line_margin_mw,
            slack_margin_mw,
        } => {
            if line_margin_mw.len() != net.branches.len() {
                return Err(CalibrationError::LineCountMismatch {
                    plan: line_margin_mw.len(),
                    network: net.branches.len(),
                });
            }
            for (i, (&eta, cap)) in line_margin_mw
                .iter()
                .zip(limits.line_cap_mw.iter_mut())
                .enumerate()
            {
                if eta >= *cap {
                    let br = &net.branches[i];
                    return Err(CalibrationError::MarginExceedsCapacity {
                        line: i,
                        from_id: net.buses[br.from].id,
                        to_id: net.buses[br.to].id,
                        capacity_mw: *cap,
                        margin_mw: eta,
                    });
                }
                *cap -= eta;
            }
            limits.gen_min_mw[slack_gen] += slack_margin_mw;
            limits.gen_max_mw[slack_gen] -= slack_margin_mw;
        }
        CalibrationMode::Percent { fraction } => {
            if !(0.0..1.0).contains(fraction) {
                return Err(CalibrationError::InvalidFraction(*fraction));
            }
            for cap in limits.line_cap_mw.iter_mut() {
                *cap *= 1.0 - fraction;
            }
            let width = limits.gen_max_mw[slack_gen] - limits.gen_min_mw[slack_gen];
            limits.gen_min_mw[slack_gen] += fraction * width;
            limits.gen_max_mw[slack_gen] -= fraction * width;
        }
    }
    if limits.gen_min_mw[slack_gen] > limits.gen_max_mw[slack_gen] {
        return Err(CalibrationError::EmptySlackRange {
            min_mw: limits.gen_min_mw[slack_gen],
            max_mw: limits.gen_max_mw[slack_gen],
        });
    }
    Ok(limits)
}
