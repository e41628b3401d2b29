//! Reference solvers for the DC-OPF quadratic program and the
//! l1-projection LP used to restore feasibility of predicted dispatches.
//!
//! Both are driven by the same interior-point core in [`ipm`]. The QP
//! keeps the power-flow equality as an explicit constraint over the
//! variables (generations, reduced angles); line limits are enforced in
//! both flow directions.

pub mod ipm;

use crate::calibration::EffectiveLimits;
use crate::grid::{AdmittanceSystem, PowerNetwork};
use ipm::{solve_qp, QpOptions, QpProblem, QpStatus};
use nalgebra::{DMatrix, DVector};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("dimension mismatch: expected {expected} {what}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Tolerances and iteration cap for the interior-point solver.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Max-norm bound on the KKT residuals at termination (per-unit).
    pub tol_kkt: f64,
    /// Bound on the average complementarity at termination.
    pub tol_gap: f64,
    pub max_iter: usize,
    pub verbosity: u8,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-8,
            tol_gap: 1e-8,
            max_iter: 100,
            verbosity: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

/// One DC-OPF instance: a network, a load vector and the limits in
/// force (original or calibrated).
#[derive(Debug, Clone)]
pub struct DcOpfProblem<'a> {
    pub net: &'a PowerNetwork,
    pub adm: &'a AdmittanceSystem,
    /// Per-bus active load (MW).
    pub load_mw: DVector<f64>,
    pub limits: EffectiveLimits,
}

impl<'a> DcOpfProblem<'a> {
    pub fn new(
        net: &'a PowerNetwork,
        adm: &'a AdmittanceSystem,
        load_mw: DVector<f64>,
        limits: EffectiveLimits,
    ) -> Result<Self, SolveError> {
        if load_mw.len() != net.n_buses() {
            return Err(SolveError::DimensionMismatch {
                what: "bus loads",
                expected: net.n_buses(),
                got: load_mw.len(),
            });
        }
        Ok(DcOpfProblem {
            net,
            adm,
            load_mw,
            limits,
        })
    }

    /// Cheap pre-solve screen: total load beyond total generation
    /// capacity cannot be balanced. The solve is still attempted.
    pub fn possibly_infeasible(&self) -> bool {
        let total_load: f64 = self.load_mw.iter().sum();
        let total_cap: f64 = self.limits.gen_max_mw.iter().sum();
        total_load > total_cap
    }
}

/// Solution of a DC-OPF (or projection) solve, in physical units.
#[derive(Debug, Clone)]
pub struct DispatchSolution {
    /// Generation per generator, file order (MW).
    pub p_g_mw: DVector<f64>,
    /// Phase angle per bus (rad); exactly zero at the slack.
    pub theta: DVector<f64>,
    /// Objective value ($/h).
    pub cost: f64,
    pub status: SolveStatus,
    /// Wall-clock seconds spent in the solver.
    pub solve_time: f64,
    /// Final average complementarity.
    pub duality_gap: f64,
    pub iterations: usize,
    /// Max-norm KKT residuals at termination (per-unit).
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// Quadratic production cost of a dispatch ($/h).
pub fn evaluate_cost(net: &PowerNetwork, p_g_mw: &DVector<f64>) -> Result<f64, SolveError> {
    if p_g_mw.len() != net.n_generators() {
        return Err(SolveError::DimensionMismatch {
            what: "generators",
            expected: net.n_generators(),
            got: p_g_mw.len(),
        });
    }
    Ok(net
        .generators
        .iter()
        .zip(p_g_mw.iter())
        .map(|(g, &p)| g.cost.quadratic * p * p + g.cost.linear * p + g.cost.constant)
        .sum())
}

/// Solve the DC-OPF quadratic program with the interior-point method.
pub fn solve_dcopf(prob: &DcOpfProblem, opts: &SolverOptions) -> DispatchSolution {
    let started = Instant::now();
    let qp = assemble_qp(prob, None);
    let sol = solve_qp(&qp, &qp_options(opts));
    let ng = prob.net.n_generators();
    let base = prob.net.base_mva;
    let p_g_mw = DVector::from_fn(ng, |i, _| sol.x[i] * base);
    let theta_red = sol.x.rows(ng, prob.net.n_buses() - 1).into_owned();
    let theta = prob.adm.embed_reduced(&theta_red);
    let cost = evaluate_cost(prob.net, &p_g_mw).expect("dimensions fixed by construction");
    DispatchSolution {
        p_g_mw,
        theta,
        cost,
        status: map_status(sol.status),
        solve_time: started.elapsed().as_secs_f64(),
        duality_gap: sol.gap,
        iterations: sol.iterations,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
    }
}

/// Project a predicted generation vector onto the feasible set of the
/// problem, minimizing the l1 distance over generations. A feasible
/// input is returned unchanged.
pub fn l1_project(
    prob: &DcOpfProblem,
    p_hat_mw: &DVector<f64>,
) -> Result<DispatchSolution, SolveError> {
    let ng = prob.net.n_generators();
    if p_hat_mw.len() != ng {
        return Err(SolveError::DimensionMismatch {
            what: "generators",
            expected: ng,
            got: p_hat_mw.len(),
        });
    }
    let started = Instant::now();
    let base = prob.net.base_mva;
    let n = prob.net.n_buses();

    // Already feasible: the projection is the identity.
    if let Some(theta) = feasible_angles(prob, p_hat_mw) {
        let cost = evaluate_cost(prob.net, p_hat_mw)?;
        return Ok(DispatchSolution {
            p_g_mw: p_hat_mw.clone(),
            theta,
            cost,
            status: SolveStatus::Optimal,
            solve_time: started.elapsed().as_secs_f64(),
            duality_gap: 0.0,
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
        });
    }

    // LP over (p, theta~, u, v) with p - u + v = p_hat and objective
    // sum(u + v); the split variables carry the positive and negative
    // parts of the move away from p_hat.
    let qp_base = assemble_qp(prob, None);
    let nx0 = ng + (n - 1);
    let nx = nx0 + 2 * ng;
    let ne0 = qp_base.a_eq.nrows();
    let m0 = qp_base.g_in.nrows();

    // Tiny quadratic regularization keeps the KKT system nonsingular.
    let mut q = DMatrix::zeros(nx, nx);
    for i in 0..nx {
        q[(i, i)] = 1e-10;
    }
    let mut c = DVector::zeros(nx);
    for i in nx0..nx {
        c[i] = 1.0;
    }

    let mut a_eq = DMatrix::zeros(ne0 + ng, nx);
    a_eq.view_mut((0, 0), (ne0, nx0)).copy_from(&qp_base.a_eq);
    let mut b_eq = DVector::zeros(ne0 + ng);
    b_eq.rows_mut(0, ne0).copy_from(&qp_base.b_eq);
    for g in 0..ng {
        a_eq[(ne0 + g, g)] = 1.0;
        a_eq[(ne0 + g, nx0 + g)] = -1.0;
        a_eq[(ne0 + g, nx0 + ng + g)] = 1.0;
        b_eq[ne0 + g] = p_hat_mw[g] / base;
    }

    let mut g_in = DMatrix::zeros(m0 + 2 * ng, nx);
    g_in.view_mut((0, 0), (m0, nx0)).copy_from(&qp_base.g_in);
    let mut h_in = DVector::zeros(m0 + 2 * ng);
    h_in.rows_mut(0, m0).copy_from(&qp_base.h_in);
    for g in 0..2 * ng {
        g_in[(m0 + g, nx0 + g)] = -1.0; // u >= 0, v >= 0
    }

    let mut x0 = DVector::zeros(nx);
    x0.rows_mut(0, nx0)
        .copy_from(qp_base.x0.as_ref().expect("assemble_qp sets a start"));

    let lp = QpProblem {
        q,
        c,
        a_eq,
        b_eq,
        g_in,
        h_in,
        x0: Some(x0),
    };
    let sol = solve_qp(&lp, &qp_options(&SolverOptions::default()));
    let p_g_mw = DVector::from_fn(ng, |i, _| sol.x[i] * base);
    let theta_red = sol.x.rows(ng, n - 1).into_owned();
    let theta = prob.adm.embed_reduced(&theta_red);
    let cost = evaluate_cost(prob.net, &p_g_mw)?;
    Ok(DispatchSolution {
        p_g_mw,
        theta,
        cost,
        status: map_status(sol.status),
        solve_time: started.elapsed().as_secs_f64(),
        duality_gap: sol.gap,
        iterations: sol.iterations,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
    })
}

/// Feasibility tolerance shared by the projection pre-check and the
/// pipeline's constraint check: normalized flows and relative bound
/// violations up to 1e-6 are accepted.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// If `p_hat` satisfies balance, generator bounds and line limits of
/// `prob`, return the reconstructed angles; `None` otherwise.
fn feasible_angles(prob: &DcOpfProblem, p_hat_mw: &DVector<f64>) -> Option<DVector<f64>> {
    let net = prob.net;
    let base = net.base_mva;
    let total_load: f64 = prob.load_mw.iter().sum();
    let total_gen: f64 = p_hat_mw.iter().sum();
    if (total_gen - total_load).abs() / base > FEASIBILITY_TOL {
        return None;
    }
    for gi in 0..net.n_generators() {
        let p = p_hat_mw[gi];
        let lo = prob.limits.gen_min_mw[gi];
        let hi = prob.limits.gen_max_mw[gi];
        let scale = (hi - lo).abs().max(1.0);
        if p < lo - FEASIBILITY_TOL * scale || p > hi + FEASIBILITY_TOL * scale {
            return None;
        }
    }
    // Angles from non-slack injections.
    let mut injection = DVector::zeros(net.n_buses());
    for (g, &p) in net.generators.iter().zip(p_hat_mw.iter()) {
        injection[g.bus] += p / base;
    }
    injection -= prob.load_mw.map(|l| l / base);
    let reduced = prob.adm.reduce_full(&injection);
    let theta = prob.adm.embed_reduced(&prob.adm.solve_reduced(&reduced));
    let flows = prob.adm.flows_from_angles(&theta);
    for (k, &f) in flows.iter().enumerate() {
        let cap = prob.limits.line_cap_mw[k] / base;
        if f.abs() > cap * (1.0 + FEASIBILITY_TOL) {
            return None;
        }
    }
    Some(theta)
}

/// Build the QP for a DC-OPF instance in per-unit. Variables are
/// `[p_g (ng), theta~ (N-1)]`; the balance stays an equality.
fn assemble_qp(prob: &DcOpfProblem, x0_override: Option<DVector<f64>>) -> QpProblem {
    let net = prob.net;
    let adm = prob.adm;
    let base = net.base_mva;
    let n = net.n_buses();
    let ng = net.n_generators();
    let ne_br = net.branches.len();
    let n_red = n - 1;
    let nx = ng + n_red;

    // Cost in per-unit variables: lambda1*(base*p)^2 + lambda2*(base*p).
    let mut q = DMatrix::zeros(nx, nx);
    let mut c = DVector::zeros(nx);
    for (i, g) in net.generators.iter().enumerate() {
        q[(i, i)] = 2.0 * g.cost.quadratic * base * base;
        c[i] = g.cost.linear * base;
    }

    // Balance rows: B_ns * theta~ - E p = -P_D (per-unit).
    let mut a_eq = DMatrix::zeros(n, nx);
    for (gi, g) in net.generators.iter().enumerate() {
        a_eq[(g.bus, gi)] = -1.0;
    }
    for (r, &bus_j) in adm.non_slack_buses().iter().enumerate() {
        for bus_i in 0..n {
            let v = adm.b_full[(bus_i, bus_j)];
            if v != 0.0 {
                a_eq[(bus_i, ng + r)] = v;
            }
        }
    }
    let b_eq = DVector::from_fn(n, |i, _| -prob.load_mw[i] / base);

    // Box bounds on generation plus two-sided line limits.
    let m = 2 * ng + 2 * ne_br;
    let mut g_in = DMatrix::zeros(m, nx);
    let mut h_in = DVector::zeros(m);
    for i in 0..ng {
        g_in[(i, i)] = 1.0;
        h_in[i] = prob.limits.gen_max_mw[i] / base;
        g_in[(ng + i, i)] = -1.0;
        h_in[ng + i] = -prob.limits.gen_min_mw[i] / base;
    }
    for k in 0..ne_br {
        let cap = prob.limits.line_cap_mw[k] / base;
        for (r, _) in adm.non_slack_buses().iter().enumerate() {
            let v = adm.x_incidence_reduced[(k, r)];
            if v != 0.0 {
                g_in[(2 * ng + k, ng + r)] = v;
                g_in[(2 * ng + ne_br + k, ng + r)] = -v;
            }
        }
        h_in[2 * ng + k] = cap;
        h_in[2 * ng + ne_br + k] = cap;
    }

    // Start at mid-range generation with flat angles.
    let x0 = x0_override.unwrap_or_else(|| {
        let mut x = DVector::zeros(nx);
        for i in 0..ng {
            x[i] = 0.5 * (prob.limits.gen_min_mw[i] + prob.limits.gen_max_mw[i]) / base;
        }
        x
    });

    QpProblem {
        q,
        c,
        a_eq,
        b_eq,
        g_in,
        h_in,
        x0: Some(x0),
    }
}

fn qp_options(opts: &SolverOptions) -> QpOptions {
    QpOptions {
        tol_kkt: opts.tol_kkt,
        tol_gap: opts.tol_gap,
        max_iter: opts.max_iter,
        slack_margin: 1.0,
        verbosity: opts.verbosity,
    }
}

fn map_status(status: QpStatus) -> SolveStatus {
    match status {
        QpStatus::Optimal => SolveStatus::Optimal,
        QpStatus::Infeasible => SolveStatus::Infeasible,
        QpStatus::MaxIterations => SolveStatus::MaxIterations,
    }
}
