//! Dense primal-dual interior-point method with Mehrotra
//! predictor-corrector steps for convex quadratic programs
//!
//! ```text
//!     minimize    1/2 x' Q x + c' x
//!     subject to  A x  = b
//!                 G x <= h
//! ```
//!
//! The KKT system is solved as the symmetric indefinite augmented form
//! `[[Q + G' W G, A'], [A, 0]]` with one LU factorization per iteration
//! shared between the predictor and corrector solves. Cases up to a few
//! hundred buses stay dense-tractable, so no sparsity is exploited.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub g_in: DMatrix<f64>,
    pub h_in: DVector<f64>,
    /// Starting point; zeros when absent.
    pub x0: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct QpOptions {
    pub tol_kkt: f64,
    pub tol_gap: f64,
    pub max_iter: usize,
    /// Initial slack floor (per-unit) applied at the starting point.
    pub slack_margin: f64,
    pub verbosity: u8,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-8,
            tol_gap: 1e-8,
            max_iter: 100,
            slack_margin: 1.0,
            verbosity: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Equality multipliers.
    pub y: DVector<f64>,
    /// Inequality multipliers (nonnegative).
    pub z: DVector<f64>,
    /// Inequality slacks (nonnegative).
    pub s: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Final average complementarity s'z / m.
    pub gap: f64,
    /// Max-norm of equality residual and positive inequality violation.
    pub primal_residual: f64,
    /// Max-norm of the stationarity residual, scaled by max(1, |c|_inf).
    pub dual_residual: f64,
}

/// Search directions (dx, dy, ds, dz) for one Newton solve.
type StepDirections = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);

/// Number of consecutive non-improving iterations with a primal
/// residual above this level before declaring the problem infeasible.
const STALL_LIMIT: usize = 10;
const STALL_RESIDUAL: f64 = 1e-6;
const STEP_FRACTION: f64 = 0.995;

pub fn solve_qp(prob: &QpProblem, opts: &QpOptions) -> QpSolution {
    let nx = prob.q.nrows();
    let ne = prob.a_eq.nrows();
    let m = prob.g_in.nrows();
    debug_assert_eq!(prob.q.ncols(), nx);
    debug_assert_eq!(prob.c.len(), nx);
    debug_assert_eq!(
        prob.a_eq.ncols(),
        if ne > 0 { nx } else { prob.a_eq.ncols() }
    );
    debug_assert_eq!(
        prob.g_in.ncols(),
        if m > 0 { nx } else { prob.g_in.ncols() }
    );

    let mut x = prob.x0.clone().unwrap_or_else(|| DVector::zeros(nx));
    let mut y = DVector::zeros(ne);

    if m == 0 {
        return solve_equality_qp(prob, opts, x);
    }

    // Slacks from constraint evaluation, floored at the margin.
    let gx = &prob.g_in * &x;
    let mut s = DVector::from_fn(m, |i, _| (prob.h_in[i] - gx[i]).max(opts.slack_margin));
    let mut z = DVector::from_element(m, 1.0);

    let c_scale = 1.0_f64.max(prob.c.amax());
    let mut best_primal = f64::INFINITY;
    let mut stall = 0usize;
    let mut status = QpStatus::MaxIterations;
    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    let mut primal_residual = f64::INFINITY;
    let mut dual_residual = f64::INFINITY;

    let a_t = prob.a_eq.transpose();
    let g_t = prob.g_in.transpose();

    for iter in 0..opts.max_iter {
        iterations = iter + 1;

        let r_d = &prob.q * &x + &prob.c + &a_t * &y + &g_t * &z;
        let r_p = &prob.a_eq * &x - &prob.b_eq;
        let gx = &prob.g_in * &x;
        let r_g = &gx + &s - &prob.h_in;
        let mu = s.dot(&z) / m as f64;

        let viol = (0..m).fold(0.0f64, |acc, i| acc.max(gx[i] - prob.h_in[i]));
        primal_residual = viol.max(if ne > 0 { r_p.amax() } else { 0.0 });
        dual_residual = r_d.amax() / c_scale;
        gap = mu;

        if opts.verbosity > 1 {
            eprintln!(
                "  ipm iter {iter:3}  mu {mu:9.2e}  primal {primal_residual:9.2e}  dual {dual_residual:9.2e}"
            );
        }

        if primal_residual <= opts.tol_kkt && dual_residual <= opts.tol_kkt && mu <= opts.tol_gap {
            status = QpStatus::Optimal;
            break;
        }

        // Infeasible problems show up as a primal residual that stops
        // improving while the barrier keeps shrinking.
        if primal_residual > STALL_RESIDUAL && primal_residual > 0.99 * best_primal {
            stall += 1;
            if stall >= STALL_LIMIT {
                status = QpStatus::Infeasible;
                break;
            }
        } else {
            stall = 0;
        }
        best_primal = best_primal.min(primal_residual);

        // Augmented system [[Q + G'WG, A'], [A, 0]] with W = diag(z/s).
        let w = DVector::from_fn(m, |i, _| z[i] / s[i]);
        let mut gw = prob.g_in.clone();
        for i in 0..m {
            let wi = w[i];
            gw.row_mut(i).apply(|v| *v *= wi);
        }
        let h_mat = &prob.q + &g_t * &gw;
        let dim = nx + ne;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (nx, nx)).copy_from(&h_mat);
        if ne > 0 {
            kkt.view_mut((0, nx), (nx, ne)).copy_from(&a_t);
            kkt.view_mut((nx, 0), (ne, nx)).copy_from(&prob.a_eq);
        }
        let lu = kkt.lu();

        // rhs for a complementarity target r_c: eliminate
        // dz = -r_c./s + w.*r_g + w.*(G dx), ds = -r_g - G dx.
        let solve_step = |r_c: &DVector<f64>| -> Option<StepDirections> {
            let mut top = -&r_d;
            let mut coeff = DVector::zeros(m);
            for i in 0..m {
                coeff[i] = r_c[i] / s[i] - w[i] * r_g[i];
            }
            top += &g_t * &coeff;
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, nx).copy_from(&top);
            if ne > 0 {
                rhs.rows_mut(nx, ne).copy_from(&(-&r_p));
            }
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, nx).into_owned();
            let dy = if ne > 0 {
                sol.rows(nx, ne).into_owned()
            } else {
                DVector::zeros(0)
            };
            let gdx = &prob.g_in * &dx;
            let ds = DVector::from_fn(m, |i, _| -r_g[i] - gdx[i]);
            let dz = DVector::from_fn(m, |i, _| -(r_c[i] + z[i] * ds[i]) / s[i]);
            Some((dx, dy, ds, dz))
        };

        // Predictor: pure Newton step toward complementarity zero.
        let r_c_aff = s.component_mul(&z);
        let Some((dx_a, _dy_a, ds_a, dz_a)) = solve_step(&r_c_aff) else {
            status = QpStatus::MaxIterations;
            break;
        };
        let alpha_p_aff = max_step(&s, &ds_a).min(1.0);
        let alpha_d_aff = max_step(&z, &dz_a).min(1.0);
        let mu_aff = (0..m)
            .map(|i| (s[i] + alpha_p_aff * ds_a[i]) * (z[i] + alpha_d_aff * dz_a[i]))
            .sum::<f64>()
            / m as f64;
        let sigma = if mu > 0.0 {
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };

        // Corrector with centering.
        let r_c = DVector::from_fn(m, |i, _| s[i] * z[i] - sigma * mu + ds_a[i] * dz_a[i]);
        let Some((dx, dy, ds, dz)) = solve_step(&r_c) else {
            status = QpStatus::MaxIterations;
            break;
        };
        let _ = dx_a;

        let alpha_p = (STEP_FRACTION * max_step(&s, &ds)).min(1.0);
        let alpha_d = (STEP_FRACTION * max_step(&z, &dz)).min(1.0);
        if !alpha_p.is_finite() || !alpha_d.is_finite() || !dx.iter().all(|v| v.is_finite()) {
            status = QpStatus::MaxIterations;
            break;
        }

        x += alpha_p * &dx;
        s += alpha_p * &ds;
        y += alpha_d * &dy;
        z += alpha_d * &dz;
    }

    QpSolution {
        x,
        y,
        z,
        s,
        status,
        iterations,
        gap,
        primal_residual,
        dual_residual,
    }
}

/// Equality-constrained QP: one saddle-point solve.
fn solve_equality_qp(prob: &QpProblem, opts: &QpOptions, x_init: DVector<f64>) -> QpSolution {
    let nx = prob.q.nrows();
    let ne = prob.a_eq.nrows();
    let dim = nx + ne;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (nx, nx)).copy_from(&prob.q);
    if ne > 0 {
        kkt.view_mut((0, nx), (nx, ne))
            .copy_from(&prob.a_eq.transpose());
        kkt.view_mut((nx, 0), (ne, nx)).copy_from(&prob.a_eq);
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, nx).copy_from(&(-&prob.c));
    if ne > 0 {
        rhs.rows_mut(nx, ne).copy_from(&prob.b_eq);
    }
    let (x, y, status) = match kkt.lu().solve(&rhs) {
        Some(sol) => (
            sol.rows(0, nx).into_owned(),
            sol.rows(nx, ne).into_owned(),
            QpStatus::Optimal,
        ),
        None => (x_init, DVector::zeros(ne), QpStatus::Infeasible),
    };
    let r_p = &prob.a_eq * &x - &prob.b_eq;
    let r_d = &prob.q * &x + &prob.c + prob.a_eq.transpose() * &y;
    let primal_residual = if ne > 0 { r_p.amax() } else { 0.0 };
    let dual_residual = r_d.amax() / 1.0_f64.max(prob.c.amax());
    let status =
        if status == QpStatus::Optimal && (primal_residual > opts.tol_kkt.max(1e-10) * 100.0) {
            QpStatus::Infeasible
        } else {
            status
        };
    QpSolution {
        x,
        y,
        z: DVector::zeros(0),
        s: DVector::zeros(0),
        status,
        iterations: 1,
        gap: 0.0,
        primal_residual,
        dual_residual,
    }
}

/// Largest alpha keeping v + alpha*dv strictly positive.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}
