//! Shared helpers for the integration and acceptance suites: random
//! connected test networks and brute-force oracles that stay
//! independent of the interior-point implementation path.
#![allow(dead_code)]

use dcopf_core::calibration::{compute_sensitivity, EffectiveLimits};
use dcopf_core::grid::{
    build_admittance, AdmittanceSystem, Branch, Bus, CostCurve, Generator, PowerNetwork,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../cases")
        .join(name)
}

/// Options for [`random_network`].
pub struct NetSpec {
    pub n_buses_min: usize,
    pub n_buses_max: usize,
    /// 2 generators gives a 1-D reduced feasible set, 3 gives 2-D.
    pub n_gens: usize,
    /// Put a generator on every bus (used by the error-bound tests).
    pub gens_everywhere: bool,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            n_buses_min: 3,
            n_buses_max: 10,
            n_gens: 2,
            gens_everywhere: false,
        }
    }
}

/// Random connected network: spanning tree plus chords, loads on most
/// buses, line capacities sized from the flows of a proportional
/// reference dispatch so a comfortably feasible point exists while
/// the cost optimum may still bind a line.
pub fn random_network(seed: u64, spec: &NetSpec) -> PowerNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(spec.n_buses_min..=spec.n_buses_max);
    let buses: Vec<Bus> = (0..n)
        .map(|i| Bus {
            id: i as u32 + 1,
            load_mw: if i == 0 || rng.gen_bool(0.75) {
                (rng.gen_range(5.0..30.0f64) * 10.0).round() / 10.0
            } else {
                0.0
            },
        })
        .collect();
    let total_load: f64 = buses.iter().map(|b| b.load_mw).sum();

    // spanning tree then extra chords
    let mut pairs = Vec::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        pairs.push((j, i));
    }
    let extra = n / 2;
    for _ in 0..extra {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let (a, b) = (a.min(b), a.max(b));
        if a != b && !pairs.contains(&(a, b)) {
            pairs.push((a, b));
        }
    }
    let reactances: Vec<f64> = (0..pairs.len())
        .map(|_| (rng.gen_range(0.05..0.5f64) * 1000.0).round() / 1000.0)
        .collect();

    // generators: slack on bus 0 plus distinct others (or everywhere)
    let gen_buses: Vec<usize> = if spec.gens_everywhere {
        (0..n).collect()
    } else {
        let mut chosen = vec![0usize];
        while chosen.len() < spec.n_gens.min(n) {
            let b = rng.gen_range(1..n);
            if !chosen.contains(&b) {
                chosen.push(b);
            }
        }
        chosen
    };
    let ng = gen_buses.len();
    let mut shares: Vec<f64> = (0..ng).map(|_| rng.gen_range(0.5..1.5)).collect();
    let share_sum: f64 = shares.iter().sum();
    for s in &mut shares {
        *s /= share_sum;
    }
    let cap_factor = rng.gen_range(2.0..3.0);
    let generators: Vec<Generator> = gen_buses
        .iter()
        .zip(shares.iter())
        .map(|(&bus, &share)| Generator {
            bus,
            p_min_mw: 0.0,
            p_max_mw: (share * total_load * cap_factor).max(5.0).ceil(),
            cost: CostCurve {
                quadratic: (rng.gen_range(0.01..0.08f64) * 1000.0).round() / 1000.0,
                linear: (rng.gen_range(1.0..5.0f64) * 100.0).round() / 100.0,
                constant: (rng.gen_range(0.0..10.0f64) * 10.0).round() / 10.0,
            },
        })
        .collect();

    // proportional reference dispatch for capacity sizing
    let mut net = PowerNetwork {
        name: format!("rand{seed}"),
        base_mva: 100.0,
        buses,
        generators,
        branches: pairs
            .iter()
            .zip(reactances.iter())
            .map(|(&(a, b), &x)| Branch {
                from: a,
                to: b,
                reactance_pu: x,
                capacity_mw: 1.0, // placeholder until sized below
            })
            .collect(),
        slack_bus: 0,
    };
    let adm = build_admittance(&net).expect("random network is connected");
    let total_cap: f64 = net.generators.iter().map(|g| g.p_max_mw).sum();
    let mut injection = DVector::zeros(n);
    for g in &net.generators {
        injection[g.bus] += g.p_max_mw / total_cap * total_load;
    }
    for (i, b) in net.buses.iter().enumerate() {
        injection[i] -= b.load_mw;
    }
    let theta =
        adm.embed_reduced(&adm.solve_reduced(&(adm.reduce_full(&injection) / net.base_mva)));
    let flows = adm.flows_from_angles(&theta) * net.base_mva;
    for (k, br) in net.branches.iter_mut().enumerate() {
        br.capacity_mw = (flows[k].abs() * rng.gen_range(1.25..1.8)).max(5.0).ceil();
    }
    net.validate().expect("sized network is valid");
    net
}

/// Feasibility of a full generation vector (per-generator MW) against
/// the limits, evaluated from scratch through the PTDF matrix.
fn dispatch_feasible(
    net: &PowerNetwork,
    m: &DMatrix<f64>,
    non_slack: &[usize],
    load_mw: &DVector<f64>,
    limits: &EffectiveLimits,
    p: &DVector<f64>,
    tol: f64,
) -> bool {
    for gi in 0..net.n_generators() {
        if p[gi] < limits.gen_min_mw[gi] - tol || p[gi] > limits.gen_max_mw[gi] + tol {
            return false;
        }
    }
    let mut inj = DVector::zeros(net.n_buses());
    for (g, &pg) in net.generators.iter().zip(p.iter()) {
        inj[g.bus] += pg;
    }
    inj -= load_mw;
    let inj_ns = DVector::from_iterator(non_slack.len(), non_slack.iter().map(|&b| inj[b]));
    let flows = m * inj_ns; // MW (M is dimensionless)
    for k in 0..flows.len() {
        if flows[k].abs() > limits.line_cap_mw[k] + tol {
            return false;
        }
    }
    true
}

fn dispatch_cost(net: &PowerNetwork, p: &DVector<f64>) -> f64 {
    net.generators
        .iter()
        .zip(p.iter())
        .map(|(g, &pg)| g.cost.quadratic * pg * pg + g.cost.linear * pg + g.cost.constant)
        .sum()
}

/// Brute-force DC-OPF oracle: grid search over the non-slack
/// generations (the reduced feasible set), slack from the balance.
/// Exhaustive at `resolution_mw` for one free generator; hierarchical
/// refinement down to `resolution_mw` for two.
pub fn brute_force_dcopf(
    net: &PowerNetwork,
    adm: &AdmittanceSystem,
    load_mw: &DVector<f64>,
    limits: &EffectiveLimits,
    resolution_mw: f64,
) -> Option<(DVector<f64>, f64)> {
    let sens = compute_sensitivity(adm);
    let non_slack: Vec<usize> = adm.non_slack_buses().to_vec();
    let slack_gen = net.slack_generator();
    let free: Vec<usize> = (0..net.n_generators())
        .filter(|&g| g != slack_gen)
        .collect();
    let total_load: f64 = load_mw.iter().sum();
    let feas_tol = 1e-7;

    let assemble = |q: &[f64]| -> DVector<f64> {
        let mut p = DVector::zeros(net.n_generators());
        let mut sum = 0.0;
        for (j, &g) in free.iter().enumerate() {
            p[g] = q[j];
            sum += q[j];
        }
        p[slack_gen] = total_load - sum;
        p
    };
    let eval = |q: &[f64]| -> Option<f64> {
        let p = assemble(q);
        dispatch_feasible(net, &sens.m, &non_slack, load_mw, limits, &p, feas_tol)
            .then(|| dispatch_cost(net, &p))
    };

    match free.len() {
        1 => {
            let g = free[0];
            let (lo, hi) = (limits.gen_min_mw[g], limits.gen_max_mw[g]);
            let steps = ((hi - lo) / resolution_mw).ceil() as usize;
            let mut best: Option<(f64, f64)> = None;
            for i in 0..=steps {
                let q = (lo + i as f64 * resolution_mw).min(hi);
                if let Some(cost) = eval(&[q]) {
                    if best.is_none_or(|(_, c)| cost < c) {
                        best = Some((q, cost));
                    }
                }
            }
            best.map(|(q, cost)| (assemble(&[q]), cost))
        }
        2 => {
            // Exhaustive search over the 1e-3 lattice: grid the first
            // free generation; for each value the second generation is
            // feasible on an interval (all constraints are linear), and
            // the cost is a strictly convex quadratic there, so the
            // lattice minimizer sits next to the clamped vertex or at a
            // lattice endpoint of the interval.
            let (g0, g1) = (free[0], free[1]);
            let (lo0, hi0) = (limits.gen_min_mw[g0], limits.gen_max_mw[g0]);
            let (lo1, hi1) = (limits.gen_min_mw[g1], limits.gen_max_mw[g1]);
            let res = resolution_mw;

            // line flows as affine functions of (q0, q1)
            let mut base_inj = DVector::zeros(non_slack.len());
            let mut col0 = DVector::zeros(non_slack.len());
            let mut col1 = DVector::zeros(non_slack.len());
            for (r, &b) in non_slack.iter().enumerate() {
                base_inj[r] = -load_mw[b];
                if b == net.generators[g0].bus {
                    col0[r] += 1.0;
                }
                if b == net.generators[g1].bus {
                    col1[r] += 1.0;
                }
            }
            let flow_base = &sens.m * &base_inj;
            let flow_c0 = &sens.m * &col0;
            let flow_c1 = &sens.m * &col1;

            let (a0, b0c) = (
                net.generators[g0].cost.quadratic,
                net.generators[g0].cost.linear,
            );
            let _ = (a0, b0c);
            let (a1, b1c) = (
                net.generators[g1].cost.quadratic,
                net.generators[g1].cost.linear,
            );
            let (as_, bs) = (
                net.generators[slack_gen].cost.quadratic,
                net.generators[slack_gen].cost.linear,
            );

            let n0 = ((hi0 - lo0) / res).ceil() as usize;
            let mut best: Option<([f64; 2], f64)> = None;
            for i in 0..=n0 {
                let q0 = (lo0 + i as f64 * res).min(hi0);
                // feasible interval for q1 at this q0
                let mut l = lo1;
                let mut u = hi1;
                // slack box: lo_s <= L - q0 - q1 <= hi_s
                l = l.max(total_load - q0 - limits.gen_max_mw[slack_gen]);
                u = u.min(total_load - q0 - limits.gen_min_mw[slack_gen]);
                // lines: |flow_base + c0*q0 + c1*q1| <= cap
                for k in 0..flow_base.len() {
                    let fixed = flow_base[k] + flow_c0[k] * q0;
                    let c1 = flow_c1[k];
                    let cap = limits.line_cap_mw[k];
                    if c1.abs() < 1e-12 {
                        if fixed.abs() > cap + 1e-7 {
                            l = 1.0;
                            u = 0.0;
                            break;
                        }
                        continue;
                    }
                    let (bound_a, bound_b) = ((cap - fixed) / c1, (-cap - fixed) / c1);
                    let (lk, uk) = if c1 > 0.0 {
                        (bound_b, bound_a)
                    } else {
                        (bound_a, bound_b)
                    };
                    l = l.max(lk);
                    u = u.min(uk);
                }
                if l > u + 1e-12 {
                    continue;
                }
                // strictly convex quadratic in q1; vertex of
                // a1*q1^2 + b1c*q1 + as_*(L - q0 - q1)^2 + bs*(L - q0 - q1)
                let denom = 2.0 * (a1 + as_);
                let vertex = if denom > 0.0 {
                    (2.0 * as_ * (total_load - q0) + bs - b1c) / denom
                } else {
                    l
                };
                // lattice candidates around the clamped vertex and at
                // the lattice endpoints of the interval
                let mut candidates = Vec::with_capacity(6);
                let push = |cands: &mut Vec<f64>, t: f64| {
                    if t >= l - 1e-9 && t <= u + 1e-9 && t >= lo1 - 1e-9 && t <= hi1 + 1e-9 {
                        cands.push(t.clamp(lo1, hi1));
                    }
                };
                // l can exceed u by float dust within the tolerance gate
                let t = vertex.clamp(l, u.max(l));
                let k = ((t - lo1) / res).floor();
                push(&mut candidates, lo1 + k * res);
                push(&mut candidates, lo1 + (k + 1.0) * res);
                push(&mut candidates, lo1 + ((l - lo1) / res).ceil() * res);
                push(&mut candidates, lo1 + ((u - lo1) / res).floor() * res);
                push(&mut candidates, hi1.min(u));
                for q1 in candidates {
                    if let Some(cost) = eval(&[q0, q1]) {
                        if best.is_none_or(|(_, c)| cost < c) {
                            best = Some(([q0, q1], cost));
                        }
                    }
                }
            }
            best.map(|(q, cost)| (assemble(&q), cost))
        }
        other => panic!("oracle supports 1 or 2 free generators, got {other}"),
    }
}

/// Minimize `c.x` over `{A x = b, G x <= h}` by enumerating basic
/// feasible solutions (vertex enumeration). Only viable for tiny LPs.
pub fn lp_vertex_enumeration(
    c: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    g_in: &DMatrix<f64>,
    h_in: &DVector<f64>,
) -> Option<(DVector<f64>, f64)> {
    let nx = c.len();
    let ne = a_eq.nrows();
    let m = g_in.nrows();
    let need = nx - ne;
    let mut best: Option<(DVector<f64>, f64)> = None;

    let mut combo: Vec<usize> = (0..need).collect();
    loop {
        // assemble the square active system
        let mut mat = DMatrix::zeros(nx, nx);
        let mut rhs = DVector::zeros(nx);
        mat.view_mut((0, 0), (ne, nx)).copy_from(a_eq);
        rhs.rows_mut(0, ne).copy_from(b_eq);
        for (r, &k) in combo.iter().enumerate() {
            mat.row_mut(ne + r).copy_from(&g_in.row(k));
            rhs[ne + r] = h_in[k];
        }
        if let Some(x) = mat.lu().solve(&rhs) {
            let gx = g_in * &x;
            let feasible = (0..m).all(|k| gx[k] <= h_in[k] + 1e-7);
            if feasible {
                let obj = c.dot(&x);
                if best.as_ref().is_none_or(|(_, b)| obj < *b) {
                    best = Some((x, obj));
                }
            }
        }
        // next combination
        let mut i = need;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if combo[i] + (need - i) < m {
                combo[i] += 1;
                for j in i + 1..need {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}
