//! Acceptance suite. Each test prints one `criterion N: PASS/FAIL`
//! line (visible with `--nocapture`) and asserts the stated threshold.
//!
//! The desk-scale protocol on the 30-bus case uses 5,000 training and
//! 1,000 test instances per run with the 32/16/8 architecture, batch
//! 64, 200 epochs, momentum 0.9 and learning rate 2e-2.

mod common;

use common::{brute_force_dcopf, case_path, random_network, NetSpec};
use dcopf_core::calibration::{
    compute_sensitivity, plan_from_percent, worst_case_error_bound, CalibrationPlan,
    EffectiveLimits,
};
use dcopf_core::dataset::{alpha_generators, generate_dataset, sample_loads, TrainingDataset};
use dcopf_core::grid::{build_admittance, parse_case, AdmittanceSystem, CaseFormat, PowerNetwork};
use dcopf_core::mlp::{
    loss, loss_and_grads, train, Batch, InputNormalization, MlpModel, PenaltyOperator, TrainConfig,
};
use dcopf_core::pipeline::{check_feasibility, realize_prediction, Fallback};
use dcopf_core::report::{evaluate, EvaluationReport, Predictor};
use dcopf_core::solver::{l1_project, solve_dcopf, DcOpfProblem, SolveStatus, SolverOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::OnceLock;

const N_TRAIN: usize = 5000;
const N_TEST: usize = 1000;
const RANGE: (f64, f64) = (1.0, 1.3);

fn acceptance_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 2e-2,
        seed,
        ..TrainConfig::default()
    }
}

struct Case30 {
    net: PowerNetwork,
    adm: AdmittanceSystem,
}

fn case30() -> &'static Case30 {
    static CASE: OnceLock<Case30> = OnceLock::new();
    CASE.get_or_init(|| {
        let net = parse_case(case_path("case30.m"), CaseFormat::MatpowerSubset)
            .expect("bundled case parses")
            .network;
        let adm = build_admittance(&net).expect("bundled case factorizes");
        Case30 { net, adm }
    })
}

struct Run {
    report: EvaluationReport,
    test_ds: TrainingDataset,
}

/// Full desk-scale run: generate, train, evaluate with projection
/// fallback.
fn run_protocol(c: f64, seed: u64) -> Run {
    let case = case30();
    let plan = if c == 0.0 {
        CalibrationPlan::none()
    } else {
        plan_from_percent(c).expect("valid fraction")
    };
    let (train_ds, test_ds, _) =
        generate_dataset(&case.net, &case.adm, &plan, N_TRAIN, N_TEST, RANGE, seed)
            .expect("dataset generation succeeds");
    let (model, _) = train(
        &case.net,
        &case.adm,
        &train_ds,
        &acceptance_train_config(seed),
    )
    .expect("training succeeds");
    let report = evaluate(
        &case.net,
        &case.adm,
        &test_ds,
        Predictor::Model(&model),
        Fallback::L1Projection,
        &SolverOptions::default(),
    )
    .expect("evaluation succeeds");
    Run { report, test_ds }
}

/// Seed-1 runs shared by criteria 5, 6, 7 and 9, keyed by calibration
/// in basis points.
fn shared_runs() -> &'static BTreeMap<u32, Run> {
    static RUNS: OnceLock<BTreeMap<u32, Run>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut runs = BTreeMap::new();
        for c_bp in [0u32, 50, 350, 700] {
            runs.insert(c_bp, run_protocol(c_bp as f64 / 10000.0, 1));
        }
        runs
    })
}

/// Criterion 1: interior-point optima match brute-force grid-search
/// oracles on 50 randomized 3-10 bus networks, within 1e-2 MW in
/// dispatch and 1e-4 relative in cost, with KKT residuals <= 1e-8.
#[test]
fn criterion_1_solver_matches_brute_force() {
    let opts = SolverOptions::default();
    let mut max_dispatch_diff = 0.0f64;
    let mut max_cost_rel = 0.0f64;
    let mut solved = 0;
    let mut seed = 1000u64;
    while solved < 50 {
        seed += 1;
        let spec = NetSpec {
            n_gens: if seed.is_multiple_of(2) { 2 } else { 3 },
            ..NetSpec::default()
        };
        let net = random_network(seed, &spec);
        let adm = build_admittance(&net).unwrap();
        let limits = EffectiveLimits::original(&net);
        let prob = DcOpfProblem::new(&net, &adm, net.default_load(), limits.clone()).unwrap();
        let sol = solve_dcopf(&prob, &opts);
        assert_eq!(
            sol.status,
            SolveStatus::Optimal,
            "seed {seed} did not solve"
        );
        assert!(
            sol.primal_residual <= 1e-8 && sol.dual_residual <= 1e-8 && sol.duality_gap <= 1e-8,
            "seed {seed}: KKT residuals ({:.2e}, {:.2e}, gap {:.2e})",
            sol.primal_residual,
            sol.dual_residual,
            sol.duality_gap
        );
        let (p_oracle, cost_oracle) =
            brute_force_dcopf(&net, &adm, &net.default_load(), &limits, 1e-3)
                .expect("oracle finds a feasible point");
        for g in 0..net.n_generators() {
            let diff = (sol.p_g_mw[g] - p_oracle[g]).abs();
            max_dispatch_diff = max_dispatch_diff.max(diff);
            assert!(
                diff <= 1e-2,
                "seed {seed} gen {g}: ip {} vs oracle {}",
                sol.p_g_mw[g],
                p_oracle[g]
            );
        }
        let rel = (sol.cost - cost_oracle).abs() / cost_oracle.abs();
        max_cost_rel = max_cost_rel.max(rel);
        assert!(
            rel <= 1e-4,
            "seed {seed}: cost {} vs oracle {}",
            sol.cost,
            cost_oracle
        );
        solved += 1;
    }
    println!(
        "criterion 1: PASS - 50/50 random networks matched the grid-search oracle \
         (max dispatch diff {max_dispatch_diff:.2e} MW, max cost rel {max_cost_rel:.2e})"
    );
}

/// Criterion 2: the per-line error-amplification bound holds for 1000
/// random bounded perturbations on each of 20 random networks, and
/// sign-pattern perturbations reach at least 99.9% of it.
#[test]
fn criterion_2_amplification_bound_holds_and_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for seed in 0..20u64 {
        let net = random_network(
            seed + 500,
            &NetSpec {
                gens_everywhere: true,
                ..NetSpec::default()
            },
        );
        let adm = build_admittance(&net).unwrap();
        let sens = compute_sensitivity(&adm);
        let n_red = sens.m.ncols();
        let n_lines = sens.m.nrows();
        let epsilon: f64 = rng.gen_range(0.1..2.0);
        let n_free_gens = net.n_generators() - 1;

        for _ in 0..1000 {
            let delta = DVector::from_fn(n_red, |_, _| rng.gen_range(-epsilon..=epsilon));
            let offsets = &sens.m * &delta;
            for i in 0..n_lines {
                assert!(
                    offsets[i].abs() <= sens.k[i] * epsilon * (1.0 + 1e-12) + 1e-12,
                    "net {seed} line {i}: offset {} > k*eps {}",
                    offsets[i].abs(),
                    sens.k[i] * epsilon
                );
            }
            let slack_offset: f64 = delta.iter().sum();
            assert!(slack_offset.abs() <= n_free_gens as f64 * epsilon * (1.0 + 1e-12) + 1e-12);
        }

        // adversarial sign patterns: one per line
        for i in 0..n_lines {
            let delta = DVector::from_fn(n_red, |k, _| epsilon * sens.m[(i, k)].signum());
            let offset = (sens.m.row(i) * &delta)[0].abs();
            assert!(
                offset >= 0.999 * sens.k[i] * epsilon,
                "net {seed} line {i}: adversarial offset {} below 99.9% of {}",
                offset,
                sens.k[i] * epsilon
            );
        }
        // slack tightness at the all-epsilon pattern
        let uniform = DVector::from_element(n_red, epsilon);
        let total: f64 = uniform.iter().sum();
        assert!(total >= 0.999 * n_red as f64 * epsilon);
    }
    println!(
        "criterion 2: PASS - 20 networks x 1000 perturbations with zero bound violations; \
         sign patterns reach >= 99.9% of every line bound"
    );
}

/// Criterion 3: the worst-case error bound agrees with an independent
/// log-domain evaluation to relative 1e-12 on 100 random tuples.
#[test]
fn criterion_3_error_bound_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut max_rel = 0.0f64;
    for _ in 0..100 {
        let lambda: f64 = rng.gen_range(0.1..10.0);
        let d: f64 = rng.gen_range(0.1..10.0);
        let n_n: u32 = rng.gen_range(1..=64);
        let n_hid: u32 = rng.gen_range(1..=6);
        let got = worst_case_error_bound(lambda, d, n_n, n_hid).unwrap();
        // independent route through logarithms
        let expected = lambda * d * (-(4.0f64.ln() + n_hid as f64 * (2.0 * n_n as f64).ln())).exp();
        let rel = (got - expected).abs() / expected.abs();
        max_rel = max_rel.max(rel);
        assert!(
            rel <= 1e-12,
            "({lambda}, {d}, {n_n}, {n_hid}): rel {rel:.2e}"
        );
    }
    println!(
        "criterion 3: PASS - 100 tuples agree with the log-domain route (max rel {max_rel:.2e})"
    );
}

/// Criterion 4: analytic gradients of the composite loss (including
/// the penalty through angle reconstruction) match central finite
/// differences to relative 1e-4 on 20 random configurations.
#[test]
fn criterion_4_gradient_check() {
    let mut configs_done = 0;
    let mut with_penalty = 0;
    let mut max_rel = 0.0f64;
    let mut seed = 9000u64;
    while configs_done < 20 {
        seed += 1;
        let net = random_network(
            seed,
            &NetSpec {
                n_buses_min: 3,
                n_buses_max: 5,
                n_gens: if seed.is_multiple_of(2) { 2 } else { 3 },
                gens_everywhere: false,
            },
        );
        let adm = build_admittance(&net).unwrap();
        let limits = EffectiveLimits::original(&net);
        let pen = PenaltyOperator::new(&net, &adm, &limits);
        let n_alpha = alpha_generators(&net).len();
        let load_buses = net.load_buses();
        if n_alpha == 0 || load_buses.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        // half the configurations push flows into violation
        let load_scale = if configs_done % 2 == 0 { 1.05 } else { 2.2 };
        let b = 3usize;
        let mut x_raw = DMatrix::zeros(load_buses.len(), b);
        let mut offsets = DMatrix::zeros(pen.n_lines(), b);
        for j in 0..b {
            let features = DVector::from_fn(load_buses.len(), |i, _| {
                net.buses[load_buses[i]].load_mw * load_scale * rng.gen_range(0.9..1.1)
            });
            offsets.column_mut(j).copy_from(&pen.load_offset(&features));
            x_raw.column_mut(j).copy_from(&features);
        }
        let norm = InputNormalization::fit(&x_raw);
        let x_norm = norm.apply_columns(&x_raw);
        let y = DMatrix::from_fn(n_alpha, b, |_, _| rng.gen_range(0.05..0.95));
        let batch = Batch { x_norm, y, offsets };
        let model = MlpModel::init(
            vec![load_buses.len(), 5, 4, n_alpha],
            InputNormalization::identity(load_buses.len()),
            "grad-check".into(),
            "none".into(),
            seed,
        )
        .unwrap();

        // keep away from relu/penalty kinks so the finite difference
        // is meaningful
        let pass = model_kink_distance(&model, &batch, &pen);
        if pass < 1e-3 {
            continue;
        }
        let terms = loss(&model, &batch, &pen, 1.0, 1.0).unwrap();
        if terms.l_pen > 0.0 {
            with_penalty += 1;
        }

        let (_, grads) = loss_and_grads(&model, &batch, &pen, 1.0, 1.0).unwrap();
        let h = 1e-5;
        let mut probe = model.clone();
        for l in 0..probe.weights.len() {
            for idx in 0..probe.weights[l].len() {
                let orig = probe.weights[l][idx];
                probe.weights[l][idx] = orig + h;
                let up = loss(&probe, &batch, &pen, 1.0, 1.0).unwrap().total;
                probe.weights[l][idx] = orig - h;
                let down = loss(&probe, &batch, &pen, 1.0, 1.0).unwrap().total;
                probe.weights[l][idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let analytic = grads.dw[l][idx];
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
                max_rel = max_rel.max(rel);
                assert!(
                    rel <= 1e-4,
                    "seed {seed} layer {l} w[{idx}]: analytic {analytic:.6e} fd {fd:.6e}"
                );
            }
            for idx in 0..probe.biases[l].len() {
                let orig = probe.biases[l][idx];
                probe.biases[l][idx] = orig + h;
                let up = loss(&probe, &batch, &pen, 1.0, 1.0).unwrap().total;
                probe.biases[l][idx] = orig - h;
                let down = loss(&probe, &batch, &pen, 1.0, 1.0).unwrap().total;
                probe.biases[l][idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let analytic = grads.db[l][idx];
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
                max_rel = max_rel.max(rel);
                assert!(
                    rel <= 1e-4,
                    "seed {seed} layer {l} b[{idx}]: analytic {analytic:.6e} fd {fd:.6e}"
                );
            }
        }
        configs_done += 1;
    }
    assert!(
        with_penalty >= 5,
        "only {with_penalty} configurations exercised the penalty term"
    );
    println!(
        "criterion 4: PASS - 20 configurations ({with_penalty} with active penalties), \
         max gradient rel err {max_rel:.2e}"
    );
}

/// Distance of the configuration from relu and penalty kinks.
fn model_kink_distance(model: &MlpModel, batch: &Batch, pen: &PenaltyOperator) -> f64 {
    let mut min_dist = f64::INFINITY;
    // hidden pre-activations via a manual forward
    let mut act = batch.x_norm.clone();
    for l in 0..model.weights.len() {
        let mut z = &model.weights[l] * &act;
        for mut col in z.column_iter_mut() {
            col += &model.biases[l];
        }
        if l + 1 < model.weights.len() {
            for v in z.iter() {
                min_dist = min_dist.min(v.abs());
            }
            act = z.map(|v| v.max(0.0));
        } else {
            act = z.map(|v| 1.0 / (1.0 + (-v).exp()));
        }
    }
    let flows = pen.normalized_flows(&act, &batch.offsets);
    for f in flows.iter() {
        min_dist = min_dist.min((f.abs() - 1.0).abs());
    }
    min_dist
}

/// Criterion 5: desk-scale protocol on the 30-bus case. With 3.5%
/// calibration the feasibility rate must reach 99% and the optimality
/// loss stay within 1.0%; the uncalibrated run must sit strictly
/// below the calibrated feasibility rate. Passes on 2 of 3 seeds.
#[test]
fn criterion_5_desk_scale_benchmark() {
    let mut passed = 0;
    let mut failed = 0;
    let mut lines = Vec::new();
    for seed in [1u64, 2, 3] {
        let (calibrated, uncalibrated);
        let shared;
        if seed == 1 {
            shared = shared_runs();
            calibrated = &shared[&350].report;
            uncalibrated = &shared[&0].report;
            run_seed_check(
                seed,
                calibrated,
                uncalibrated,
                &mut passed,
                &mut failed,
                &mut lines,
            );
        } else {
            let cal_run = run_protocol(0.035, seed);
            let uncal_run = run_protocol(0.0, seed);
            run_seed_check(
                seed,
                &cal_run.report,
                &uncal_run.report,
                &mut passed,
                &mut failed,
                &mut lines,
            );
        }
        if passed >= 2 || failed >= 2 {
            break;
        }
    }
    let ok = passed >= 2;
    for line in &lines {
        println!("  {line}");
    }
    println!(
        "criterion 5: {} - {passed} seed(s) met feasibility >= 99%, loss <= 1.0% and \
         uncalibrated < calibrated (2 of 3 required)",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok);
}

fn run_seed_check(
    seed: u64,
    calibrated: &EvaluationReport,
    uncalibrated: &EvaluationReport,
    passed: &mut usize,
    failed: &mut usize,
    lines: &mut Vec<String>,
) {
    let feas = calibrated.aggregates.feasibility_rate_pct;
    let loss = calibrated.aggregates.optimality_loss_pct;
    let feas0 = uncalibrated.aggregates.feasibility_rate_pct;
    let ok = feas >= 99.0 && loss <= 1.0 && feas0 < feas;
    if ok {
        *passed += 1;
    } else {
        *failed += 1;
    }
    lines.push(format!(
        "seed {seed}: calibrated feasibility {feas:.2}%, loss {loss:.3}%, \
         uncalibrated feasibility {feas0:.2}% -> {}",
        if ok { "ok" } else { "miss" }
    ));
}

/// Criterion 6: across c in {0.5%, 3.5%, 7%} with shared seeds, the
/// feasibility rate and the optimality loss are both non-decreasing
/// at two-decimal precision, with at most one adjacent tie each.
#[test]
fn criterion_6_monotone_calibration_trend() {
    let runs = shared_runs();
    let round2 = |v: f64| (v * 100.0).round() / 100.0;
    let feas: Vec<f64> = [50u32, 350, 700]
        .iter()
        .map(|c| round2(runs[c].report.aggregates.feasibility_rate_pct))
        .collect();
    let loss: Vec<f64> = [50u32, 350, 700]
        .iter()
        .map(|c| round2(runs[c].report.aggregates.optimality_loss_pct))
        .collect();
    let check = |vals: &[f64]| -> (bool, usize) {
        let mut ties = 0;
        for w in vals.windows(2) {
            if w[0] > w[1] {
                return (false, ties);
            }
            if w[0] == w[1] {
                ties += 1;
            }
        }
        (true, ties)
    };
    let (feas_ok, feas_ties) = check(&feas);
    let (loss_ok, loss_ties) = check(&loss);
    let ok = feas_ok && feas_ties <= 1 && loss_ok && loss_ties <= 1;
    println!(
        "criterion 6: {} - feasibility {feas:?} ({feas_ties} tie(s)), loss {loss:?} \
         ({loss_ties} tie(s)) across c = 0.5%/3.5%/7%",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok);
}

/// Criterion 7: the mean of per-instance solver/model runtime ratios
/// is at least 10 on the 30-bus case.
#[test]
fn criterion_7_speedup_ratio() {
    let runs = shared_runs();
    let a = &runs[&350].report.aggregates;
    // mean of ratios by contract, not ratio of means
    let recomputed: f64 = runs[&350]
        .report
        .per_instance
        .iter()
        .map(|r| r.ratio)
        .sum::<f64>()
        / runs[&350].report.per_instance.len() as f64;
    let ok = a.avg_speedup >= 10.0 && (recomputed - a.avg_speedup).abs() < 1e-12;
    println!(
        "criterion 7: {} - average speedup x{:.0} (mean of per-instance ratios; threshold x10)",
        if ok { "PASS" } else { "FAIL" },
        a.avg_speedup
    );
    assert!(ok);
}

/// Criterion 8: the l1-projection is the identity on feasible points,
/// its output always re-checks feasible, and it is idempotent on 100
/// random infeasible predictions.
#[test]
fn criterion_8_projection_contract() {
    let case = case30();
    let original = EffectiveLimits::original(&case.net);
    let n_alpha = alpha_generators(&case.net).len();
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let loads = sample_loads(&case.net, (1.15, 1.3), 400, 99).unwrap();

    let mut infeasible_done = 0;
    let mut identity_done = 0;
    for sample in &loads {
        if infeasible_done >= 100 && identity_done >= 20 {
            break;
        }
        let alpha = DVector::from_fn(n_alpha, |_, _| rng.gen::<f64>());
        let pred = realize_prediction(
            &case.net,
            &case.adm,
            &alpha,
            &sample.loads_mw,
            Fallback::None,
            0.0,
        )
        .unwrap();
        let prob = DcOpfProblem::new(
            &case.net,
            &case.adm,
            sample.loads_mw.clone(),
            original.clone(),
        )
        .unwrap();
        if pred.feasible_direct {
            if identity_done < 20 {
                let projected = l1_project(&prob, &pred.p_g_mw).unwrap();
                for g in 0..case.net.n_generators() {
                    assert!(
                        (projected.p_g_mw[g] - pred.p_g_mw[g]).abs() <= 1e-8,
                        "identity violated on feasible input"
                    );
                }
                identity_done += 1;
            }
            continue;
        }
        if infeasible_done >= 100 {
            continue;
        }
        let once = l1_project(&prob, &pred.p_g_mw).unwrap();
        assert_eq!(once.status, SolveStatus::Optimal);
        let (ok, violations) =
            check_feasibility(&case.net, &case.adm, &once.p_g_mw, &once.theta, &original);
        assert!(ok, "projection output re-check failed: {violations:?}");
        let twice = l1_project(&prob, &once.p_g_mw).unwrap();
        for g in 0..case.net.n_generators() {
            assert!(
                (twice.p_g_mw[g] - once.p_g_mw[g]).abs() <= 1e-8,
                "idempotence violated: {} vs {}",
                twice.p_g_mw[g],
                once.p_g_mw[g]
            );
        }
        infeasible_done += 1;
    }
    assert!(
        infeasible_done >= 100,
        "only {infeasible_done} infeasible predictions found"
    );
    assert!(identity_done >= 20);
    println!(
        "criterion 8: PASS - identity on {identity_done} feasible points; re-check and \
         idempotence on {infeasible_done} infeasible predictions"
    );
}

/// Criterion 9: replaying the stored ground-truth scaling factors
/// yields 100% feasibility and 0.00% optimality loss.
#[test]
fn criterion_9_oracle_end_to_end() {
    let case = case30();
    let runs = shared_runs();
    let report = evaluate(
        &case.net,
        &case.adm,
        &runs[&350].test_ds,
        Predictor::Oracle,
        Fallback::L1Projection,
        &SolverOptions::default(),
    )
    .unwrap();
    let a = &report.aggregates;
    let ok = a.feasibility_rate_pct == 100.0
        && a.optimality_loss_pct.abs() < 5e-5
        && report.per_instance.iter().all(|r| !r.projected);
    println!(
        "criterion 9: {} - oracle replay: feasibility {:.2}%, loss {:.5}% (rounds to 0.00%)",
        if ok { "PASS" } else { "FAIL" },
        a.feasibility_rate_pct,
        a.optimality_loss_pct
    );
    assert!(ok);
}

/// Larger-scale configuration on the bundled 118-bus case. Excluded
/// from the default run (long); invoke with `cargo test -- --ignored`.
#[test]
#[ignore = "long-running large-case configuration"]
fn optional_case118_configuration() {
    let net = parse_case(case_path("case118.m"), CaseFormat::MatpowerSubset)
        .unwrap()
        .network;
    let adm = build_admittance(&net).unwrap();
    let plan = plan_from_percent(0.05).unwrap();
    let (train_ds, test_ds, stats) =
        generate_dataset(&net, &adm, &plan, 2000, 400, RANGE, 1).unwrap();
    println!(
        "case118: generated {} train / {} test (discards {}/{})",
        train_ds.records.len(),
        test_ds.records.len(),
        stats.train_discarded,
        stats.test_discarded
    );
    let (model, _) = train(&net, &adm, &train_ds, &acceptance_train_config(1)).unwrap();
    let report = evaluate(
        &net,
        &adm,
        &test_ds,
        Predictor::Model(&model),
        Fallback::L1Projection,
        &SolverOptions::default(),
    )
    .unwrap();
    let a = &report.aggregates;
    println!(
        "case118: feasibility {:.2}%, loss {:.3}%, speedup x{:.0}",
        a.feasibility_rate_pct, a.optimality_loss_pct, a.avg_speedup
    );
    assert!(a.avg_speedup >= 10.0);
}
