//! End-to-end acceptance checks. Runs sequentially so the timing limits are
//! measured without competition from other tests.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::Rng;

use optikron::case_io::{load_case, reduced_to_string, MatpowerOptions};
use optikron::kron::{kron_schur, kron_via_impedance, kron_voltages, Partition};
use optikron::linalg::{self, CMatrix};
use optikron::milp::{
    build_model, builtin_exact_solver, certified_delta, enumerate_decisions, enumeration_oracle,
    BuiltinBackend, MilpModel,
};
use optikron::powerflow::{lambda_grid, solve_powerflow, SweepMode};
use optikron::successive::{protected_buses, run, ProtectPolicy};
use optikron::synth::{radial_feeder, random_connected, Feeder, FeederOptions};
use optikron::validation::{pq_reduction_pct, sweep_errors, ErrorReport};
use optikron::{
    AdmittanceModel, Assignment, InjectionSpec, MilpConfig, ReducedNetwork, RunOptions,
    ScenarioLibrary,
};

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: f64) -> std::result::Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit, || {
        format!("took {:.1} s, limit {limit} s", elapsed.as_secs_f64())
    })
}

fn random_network(r: &mut impl Rng, n: usize) -> AdmittanceModel {
    let extra = r.gen_range(0..=n);
    AdmittanceModel::build(&random_connected(r, n, extra)).expect("random network builds")
}

fn random_partition(r: &mut impl Rng, model: &AdmittanceModel) -> Partition {
    let keep: Vec<bool> = (0..model.n())
        .map(|i| i == model.slack || r.gen_bool(0.5))
        .collect();
    Partition::from_mask(&keep, model.slack).expect("slack kept")
}

fn remark_one() -> Check {
    let started = Instant::now();
    let mut r = common::rng(1);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let n = r.gen_range(4..=30);
        let model = random_network(&mut r, n);
        let p = random_partition(&mut r, &model);
        let yk = kron_schur(&model.ybus_dense(), &p).map_err(|e| e.to_string())?;
        let inv = linalg::lu_inverse(&yk, 1e-13).map_err(|e| e.to_string())?;
        worst = worst.max(linalg::inf_norm(
            &(inv - kron_via_impedance(&model.zbus, &p)),
        ));
    }
    ensure(worst <= 1e-8, || format!("max deviation {worst:.3e}"))?;
    within(started.elapsed(), 10.0)?;
    Ok(format!(
        "50 networks, max deviation {worst:.2e}, {:.2} s",
        started.elapsed().as_secs_f64()
    ))
}

fn lemma_one() -> Check {
    let started = Instant::now();
    let mut r = common::rng(2);
    let mut pairs = 0;
    let mut reductions = 0;
    while pairs < 1000 {
        let n = r.gen_range(3..=12);
        let model = common::small_model(r.gen(), n, 1, &common::config(0.01, 1.0));
        for _ in 0..20 {
            let a = common::random_feasible(&mut r, &model);
            model.check_assignment(&a).map_err(|e| e.to_string())?;
            reductions += a.reductions();
            let a = a.to_matrix();
            let s =
                nalgebra::DMatrix::<u8>::from_fn(n, n, |i, j| if i == j { a[(i, i)] } else { 0 });
            ensure(&s * &a == a, || {
                format!("S A differs from A on a {n}-bus pair")
            })?;
            pairs += 1;
        }
    }
    within(started.elapsed(), 5.0)?;
    Ok(format!(
        "{pairs} pairs ({reductions} reduced columns), {:.2} s",
        started.elapsed().as_secs_f64()
    ))
}

/// Random instance of at most 8 buses and at most 2 scenarios.
fn enumerable(r: &mut impl Rng, config: &MilpConfig) -> MilpModel {
    let n = r.gen_range(3..=8);
    let scenarios = r.gen_range(1..=2);
    common::small_model(r.gen(), n, scenarios, config)
}

fn lemma_two() -> Check {
    let started = Instant::now();
    let mut r = common::rng(3);
    let mut reducing = 0;
    for k in 0..20 {
        let alpha = [0.02, 0.2, 1.0][k % 3];
        let model = enumerable(&mut r, &common::config(alpha, 0.5));
        let exhaustive = enumeration_oracle(&model)
            .map_err(|e| e.to_string())?
            .objective;
        let big_m_min = enumerate_decisions(&model)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|a| model.evaluate(a).expect("feasible decision"))
            .filter(|e| e.feasible)
            .map(|e| e.objective)
            .fold(f64::INFINITY, f64::min);
        let decision = builtin_exact_solver(&model).map_err(|e| e.to_string())?;
        reducing += usize::from(decision.reductions() > 0);
        let solved = decision.objective;
        ensure(big_m_min == exhaustive && solved == exhaustive, || {
            format!(
                "instance {k}: big-M {big_m_min:e}, solver {solved:e}, exhaustive {exhaustive:e}"
            )
        })?;
    }
    within(started.elapsed(), 60.0)?;
    Ok(format!(
        "20 instances equal ({reducing} with reductions), {:.2} s",
        started.elapsed().as_secs_f64()
    ))
}

fn zero_injection_exactness() -> Check {
    let mut r = common::rng(4);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let n = r.gen_range(4..=30);
        let model = random_network(&mut r, n);
        let p = random_partition(&mut r, &model);
        let keep: Vec<bool> = (0..n).map(|u| p.keep().binary_search(&u).is_ok()).collect();
        let i: Vec<Complex64> = (0..n)
            .map(|u| {
                if keep[u] {
                    Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let v = linalg::matvec(&model.zbus, &i);
        let yk = kron_schur(&model.ybus_dense(), &p).map_err(|e| e.to_string())?;
        let i_k = CMatrix::from_fn(p.keep().len(), 1, |a, _| i[p.keep()[a]]);
        let v_k = linalg::lu_solve(&yk, &i_k, 1e-13).map_err(|e| e.to_string())?;
        let a = Assignment::from_targets(
            (0..n)
                .map(|u| if keep[u] { u } else { model.slack })
                .collect(),
        )
        .unwrap();
        let direct = kron_voltages(&model.zbus, &keep, &a, &i).map_err(|e| e.to_string())?;
        for (pos, &k) in p.keep().iter().enumerate() {
            worst = worst
                .max((v_k[(pos, 0)] - v[k]).norm())
                .max((direct[k] - v[k]).norm());
        }
    }
    ensure(worst <= 1e-8, || {
        format!("max kept-voltage error {worst:.3e}")
    })?;
    Ok(format!("20 instances, max kept-voltage error {worst:.2e}"))
}

fn small_fixtures() -> Vec<MilpModel> {
    let mut out = Vec::new();
    let mut r = common::rng(5);
    for n in 3..=8 {
        for k in 0..6 {
            let alpha = [0.0, 0.002, 0.01, 0.05, 0.5, 5.0][k];
            let beta = [0.25, 0.5, 1.0][k % 3];
            out.push(common::small_model(
                r.gen(),
                n,
                1 + k % 2,
                &common::config(alpha, beta),
            ));
        }
    }
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/case6.json");
    let case = load_case(&fixture, &MatpowerOptions::default()).expect("six-bus fixture");
    let network = AdmittanceModel::build(&case).expect("six-bus fixture builds");
    let lib = common::voltage_library(&mut r, &network, 2);
    for alpha in [0.002, 0.02, 0.2] {
        out.push(build_model(&network, &lib, &[], &common::config(alpha, 0.5)).unwrap());
    }
    out
}

fn builtin_oracle() -> Check {
    let fixtures = small_fixtures();
    let mut reducing = 0;
    for (k, model) in fixtures.iter().enumerate() {
        let oracle = enumeration_oracle(model).map_err(|e| e.to_string())?;
        let got = builtin_exact_solver(model).map_err(|e| e.to_string())?;
        ensure(got.objective == oracle.objective, || {
            format!(
                "fixture {k}: builtin {:e}, enumeration {:e}",
                got.objective, oracle.objective
            )
        })?;
        ensure(
            certified_delta(model, &got.assignment).ok() == Some(got.delta),
            || format!("fixture {k}: delta not reproduced"),
        )?;
        reducing += usize::from(got.reductions() > 0);
    }
    Ok(format!(
        "{} fixtures equal ({reducing} with reductions)",
        fixtures.len()
    ))
}

struct FeederRun {
    reduced: ReducedNetwork,
    elapsed: Duration,
    report: ErrorReport,
}

fn feeder_run(
    feeder: &Feeder,
    model: &AdmittanceModel,
    lib: &ScenarioLibrary,
    beta: f64,
) -> std::result::Result<FeederRun, String> {
    let config = MilpConfig {
        alpha: 0.002,
        beta,
        gamma: 1.0,
        ..MilpConfig::default()
    };
    let started = Instant::now();
    let reduced = run(
        model,
        lib,
        &config,
        &[],
        &BuiltinBackend,
        RunOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let report = sweep_errors(
        model,
        &reduced,
        &feeder.light,
        &feeder.heavy,
        &lambda_grid(21),
        SweepMode::Resolve,
    )
    .map_err(|e| e.to_string())?;
    Ok(FeederRun {
        reduced,
        elapsed,
        report,
    })
}

struct FeederCase {
    feeder: Feeder,
    model: AdmittanceModel,
    lib: ScenarioLibrary,
}

fn feeder_case() -> FeederCase {
    let feeder = radial_feeder(&FeederOptions::default()).expect("feeder builds");
    let model = AdmittanceModel::build(&feeder.case).expect("feeder model");
    let lib = feeder.library().expect("feeder load flows");
    FeederCase { feeder, model, lib }
}

fn radial_band(fc: &FeederCase, out: &mut Option<FeederRun>) -> Check {
    let vm = |s: &optikron::Scenario| {
        s.v.iter()
            .map(|v| v.norm())
            .fold((f64::INFINITY, 0.0_f64), |(a, b), x| (a.min(x), b.max(x)))
    };
    let (lo, _) = vm(&fc.lib.scenarios[0]);
    let (_, hi) = vm(&fc.lib.scenarios[1]);
    let r = feeder_run(&fc.feeder, &fc.model, &fc.lib, 0.25)?;
    let iterations = r.reduced.iterations.len();
    let pct = r.reduced.reduction_pct();
    let worst = r.report.worst_case;
    let detail = format!(
        "{} buses, |V| {lo:.3}..{hi:.3} pu; {iterations} iterations, {pct:.1}% reduction, worst sweep error {:.2} mpu, {} diverged, {:.1} s",
        fc.model.n(),
        worst * 1e3,
        r.report.diverged(),
        r.elapsed.as_secs_f64()
    );
    let ok = iterations <= 15
        && pct >= 70.0
        && worst <= 0.015
        && r.report.diverged() == 0
        && r.elapsed.as_secs_f64() <= 60.0;
    *out = Some(r);
    ensure(ok, || detail.clone())?;
    Ok(detail)
}

fn beta_shape(fc: &FeederCase, at_quarter: Option<&FeederRun>) -> Check {
    let mut rows = Vec::new();
    for beta in [0.10, 0.25, 0.50, 0.75] {
        let (iterations, pct) = match at_quarter {
            Some(r) if beta == 0.25 => (r.reduced.iterations.len(), r.reduced.reduction_pct()),
            _ => {
                let r = feeder_run(&fc.feeder, &fc.model, &fc.lib, beta)?;
                (r.reduced.iterations.len(), r.reduced.reduction_pct())
            }
        };
        rows.push((beta, iterations, pct));
    }
    let detail = rows
        .iter()
        .map(|(b, i, p)| format!("beta {b}: {i} it, {p:.1}%"))
        .collect::<Vec<_>>()
        .join("; ");
    let (_, it0, pct0) = rows[0];
    let ok = rows.iter().all(|&(_, i, p)| i <= it0 && p >= pct0);
    ensure(ok, || detail.clone())?;
    Ok(detail)
}

fn budget_monotone() -> Check {
    let mut r = common::rng(8);
    let mut steps = 0;
    for k in 0..10 {
        let n = r.gen_range(4..=8);
        let seed = r.gen();
        let mut last = f64::INFINITY;
        for beta in [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0] {
            let model = common::small_model(seed, n, 2, &common::config(0.5, beta));
            let obj = enumeration_oracle(&model)
                .map_err(|e| e.to_string())?
                .objective;
            ensure(obj <= last, || {
                format!("instance {k}: beta {beta} gives {obj:e} after {last:e}")
            })?;
            steps += usize::from(obj < last && last.is_finite());
            last = obj;
        }
    }
    Ok(format!(
        "10 instances over 11 budgets, {steps} strict improvements"
    ))
}

fn determinism(fc: &FeederCase, first: Option<&FeederRun>) -> Check {
    let a = match first {
        Some(r) => reduced_to_string(&r.reduced),
        None => reduced_to_string(&feeder_run(&fc.feeder, &fc.model, &fc.lib, 0.25)?.reduced),
    };
    let b = reduced_to_string(&feeder_run(&fc.feeder, &fc.model, &fc.lib, 0.25)?.reduced);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (pa, pb) = (dir.path().join("a.json"), dir.path().join("b.json"));
    std::fs::write(&pa, &a).map_err(|e| e.to_string())?;
    std::fs::write(&pb, &b).map_err(|e| e.to_string())?;
    let same = std::fs::read(&pa).map_err(|e| e.to_string())?
        == std::fs::read(&pb).map_err(|e| e.to_string())?;
    ensure(same, || "reduced files differ".into())?;
    Ok(format!("two {}-byte files identical", a.len()))
}

fn mesh_smoke() -> Check {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/case200_activsg.m");
    let case = load_case(&path, &MatpowerOptions::default()).map_err(|e| e.to_string())?;
    let model = AdmittanceModel::build(&case).map_err(|e| e.to_string())?;
    let high = InjectionSpec::from_case("nominal", &case);
    let mut low = high.clone();
    low.id = "light".into();
    low.power.iter_mut().for_each(|p| *p *= 0.5);
    let solved = |spec: &InjectionSpec| {
        solve_powerflow(&model, spec)
            .map(|s| s.into_scenario(&spec.id))
            .map_err(|e| e.to_string())
    };
    let lib = ScenarioLibrary::new(vec![solved(&low)?, solved(&high)?]);
    let protected = protected_buses(&model, &ProtectPolicy::SlackPv).map_err(|e| e.to_string())?;
    let config = MilpConfig {
        alpha: 0.045,
        beta: 0.25,
        binary_cap: 2000,
        ..MilpConfig::default()
    };
    let started = Instant::now();
    let reduced = run(
        &model,
        &lib,
        &config,
        &protected,
        &BuiltinBackend,
        RunOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let report = sweep_errors(
        &model,
        &reduced,
        &low,
        &high,
        &lambda_grid(21),
        SweepMode::Resolve,
    )
    .map_err(|e| e.to_string())?;
    let pq = pq_reduction_pct(&model, &reduced);
    let detail = format!(
        "{} buses ({} protected); {} iterations, {pq:.1}% of PQ buses reduced, worst sweep error {:.2} mpu, {} diverged, {:.1} s",
        model.n(),
        protected.len(),
        reduced.iterations.len(),
        report.worst_case * 1e3,
        report.diverged(),
        started.elapsed().as_secs_f64()
    );
    ensure(
        pq >= 50.0 && report.worst_case <= 0.03 && report.diverged() == 0,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn main() -> ExitCode {
    // keep panics from individual checks on a single report line
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    let mut report = |number: usize, name: &str, check: &mut dyn FnMut() -> Check| {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {number:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failures += 1;
                println!("criterion {number:>2} FAIL  {name}: {detail} [{secs:.1} s]");
            }
        }
    };

    report(
        1,
        "Schur inverse equals impedance submatrix",
        &mut remark_one,
    );
    report(2, "selection absorbs assignment", &mut lemma_one);
    report(
        3,
        "big-M program and exact objective share optima",
        &mut lemma_two,
    );
    report(
        4,
        "exact at zero reduced injection",
        &mut zero_injection_exactness,
    );
    report(5, "builtin solver equals enumeration", &mut builtin_oracle);

    let fc = feeder_case();
    let mut quarter = None;
    report(6, "radial feeder band", &mut || {
        radial_band(&fc, &mut quarter)
    });
    report(7, "beta sensitivity shape", &mut || {
        beta_shape(&fc, quarter.as_ref())
    });
    report(8, "budget monotonicity", &mut budget_monotone);
    report(9, "determinism", &mut || determinism(&fc, quarter.as_ref()));
    report(10, "200-bus mesh smoke test", &mut mesh_smoke);

    if failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
