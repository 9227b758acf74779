use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;

use optikron::case_io::{self, MatpowerOptions};
use optikron::milp::{backend_by_name, build_model, MilpBackend, OracleChecked, SolverStatus};
use optikron::powerflow::{lambda_grid, solve_powerflow, SweepMode};
use optikron::successive::{self, protected_buses, IterationTrace, RunOptions};
use optikron::synth::{radial_feeder, FeederOptions};
use optikron::validation::{self, BetaTable, ErrorReport, SweepSpec};
use optikron::{
    AdmittanceModel, Error, InjectionSpec, MilpConfig, Result, ScenarioLibrary, Tolerances,
};

use crate::SolverArgs;

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn load_model(path: &Path) -> Result<AdmittanceModel> {
    let case = case_io::load_case(path, &MatpowerOptions::default())?;
    AdmittanceModel::build(&case)
}

fn config_of(args: &SolverArgs) -> Result<MilpConfig> {
    let config = MilpConfig {
        alpha: args.alpha,
        beta: args.beta,
        gamma: args.gamma,
        big_m: args.big_m,
        time_limit: args.time_limit,
        mip_gap: args.mip_gap,
        binary_cap: args.binary_cap,
        node_limit: args.node_limit,
        targets: args.targets.into(),
    };
    config.validate()?;
    Ok(config)
}

pub fn import(input: &Path, output: &Path, force_simplify: bool) -> Result<u8> {
    let case = case_io::load_case(input, &MatpowerOptions { force_simplify })?;
    AdmittanceModel::build(&case)?;
    case_io::write_case(output, &case)?;
    println!(
        "{} buses, {} branches -> {}",
        case.n(),
        case.m(),
        output.display()
    );
    Ok(0)
}

pub fn powerflow(case_path: &Path, injections: &[PathBuf], output_dir: &Path) -> Result<u8> {
    let case = case_io::load_case(case_path, &MatpowerOptions::default())?;
    let model = AdmittanceModel::build(&case)?;
    let specs = if injections.is_empty() {
        vec![InjectionSpec::from_case("case", &case)]
    } else {
        injections
            .iter()
            .map(case_io::parse_injections)
            .collect::<Result<Vec<_>>>()?
    };
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    for spec in &specs {
        let sol = solve_powerflow(&model, spec)?;
        let (iterations, mismatch) = (sol.iterations, sol.mismatch);
        let path = output_dir.join(format!("{}.json", spec.id));
        case_io::write_scenario(&path, &sol.into_scenario(&spec.id))?;
        println!(
            "{}: {iterations} iterations, mismatch {mismatch:.2e} -> {}",
            spec.id,
            path.display()
        );
    }
    Ok(0)
}

pub struct ReduceJob {
    pub case: PathBuf,
    pub scenarios: Vec<PathBuf>,
    pub output: PathBuf,
    pub solver: SolverArgs,
    pub target_reduction: Option<f64>,
    pub trace: Option<PathBuf>,
    pub lp_export: Option<PathBuf>,
    pub oracle_check: bool,
}

pub fn reduce(job: &ReduceJob) -> Result<u8> {
    let config = config_of(&job.solver)?;
    let model = load_model(&job.case)?;
    let library = case_io::load_scenarios(&job.scenarios, model.n(), model.slack)?;
    library.check(&model, &Tolerances::default())?;
    let protected = protected_buses(&model, &job.solver.protect)?;
    let backend = backend_by_name(&job.solver.backend)?;
    if let Some(path) = &job.lp_export {
        let lp = build_model(&model, &library, &protected, &config)?.to_linear_program();
        write_text(path, &lp.to_lp_string())?;
    }
    let checked;
    let backend: &dyn MilpBackend = if job.oracle_check {
        checked = OracleChecked {
            inner: backend.as_ref(),
        };
        &checked
    } else {
        backend.as_ref()
    };

    let mut trace_file = job.trace.as_deref().map(create).transpose()?;
    let mut trace_err = None;
    let on_iteration = |t: &IterationTrace| {
        eprintln!(
            "iteration {}: {} -> {} buses, delta {:.3e}, {:?}",
            t.iteration, t.nodes_before, t.nodes_after, t.certified_delta, t.status
        );
        if let Some(f) = trace_file.as_mut() {
            if let Err(e) = writeln!(f, "{}", t.to_json_line()).and_then(|_| f.flush()) {
                trace_err.get_or_insert(e);
            }
        }
    };
    let opts = RunOptions {
        target_reduction: job.target_reduction,
        tolerances: Tolerances::default(),
        on_iteration: Some(Box::new(on_iteration)),
    };
    let reduced = successive::run(&model, &library, &config, &protected, backend, opts)?;
    if let (Some(e), Some(path)) = (trace_err, &job.trace) {
        return Err(Error::io(path, e));
    }
    case_io::write_reduced(&job.output, &reduced)?;
    println!(
        "{} -> {} buses ({:.1}% reduction) in {} iterations, certified delta {:.3e} pu",
        reduced.original_buses,
        reduced.kept_ids.len(),
        reduced.reduction_pct(),
        reduced.iterations.len(),
        reduced.certified_delta()
    );
    if reduced
        .iterations
        .iter()
        .any(|t| t.status == SolverStatus::Timeout)
    {
        eprintln!(
            "{}",
            json!({"warning": "timeout", "message": "a solve hit the time limit; its incumbent was used"})
        );
        return Ok(5);
    }
    Ok(0)
}

pub struct ValidateJob {
    pub case: PathBuf,
    pub low: PathBuf,
    pub high: PathBuf,
    pub points: usize,
    pub mode: SweepMode,
    pub reduced: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub scenarios: Vec<PathBuf>,
    pub table_json: Option<PathBuf>,
    pub table_csv: Option<PathBuf>,
    pub solver: SolverArgs,
}

pub fn validate(job: &ValidateJob) -> Result<u8> {
    if job.reduced.is_none() && job.betas.is_empty() {
        return Err(Error::InvalidConfig(
            "nothing to do: pass --reduced and/or --betas".into(),
        ));
    }
    let model = load_model(&job.case)?;
    let low = case_io::parse_injections(&job.low)?;
    let high = case_io::parse_injections(&job.high)?;
    let grid = lambda_grid(job.points);

    if let Some(path) = &job.reduced {
        let reduced = case_io::read_reduced(path)?;
        let report = validation::sweep_errors(&model, &reduced, &low, &high, &grid, job.mode)?;
        if let Some(out) = &job.output {
            write_text(out, &case_io::to_json(&report))?;
        }
        if let Some(out) = &job.csv {
            report.write_long_csv(create(out)?)?;
        }
        println!(
            "sweep of {} points: worst magnitude error {:.3e} pu, worst componentwise {:.3e} pu, {} diverged",
            report.points.len(),
            report.worst_case,
            report.worst_delta,
            report.diverged()
        );
    }

    if !job.betas.is_empty() {
        let config = config_of(&job.solver)?;
        let library = if job.scenarios.is_empty() {
            ScenarioLibrary::from_specs(&model, &[low.clone(), high.clone()])?
        } else {
            case_io::load_scenarios(&job.scenarios, model.n(), model.slack)?
        };
        let protected = protected_buses(&model, &job.solver.protect)?;
        let backend = backend_by_name(&job.solver.backend)?;
        let alphas = if job.alphas.is_empty() {
            vec![config.alpha]
        } else {
            job.alphas.clone()
        };
        let sweep = SweepSpec {
            low,
            high,
            grid,
            mode: job.mode,
        };
        let table = validation::beta_study(
            &model,
            &library,
            &config,
            &alphas,
            &job.betas,
            &protected,
            backend.as_ref(),
            Some(&sweep),
        );
        if let Some(out) = &job.table_json {
            write_text(out, &case_io::to_json(&table))?;
        }
        if let Some(out) = &job.table_csv {
            table.write_csv(create(out)?)?;
        }
        table.write_csv(std::io::stdout())?;
    }
    Ok(0)
}

pub fn report(
    reduced: &Path,
    sweep: Option<&Path>,
    table: Option<&Path>,
    output: &Path,
) -> Result<u8> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let r = case_io::read_reduced(reduced)?;
    let sweep: Option<ErrorReport> = sweep
        .map(|p| case_io::from_json(&read(p)?, &p.display().to_string()))
        .transpose()?;
    let table: Option<BetaTable> = table
        .map(|p| case_io::from_json(&read(p)?, &p.display().to_string()))
        .transpose()?;
    let summary = json!({
        "original_buses": r.original_buses,
        "kept_buses": r.kept_ids.len(),
        "reduction_pct": r.reduction_pct(),
        "iterations": r.iterations.len(),
        "certified_delta_pu": r.certified_delta(),
        "certificate": r.certificate,
        "backend": r.backend,
        "config": r.config,
        "traces": r.iterations,
        "sweep": sweep.as_ref().map(|s| json!({
            "points": s.points.len(),
            "diverged": s.diverged(),
            "worst_magnitude_error_pu": s.worst_case,
            "worst_componentwise_pu": s.worst_delta,
        })),
        "beta_table": table.as_ref().map(|t| &t.rows),
    });
    write_text(
        output,
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&summary).expect("json")
        ),
    )?;
    println!(
        "{} of {} buses kept ({:.1}% reduction), {} iterations, certified delta {:.3e} pu",
        r.kept_ids.len(),
        r.original_buses,
        r.reduction_pct(),
        r.iterations.len(),
        r.certified_delta()
    );
    if let Some(s) = &sweep {
        println!(
            "sweep worst magnitude error {:.3e} pu over {} points",
            s.worst_case,
            s.points.len()
        );
    }
    Ok(0)
}

pub fn synth(seed: u64, buses: usize, output_dir: &Path) -> Result<u8> {
    let feeder = radial_feeder(&FeederOptions {
        buses,
        seed,
        ..FeederOptions::default()
    })?;
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    case_io::write_case(output_dir.join("feeder.json"), &feeder.case)?;
    case_io::write_injections(output_dir.join("heavy.json"), &feeder.heavy)?;
    case_io::write_injections(output_dir.join("light.json"), &feeder.light)?;
    println!(
        "{buses}-bus feeder (seed {seed}) -> {}",
        output_dir.display()
    );
    Ok(0)
}
