//! AC load flow (Newton-Raphson, polar) and the scenario library built from it.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::network::{AdmittanceModel, BusType, NetworkCase};
use crate::tolerances::Tolerances;

/// Operating point: complex power injections (generation positive) at every
/// bus, voltage magnitude set-points for PV buses and the slack voltage.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionSpec {
    pub id: String,
    pub power: Vec<Complex64>,
    /// Magnitude set-points; read only at PV buses.
    pub vm: Vec<f64>,
    pub slack_voltage: Complex64,
}

impl InjectionSpec {
    pub fn flat(id: impl Into<String>, n: usize) -> Self {
        InjectionSpec {
            id: id.into(),
            power: vec![Complex64::new(0.0, 0.0); n],
            vm: vec![1.0; n],
            slack_voltage: Complex64::new(1.0, 0.0),
        }
    }

    /// Injections and set-points stored on the case buses.
    pub fn from_case(id: impl Into<String>, case: &NetworkCase) -> Self {
        let power = case
            .buses
            .iter()
            .map(|b| b.injection.unwrap_or_default())
            .collect();
        let vm = case.buses.iter().map(|b| b.vm.unwrap_or(1.0)).collect();
        let slack = &case.buses[case.slack_index()];
        InjectionSpec {
            id: id.into(),
            power,
            vm,
            slack_voltage: Complex64::new(slack.vm.unwrap_or(1.0), 0.0),
        }
    }

    pub fn validate(&self, bus_types: &[BusType]) -> Result<()> {
        let n = bus_types.len();
        if self.power.len() != n || self.vm.len() != n {
            return Err(Error::Dimension(format!(
                "injection spec '{}' has {} powers and {} set-points for {n} buses",
                self.id,
                self.power.len(),
                self.vm.len()
            )));
        }
        if self
            .power
            .iter()
            .any(|s| !(s.re.is_finite() && s.im.is_finite()))
        {
            return Err(Error::schema(&self.id, "non-finite power injection"));
        }
        for (i, t) in bus_types.iter().enumerate() {
            if *t == BusType::Pv && !(self.vm[i] > 0.5 && self.vm[i] < 1.5) {
                return Err(Error::schema(
                    format!("{}.vm[{i}]", self.id),
                    "PV magnitude outside (0.5, 1.5) pu",
                ));
            }
        }
        let slack = self.slack_voltage.norm();
        if !(slack > 0.5 && slack < 1.5) {
            return Err(Error::schema(
                format!("{}.slack", self.id),
                "slack magnitude outside (0.5, 1.5) pu",
            ));
        }
        Ok(())
    }
}

/// `(1−λ)·low + λ·high` on powers, set-points and slack voltage.
pub fn interpolate_injections(
    low: &InjectionSpec,
    high: &InjectionSpec,
    lambda: f64,
) -> Result<InjectionSpec> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!(
            "lambda {lambda} outside [0, 1]"
        )));
    }
    if low.power.len() != high.power.len() || low.vm.len() != high.vm.len() {
        return Err(Error::Dimension("injection specs differ in size".into()));
    }
    let mix = |a: Complex64, b: Complex64| a * (1.0 - lambda) + b * lambda;
    Ok(InjectionSpec {
        id: format!("lambda={lambda}"),
        power: low
            .power
            .iter()
            .zip(&high.power)
            .map(|(&a, &b)| mix(a, b))
            .collect(),
        vm: low
            .vm
            .iter()
            .zip(&high.vm)
            .map(|(&a, &b)| a * (1.0 - lambda) + b * lambda)
            .collect(),
        slack_voltage: mix(low.slack_voltage, high.slack_voltage),
    })
}

/// `points` evenly spaced values covering `[0, 1]` with exact endpoints.
pub fn lambda_grid(points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..points)
            .map(|k| k as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// One AC operating point of the full network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    #[serde(with = "crate::case_io::complex_vec")]
    pub v: Vec<Complex64>,
    #[serde(with = "crate::case_io::complex_vec")]
    pub i: Vec<Complex64>,
}

impl Scenario {
    /// Residual `‖Y_b V − I‖_∞`.
    pub fn residual(&self, model: &AdmittanceModel) -> f64 {
        let yv = linalg::matvec(&model.ybus_dense(), &self.v);
        yv.iter()
            .zip(&self.i)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScenarioLibrary {
    pub scenarios: Vec<Scenario>,
}

impl ScenarioLibrary {
    pub fn new(scenarios: Vec<Scenario>) -> Self {
        ScenarioLibrary { scenarios }
    }

    /// Solves one load flow per spec.
    pub fn from_specs(model: &AdmittanceModel, specs: &[InjectionSpec]) -> Result<Self> {
        let scenarios = specs
            .iter()
            .map(|spec| solve_powerflow(model, spec).map(|sol| sol.into_scenario(&spec.id)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ScenarioLibrary { scenarios })
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// Checks dimensions and `‖Y_b V − I‖_∞` for every scenario.
    pub fn check(&self, model: &AdmittanceModel, tol: &Tolerances) -> Result<()> {
        let ybus = model.ybus_dense();
        for s in &self.scenarios {
            if s.v.len() != model.n() || s.i.len() != model.n() {
                return Err(Error::Dimension(format!(
                    "scenario '{}' has {} voltages and {} currents for {} buses",
                    s.id,
                    s.v.len(),
                    s.i.len(),
                    model.n()
                )));
            }
            let yv = linalg::matvec(&ybus, &s.v);
            let residual = yv
                .iter()
                .zip(&s.i)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            if !(residual <= tol.scenario_consistency) {
                return Err(Error::schema(
                    format!("scenario '{}'", s.id),
                    format!("inconsistent with network: |YV - I| = {residual:.3e}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PowerFlowOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            max_iterations: 30,
            tolerance: Tolerances::default().powerflow_mismatch,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PowerFlowSolution {
    pub v: Vec<Complex64>,
    /// `Y_b V`.
    pub i: Vec<Complex64>,
    pub iterations: usize,
    pub mismatch: f64,
}

impl PowerFlowSolution {
    pub fn into_scenario(self, id: &str) -> Scenario {
        Scenario {
            id: id.to_string(),
            v: self.v,
            i: self.i,
        }
    }
}

pub fn solve_powerflow(model: &AdmittanceModel, spec: &InjectionSpec) -> Result<PowerFlowSolution> {
    solve_powerflow_with(model, spec, None, &PowerFlowOptions::default())
}

/// Newton-Raphson in polar form. Starts from `start` or a flat profile; on
/// failure retries once from flat start with damped steps.
pub fn solve_powerflow_with(
    model: &AdmittanceModel,
    spec: &InjectionSpec,
    start: Option<&[Complex64]>,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    spec.validate(&model.bus_types)?;
    let ybus = model.ybus_dense();
    let flat = flat_start(model, spec);
    let v0 = match start {
        Some(v) if v.len() == model.n() => {
            let mut v = v.to_vec();
            enforce_setpoints(&mut v, model, spec);
            v
        }
        Some(_) => return Err(Error::Dimension("start vector length".into())),
        None => flat.clone(),
    };
    match newton(&ybus, model, spec, v0, opts, 1.0, opts.max_iterations) {
        Ok(sol) => Ok(sol),
        Err(first) => {
            log::debug!(
                "power flow '{}' failed ({first}); retrying damped from flat start",
                spec.id
            );
            newton(&ybus, model, spec, flat, opts, 0.5, 4 * opts.max_iterations)
        }
    }
}

fn flat_start(model: &AdmittanceModel, spec: &InjectionSpec) -> Vec<Complex64> {
    let mut v = vec![Complex64::new(1.0, 0.0); model.n()];
    enforce_setpoints(&mut v, model, spec);
    v
}

fn enforce_setpoints(v: &mut [Complex64], model: &AdmittanceModel, spec: &InjectionSpec) {
    let angle0 = spec.slack_voltage.arg();
    for (i, t) in model.bus_types.iter().enumerate() {
        match t {
            BusType::Slack => v[i] = spec.slack_voltage,
            BusType::Pv => {
                let angle = if v[i].norm() > 0.0 {
                    v[i].arg()
                } else {
                    angle0
                };
                v[i] = Complex64::from_polar(spec.vm[i], angle);
            }
            BusType::Pq => {
                if v[i].norm() == 0.0 {
                    v[i] = Complex64::from_polar(1.0, angle0);
                }
            }
        }
    }
}

fn newton(
    ybus: &CMatrix,
    model: &AdmittanceModel,
    spec: &InjectionSpec,
    mut v: Vec<Complex64>,
    opts: &PowerFlowOptions,
    damping: f64,
    max_iterations: usize,
) -> Result<PowerFlowSolution> {
    let n = model.n();
    let pvpq: Vec<usize> = (0..n)
        .filter(|&i| model.bus_types[i] != BusType::Slack)
        .collect();
    let pq: Vec<usize> = (0..n)
        .filter(|&i| model.bus_types[i] == BusType::Pq)
        .collect();
    let (npvpq, npq) = (pvpq.len(), pq.len());

    let mut va: Vec<f64> = v.iter().map(|z| z.arg()).collect();
    let mut vm: Vec<f64> = v.iter().map(|z| z.norm()).collect();
    let mut mismatch = f64::INFINITY;

    for iteration in 0..=max_iterations {
        let current = linalg::matvec(ybus, &v);
        let f: Vec<f64> = {
            let mis: Vec<Complex64> = (0..n)
                .map(|i| v[i] * current[i].conj() - spec.power[i])
                .collect();
            pvpq.iter()
                .map(|&i| mis[i].re)
                .chain(pq.iter().map(|&i| mis[i].im))
                .collect()
        };
        mismatch = f.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if !mismatch.is_finite() {
            break;
        }
        if mismatch <= opts.tolerance {
            return Ok(PowerFlowSolution {
                v,
                i: current,
                iterations: iteration,
                mismatch,
            });
        }
        if iteration == max_iterations {
            break;
        }

        let vn: Vec<Complex64> = v.iter().map(|z| z / z.norm()).collect();
        let j = Complex64::new(0.0, 1.0);
        let ds_dva = |a: usize, b: usize| {
            let mut inner = -ybus[(a, b)] * v[b];
            if a == b {
                inner += current[a];
            }
            j * v[a] * inner.conj()
        };
        let ds_dvm = |a: usize, b: usize| {
            let mut val = v[a] * (ybus[(a, b)] * vn[b]).conj();
            if a == b {
                val += current[a].conj() * vn[a];
            }
            val
        };
        let dim = npvpq + npq;
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        for (r, &a) in pvpq.iter().enumerate() {
            for (c, &b) in pvpq.iter().enumerate() {
                jac[(r, c)] = ds_dva(a, b).re;
            }
            for (c, &b) in pq.iter().enumerate() {
                jac[(r, npvpq + c)] = ds_dvm(a, b).re;
            }
        }
        for (r, &a) in pq.iter().enumerate() {
            for (c, &b) in pvpq.iter().enumerate() {
                jac[(npvpq + r, c)] = ds_dva(a, b).im;
            }
            for (c, &b) in pq.iter().enumerate() {
                jac[(npvpq + r, npvpq + c)] = ds_dvm(a, b).im;
            }
        }
        let rhs = DVector::from_iterator(dim, f.iter().map(|x| -x));
        let dx = jac.lu().solve(&rhs).ok_or(Error::PowerFlowDiverged {
            iterations: iteration,
            mismatch,
        })?;
        let step = if damping < 1.0 && mismatch < 1e-4 {
            1.0
        } else {
            damping
        };
        for (r, &a) in pvpq.iter().enumerate() {
            va[a] += step * dx[r];
        }
        for (r, &a) in pq.iter().enumerate() {
            vm[a] += step * dx[npvpq + r];
        }
        for i in 0..n {
            v[i] = Complex64::from_polar(vm[i], va[i]);
        }
    }
    Err(Error::PowerFlowDiverged {
        iterations: max_iterations,
        mismatch,
    })
}

/// How intermediate sweep points are produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// Interpolate power injections and re-solve the load flow.
    #[default]
    Resolve,
    /// Interpolate the endpoint current vectors linearly; `V = Z_b I`.
    LinearCurrents,
}

/// Operating points along the low→high segment, ordered like `grid`.
pub fn sweep_scenarios(
    model: &AdmittanceModel,
    low: &InjectionSpec,
    high: &InjectionSpec,
    grid: &[f64],
    mode: SweepMode,
) -> Vec<Result<Scenario>> {
    match mode {
        SweepMode::Resolve => grid
            .par_iter()
            .map(|&lambda| {
                let spec = interpolate_injections(low, high, lambda)?;
                solve_powerflow(model, &spec).map(|sol| sol.into_scenario(&spec.id))
            })
            .collect(),
        SweepMode::LinearCurrents => {
            let ends =
                solve_powerflow(model, low).and_then(|a| Ok((a, solve_powerflow(model, high)?)));
            let (a, b) = match ends {
                Ok(pair) => pair,
                Err(e) => {
                    let msg = e.to_string();
                    return grid
                        .iter()
                        .map(|_| Err(Error::Singular(msg.clone())))
                        .collect();
                }
            };
            grid.iter()
                .map(|&lambda| {
                    if !(0.0..=1.0).contains(&lambda) {
                        return Err(Error::InvalidConfig(format!(
                            "lambda {lambda} outside [0, 1]"
                        )));
                    }
                    let i: Vec<Complex64> =
                        a.i.iter()
                            .zip(&b.i)
                            .map(|(&x, &y)| x * (1.0 - lambda) + y * lambda)
                            .collect();
                    let v = linalg::matvec(&model.zbus, &i);
                    Ok(Scenario {
                        id: format!("lambda={lambda}"),
                        v,
                        i,
                    })
                })
                .collect()
        }
    }
}
