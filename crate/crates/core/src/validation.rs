//! Error certificates of reduced networks over load sweeps, and the β study.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kron::{aggregate_currents, Assignment};
use crate::linalg;
use crate::milp::{MilpBackend, MilpConfig};
use crate::network::{AdmittanceModel, BusType};
use crate::powerflow::{sweep_scenarios, InjectionSpec, Scenario, ScenarioLibrary, SweepMode};
use crate::successive::{self, ReducedNetwork, RunOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    /// Per super node, worst `| |V_K,i| − |V_u| |` over its members (pu);
    /// `None` when the load flow diverged.
    pub errors: Option<Vec<f64>>,
    pub worst: Option<f64>,
    /// Worst componentwise deviation at this point (pu).
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub super_nodes: Vec<u64>,
    pub points: Vec<SweepPoint>,
    pub worst_case: f64,
    pub worst_delta: f64,
    pub reduction_pct: f64,
    pub iterations: usize,
    /// Sum of the recorded iteration times; not written to disk.
    #[serde(skip)]
    pub wall_time: f64,
}

impl ErrorReport {
    pub fn diverged(&self) -> usize {
        self.points.iter().filter(|p| p.errors.is_none()).count()
    }

    /// Long-format CSV `lambda,super_node,error_pu`.
    pub fn write_long_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::schema("csv", e.to_string());
        w.write_record(["lambda", "super_node", "error_pu"])
            .map_err(csv_err)?;
        for p in &self.points {
            match &p.errors {
                Some(errs) => {
                    for (id, e) in self.super_nodes.iter().zip(errs) {
                        w.write_record([p.lambda.to_string(), id.to_string(), e.to_string()])
                            .map_err(csv_err)?;
                    }
                }
                None => {
                    for id in &self.super_nodes {
                        w.write_record([p.lambda.to_string(), id.to_string(), "diverged".into()])
                            .map_err(csv_err)?;
                    }
                }
            }
        }
        w.flush().map_err(|e| Error::io("csv", e))?;
        Ok(())
    }
}

/// Reduced-network quantities needed to score one operating point.
struct Scorer<'a> {
    full: &'a AdmittanceModel,
    reduced: &'a ReducedNetwork,
    total: Assignment,
    kept: Vec<usize>,
    clusters: Vec<Vec<usize>>,
}

impl<'a> Scorer<'a> {
    fn new(full: &'a AdmittanceModel, reduced: &'a ReducedNetwork) -> Result<Self> {
        let total = reduced.total_assignment(full)?;
        let kept = reduced.kept_indices(full)?;
        if reduced.z_kron.nrows() != kept.len() {
            return Err(Error::Dimension(
                "Z_K size differs from the kept-bus count".into(),
            ));
        }
        let mut position = vec![usize::MAX; full.n()];
        for (p, &k) in kept.iter().enumerate() {
            position[k] = p;
        }
        let mut clusters = vec![Vec::new(); kept.len()];
        for u in 0..full.n() {
            let p = position[total.target(u)];
            if p == usize::MAX {
                return Err(Error::InfeasibleAssignment(format!(
                    "bus {u} maps to a reduced bus"
                )));
            }
            clusters[p].push(u);
        }
        Ok(Scorer {
            full,
            reduced,
            total,
            kept,
            clusters,
        })
    }

    /// Per-super-node magnitude errors and the componentwise worst case.
    fn score(&self, currents: &[Complex64]) -> (Vec<f64>, f64) {
        let agg = aggregate_currents(&self.total, currents);
        let i_k: Vec<Complex64> = self.kept.iter().map(|&k| agg[k]).collect();
        let v_k = linalg::matvec(&self.reduced.z_kron, &i_k);
        let v_full = linalg::matvec(&self.full.zbus, currents);
        let mut delta = 0.0_f64;
        let errors = v_k
            .iter()
            .zip(&self.clusters)
            .map(|(v, members)| {
                members.iter().fold(0.0_f64, |m, &u| {
                    let d = v - v_full[u];
                    delta = delta.max(d.re.abs()).max(d.im.abs());
                    m.max((v.norm() - v_full[u].norm()).abs())
                })
            })
            .collect();
        (errors, delta)
    }
}

fn report(reduced: &ReducedNetwork, points: Vec<SweepPoint>) -> ErrorReport {
    let worst_case = points.iter().filter_map(|p| p.worst).fold(0.0, f64::max);
    let worst_delta = points.iter().filter_map(|p| p.delta).fold(0.0, f64::max);
    ErrorReport {
        super_nodes: reduced.kept_ids.clone(),
        points,
        worst_case,
        worst_delta,
        reduction_pct: reduced.reduction_pct(),
        iterations: reduced.iterations.len(),
        wall_time: reduced.iterations.iter().map(|t| t.wall_time).sum(),
    }
}

/// Re-solves the full network along the low→high sweep and scores the reduced
/// network at every point. Divergent points are recorded, not fatal.
pub fn sweep_errors(
    full: &AdmittanceModel,
    reduced: &ReducedNetwork,
    low: &InjectionSpec,
    high: &InjectionSpec,
    grid: &[f64],
    mode: SweepMode,
) -> Result<ErrorReport> {
    let scorer = Scorer::new(full, reduced)?;
    let solved = sweep_scenarios(full, low, high, grid, mode);
    let points = grid
        .iter()
        .zip(solved)
        .map(|(&lambda, s)| match s {
            Ok(s) => {
                let (errors, delta) = scorer.score(&s.i);
                let worst = errors.iter().copied().fold(0.0, f64::max);
                SweepPoint {
                    lambda,
                    errors: Some(errors),
                    worst: Some(worst),
                    delta: Some(delta),
                }
            }
            Err(e) => {
                log::warn!("lambda {lambda}: {e}");
                SweepPoint {
                    lambda,
                    errors: None,
                    worst: None,
                    delta: None,
                }
            }
        })
        .collect();
    Ok(report(reduced, points))
}

/// Scores the reduced network on given scenarios; `lambda` holds the
/// scenario position.
pub fn scenario_errors(
    full: &AdmittanceModel,
    reduced: &ReducedNetwork,
    scenarios: &[Scenario],
) -> Result<ErrorReport> {
    let scorer = Scorer::new(full, reduced)?;
    let points = scenarios
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let (errors, delta) = scorer.score(&s.i);
            let worst = errors.iter().copied().fold(0.0, f64::max);
            SweepPoint {
                lambda: k as f64,
                errors: Some(errors),
                worst: Some(worst),
                delta: Some(delta),
            }
        })
        .collect();
    Ok(report(reduced, points))
}

/// Operating-condition sweep used to score each cell of a β study.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub low: InjectionSpec,
    pub high: InjectionSpec,
    pub grid: Vec<f64>,
    pub mode: SweepMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub alpha: f64,
    pub beta: f64,
    pub iterations: Option<usize>,
    pub reduction_pct: Option<f64>,
    pub pq_reduction_pct: Option<f64>,
    /// Worst magnitude error in milli-pu (sweep when given, else the library).
    pub worst_error_mpu: Option<f64>,
    pub certified_delta_mpu: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BetaTable {
    pub rows: Vec<BetaRow>,
}

impl BetaTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::schema("csv", e.to_string());
        w.write_record([
            "alpha",
            "beta",
            "iterations",
            "reduction_pct",
            "pq_reduction_pct",
            "worst_error_mpu",
            "certified_delta_mpu",
            "error",
        ])
        .map_err(csv_err)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.alpha.to_string(),
                r.beta.to_string(),
                r.iterations.map(|v| v.to_string()).unwrap_or_default(),
                opt(r.reduction_pct),
                opt(r.pq_reduction_pct),
                opt(r.worst_error_mpu),
                opt(r.certified_delta_mpu),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("csv", e))?;
        Ok(())
    }
}

/// Share of PQ buses eliminated, in percent.
pub fn pq_reduction_pct(full: &AdmittanceModel, reduced: &ReducedNetwork) -> f64 {
    let pq: Vec<u64> = (0..full.n())
        .filter(|&i| full.bus_types[i] == BusType::Pq)
        .map(|i| full.bus_ids[i])
        .collect();
    if pq.is_empty() {
        return 0.0;
    }
    let gone = pq
        .iter()
        .filter(|id| reduced.kept_ids.binary_search(id).is_err())
        .count();
    100.0 * gone as f64 / pq.len() as f64
}

/// Runs the successive reduction for every (α, β) cell; failures are kept in
/// the table instead of aborting the study.
#[allow(clippy::too_many_arguments)]
pub fn beta_study(
    network: &AdmittanceModel,
    scenarios: &ScenarioLibrary,
    base: &MilpConfig,
    alphas: &[f64],
    betas: &[f64],
    protected: &[usize],
    backend: &dyn MilpBackend,
    sweep: Option<&SweepSpec>,
) -> BetaTable {
    let mut rows = Vec::new();
    for &alpha in alphas {
        for &beta in betas {
            let config = MilpConfig {
                alpha,
                beta,
                ..base.clone()
            };
            let cell = successive::run(
                network,
                scenarios,
                &config,
                protected,
                backend,
                RunOptions::default(),
            )
            .and_then(|reduced| {
                let worst = match sweep {
                    Some(sw) => {
                        sweep_errors(network, &reduced, &sw.low, &sw.high, &sw.grid, sw.mode)?
                            .worst_case
                    }
                    None => reduced
                        .certificate
                        .iter()
                        .map(|c| c.magnitude_error)
                        .fold(0.0, f64::max),
                };
                Ok((reduced, worst))
            });
            rows.push(match cell {
                Ok((reduced, worst)) => BetaRow {
                    alpha,
                    beta,
                    iterations: Some(reduced.iterations.len()),
                    reduction_pct: Some(reduced.reduction_pct()),
                    pq_reduction_pct: Some(pq_reduction_pct(network, &reduced)),
                    worst_error_mpu: Some(worst * 1e3),
                    certified_delta_mpu: Some(reduced.certified_delta() * 1e3),
                    error: None,
                },
                Err(e) => BetaRow {
                    alpha,
                    beta,
                    iterations: None,
                    reduction_pct: None,
                    pq_reduction_pct: None,
                    worst_error_mpu: None,
                    certified_delta_mpu: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    BetaTable { rows }
}
