//! Successive reduction: solve, shrink, repeat until a solve eliminates nothing.

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kron::{aggregate_currents, Assignment};
use crate::linalg::{self, CMatrix};
use crate::milp::{verify_decision, MilpBackend, MilpConfig, MilpModel, SolverStatus, TargetMode};
use crate::network::{AdjacencyMask, AdmittanceModel, BusType};
use crate::powerflow::ScenarioLibrary;
use crate::tolerances::Tolerances;

/// Which buses may never be eliminated.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtectPolicy {
    #[default]
    SlackOnly,
    SlackPv,
    /// External ids; the slack is added regardless.
    Explicit(Vec<u64>),
}

/// Internal indices of protected buses under `policy`, slack included.
pub fn protected_buses(network: &AdmittanceModel, policy: &ProtectPolicy) -> Result<Vec<usize>> {
    let mut out = vec![network.slack];
    match policy {
        ProtectPolicy::SlackOnly => {}
        ProtectPolicy::SlackPv => {
            out.extend((0..network.n()).filter(|&i| network.bus_types[i] == BusType::Pv));
        }
        ProtectPolicy::Explicit(ids) => {
            for &id in ids {
                let i = network.index_of(id).ok_or_else(|| {
                    Error::InvalidConfig(format!("protected bus {id} not in the case"))
                })?;
                out.push(i);
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// One pass of the loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub nodes_before: usize,
    pub nodes_after: usize,
    /// Buses eliminated by this solve.
    pub reduced: usize,
    /// Deviation reported by the solver (pu, componentwise).
    pub delta: f64,
    /// Deviation recomputed from the decision alone.
    pub certified_delta: f64,
    pub objective: f64,
    pub status: SolverStatus,
    pub cumulative_reduction_pct: f64,
    /// Seconds; left out of reduced-network files so they stay reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

impl IterationTrace {
    /// JSON line including the wall time.
    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            #[serde(flatten)]
            trace: &'a IterationTrace,
            wall_time: f64,
        }
        serde_json::to_string(&Line {
            trace: self,
            wall_time: self.wall_time,
        })
        .expect("trace serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub super_node: u64,
    pub members: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCertificate {
    pub scenario: String,
    /// Worst componentwise intra-cluster deviation (pu).
    pub delta: f64,
    /// Worst intra-cluster voltage-magnitude deviation (pu).
    pub magnitude_error: f64,
}

/// Final product of the loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducedNetwork {
    pub original_buses: usize,
    pub kept_ids: Vec<u64>,
    #[serde(with = "crate::case_io::complex_matrix")]
    pub z_kron: CMatrix,
    /// `aggregation[u]` is the super node (external id) absorbing original bus
    /// `bus_ids[u]`.
    pub bus_ids: Vec<u64>,
    pub aggregation: Vec<u64>,
    pub clusters: Vec<Cluster>,
    pub iterations: Vec<IterationTrace>,
    pub certificate: Vec<ScenarioCertificate>,
    pub backend: String,
    pub config: MilpConfig,
    #[serde(default)]
    pub target_reduction: Option<f64>,
}

impl ReducedNetwork {
    pub fn reduction_pct(&self) -> f64 {
        100.0 * (self.original_buses - self.kept_ids.len()) as f64 / self.original_buses as f64
    }

    /// Largest certified componentwise deviation over all scenarios.
    pub fn certified_delta(&self) -> f64 {
        self.certificate.iter().map(|c| c.delta).fold(0.0, f64::max)
    }

    /// Kept buses as internal indices of `network`.
    pub fn kept_indices(&self, network: &AdmittanceModel) -> Result<Vec<usize>> {
        self.kept_ids
            .iter()
            .map(|&id| {
                network
                    .index_of(id)
                    .ok_or_else(|| Error::Dimension(format!("kept bus {id} not in the network")))
            })
            .collect()
    }

    /// Total aggregation map as an assignment over `network`'s buses.
    pub fn total_assignment(&self, network: &AdmittanceModel) -> Result<Assignment> {
        if self.bus_ids != network.bus_ids {
            return Err(Error::Dimension(
                "reduced network was built from a different case".into(),
            ));
        }
        let target = self
            .aggregation
            .iter()
            .map(|&id| {
                network
                    .index_of(id)
                    .ok_or_else(|| Error::Dimension(format!("unknown super node {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Assignment::from_targets(target)
    }
}

/// Data of the current iterate, indexed by position in `keep`.
#[derive(Clone, Debug)]
pub struct ReductionState {
    /// Original indices of the current nodes, ascending.
    pub keep: Vec<usize>,
    pub zbus: CMatrix,
    /// Per scenario, aggregated current at each current node.
    pub currents: Vec<Vec<Complex64>>,
    /// Original buses represented by each current node, ascending.
    pub clusters: Vec<Vec<usize>>,
    pub adjacency: AdjacencyMask,
}

impl ReductionState {
    pub fn initial(network: &AdmittanceModel, scenarios: &ScenarioLibrary) -> Self {
        let n = network.n();
        ReductionState {
            keep: (0..n).collect(),
            zbus: network.zbus.clone(),
            currents: scenarios.scenarios.iter().map(|s| s.i.clone()).collect(),
            clusters: (0..n).map(|u| vec![u]).collect(),
            adjacency: network.adjacency.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.keep.len()
    }

    /// Restricts to the kept nodes of `a`, moves currents with `A`, merges
    /// clusters and contracts the original adjacency over them.
    pub fn apply_decision(
        &self,
        a: &Assignment,
        original: &AdjacencyMask,
    ) -> Result<ReductionState> {
        if a.n() != self.n() {
            return Err(Error::Dimension(
                "decision size differs from the current network".into(),
            ));
        }
        a.check_structure()?;
        let kept = a.kept_indices();
        let mut position = vec![usize::MAX; self.n()];
        for (p, &k) in kept.iter().enumerate() {
            position[k] = p;
        }
        let mut clusters = vec![Vec::new(); kept.len()];
        for k in 0..self.n() {
            clusters[position[a.target(k)]].extend_from_slice(&self.clusters[k]);
        }
        for c in &mut clusters {
            c.sort_unstable();
        }
        let currents = self
            .currents
            .iter()
            .map(|i| {
                let agg = aggregate_currents(a, i);
                kept.iter().map(|&k| agg[k]).collect()
            })
            .collect();
        Ok(ReductionState {
            keep: kept.iter().map(|&k| self.keep[k]).collect(),
            zbus: linalg::select(&self.zbus, &kept, &kept),
            currents,
            adjacency: original.contract(&clusters),
            clusters,
        })
    }

    /// Original bus → original index of its super node.
    pub fn total_targets(&self, n_original: usize) -> Vec<usize> {
        let mut target = vec![usize::MAX; n_original];
        for (p, members) in self.clusters.iter().enumerate() {
            for &u in members {
                target[u] = self.keep[p];
            }
        }
        target
    }
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Stop once this fraction of the original buses is gone.
    pub target_reduction: Option<f64>,
    pub tolerances: Tolerances,
    pub on_iteration: Option<Box<dyn FnMut(&IterationTrace) + 'a>>,
}

/// Runs the loop to convergence and certifies the result on `scenarios`.
pub fn run(
    network: &AdmittanceModel,
    scenarios: &ScenarioLibrary,
    config: &MilpConfig,
    protected: &[usize],
    backend: &dyn MilpBackend,
    mut opts: RunOptions<'_>,
) -> Result<ReducedNetwork> {
    config.validate()?;
    if scenarios.is_empty() {
        return Err(Error::EmptyScenarioLibrary);
    }
    if let Some(t) = opts.target_reduction {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidConfig(format!(
                "target_reduction {t} outside [0, 1]"
            )));
        }
    }
    let n0 = network.n();
    let mut is_protected = vec![false; n0];
    is_protected[network.slack] = true;
    for &p in protected {
        *is_protected
            .get_mut(p)
            .ok_or_else(|| Error::InvalidConfig(format!("protected index {p} out of range")))? =
            true;
    }
    let reference: Vec<Vec<Complex64>> = scenarios
        .scenarios
        .iter()
        .map(|s| linalg::matvec(&network.zbus, &s.i))
        .collect();

    let mut state = ReductionState::initial(network, scenarios);
    let mut traces = Vec::new();
    let mut backend_name = backend.name().to_string();
    for iteration in 1..=n0 {
        let started = Instant::now();
        let (reference_p, members) = match config.targets {
            TargetMode::Composed => (reference.clone(), state.clusters.clone()),
            TargetMode::Immediate => (
                state
                    .currents
                    .iter()
                    .map(|i| linalg::matvec(&state.zbus, i))
                    .collect(),
                (0..state.n()).map(|k| vec![k]).collect(),
            ),
        };
        let model = MilpModel::new(
            state.zbus.clone(),
            &state.adjacency,
            state.currents.clone(),
            reference_p,
            members,
            state.keep.iter().map(|&u| is_protected[u]).collect(),
            config,
        )?;
        let decision = match backend.solve_model(&model) {
            Ok(d) => d,
            Err(Error::Infeasible(msg)) if iteration == 1 => {
                return Err(Error::Infeasible(format!(
                    "{msg} (first solve; try a larger gamma or a smaller beta)"
                )));
            }
            Err(Error::Infeasible(msg)) => {
                log::warn!(
                    "solve {iteration} infeasible ({msg}); stopping with the previous network"
                );
                break;
            }
            Err(e) => return Err(e),
        };
        backend_name = decision.backend.clone();
        let certified = verify_decision(&model, &decision, &opts.tolerances)?;
        let before = state.n();
        if decision.reductions() > 0 {
            state = state.apply_decision(&decision.assignment, &network.adjacency)?;
        }
        let trace = IterationTrace {
            iteration,
            nodes_before: before,
            nodes_after: state.n(),
            reduced: decision.reductions(),
            delta: decision.delta,
            certified_delta: certified,
            objective: decision.objective,
            status: decision.status,
            cumulative_reduction_pct: 100.0 * (n0 - state.n()) as f64 / n0 as f64,
            wall_time: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "iteration {iteration}: {} -> {} nodes, delta {:.4e}",
            trace.nodes_before,
            trace.nodes_after,
            trace.certified_delta
        );
        if let Some(cb) = opts.on_iteration.as_mut() {
            cb(&trace);
        }
        traces.push(trace);
        if decision.reductions() == 0 {
            break;
        }
        if let Some(t) = opts.target_reduction {
            if (n0 - state.n()) as f64 >= t * n0 as f64 {
                break;
            }
        }
    }
    Ok(finish(
        network,
        scenarios,
        &reference,
        state,
        traces,
        backend_name,
        config,
        opts.target_reduction,
    ))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    network: &AdmittanceModel,
    scenarios: &ScenarioLibrary,
    reference: &[Vec<Complex64>],
    state: ReductionState,
    iterations: Vec<IterationTrace>,
    backend: String,
    config: &MilpConfig,
    target_reduction: Option<f64>,
) -> ReducedNetwork {
    let n0 = network.n();
    let ids = &network.bus_ids;
    let certificate = scenarios
        .scenarios
        .iter()
        .zip(&state.currents)
        .zip(reference)
        .map(|((s, i_k), v_ref)| {
            let v_k = linalg::matvec(&state.zbus, i_k);
            let (delta, magnitude_error) = cluster_errors(&v_k, &state.clusters, v_ref);
            ScenarioCertificate {
                scenario: s.id.clone(),
                delta,
                magnitude_error,
            }
        })
        .collect();
    ReducedNetwork {
        original_buses: n0,
        kept_ids: state.keep.iter().map(|&u| ids[u]).collect(),
        bus_ids: ids.clone(),
        aggregation: state
            .total_targets(n0)
            .into_iter()
            .map(|t| ids[t])
            .collect(),
        clusters: state
            .clusters
            .iter()
            .zip(&state.keep)
            .map(|(m, &k)| Cluster {
                super_node: ids[k],
                members: m.iter().map(|&u| ids[u]).collect(),
            })
            .collect(),
        z_kron: state.zbus,
        iterations,
        certificate,
        backend,
        config: config.clone(),
        target_reduction,
    }
}

/// `(componentwise, magnitude)` worst intra-cluster deviation of the super
/// node voltages `v_k` against full-network voltages `v_full`.
pub fn cluster_errors(
    v_k: &[Complex64],
    clusters: &[Vec<usize>],
    v_full: &[Complex64],
) -> (f64, f64) {
    let mut delta = 0.0_f64;
    let mut mag = 0.0_f64;
    for (v, members) in v_k.iter().zip(clusters) {
        for &u in members {
            let d = v - v_full[u];
            delta = delta.max(d.re.abs()).max(d.im.abs());
            mag = mag.max((v.norm() - v_full[u].norm()).abs());
        }
    }
    (delta, mag)
}
