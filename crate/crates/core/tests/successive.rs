mod common;

use std::cell::RefCell;

use num_complex::Complex64;
use proptest::prelude::*;

use optikron::case_io::{from_json, reduced_to_string};
use optikron::linalg;
use optikron::milp::{MilpModel, SolverStatus};
use optikron::network::AdjacencyMask;
use optikron::successive::{run, IterationTrace, ReductionState};
use optikron::{
    AdmittanceModel, Branch, Bus, BusType, MilpConfig, NetworkCase, ReducedNetwork, RunOptions,
    Scenario, ScenarioLibrary,
};

fn state_model(
    state: &ReductionState,
    network: &AdmittanceModel,
    config: &MilpConfig,
) -> MilpModel {
    let reference = state
        .currents
        .iter()
        .map(|i| linalg::matvec(&state.zbus, i))
        .collect();
    let protected = state.keep.iter().map(|&u| u == network.slack).collect();
    MilpModel::new(
        state.zbus.clone(),
        &state.adjacency,
        state.currents.clone(),
        reference,
        (0..state.n()).map(|k| vec![k]).collect(),
        protected,
        config,
    )
    .unwrap()
}

fn path(n: u64, shunt_at: impl Fn(u64) -> bool) -> NetworkCase {
    let buses = (1..=n)
        .map(|id| {
            let kind = if id == 1 { BusType::Slack } else { BusType::Pq };
            let shunt = if shunt_at(id) {
                Complex64::new(0.0, 0.02)
            } else {
                Complex64::new(0.0, 0.0)
            };
            Bus::new(id, kind).with_shunt(shunt)
        })
        .collect();
    let branches = (1..n)
        .map(|id| Branch::new(id, id + 1, Complex64::new(1.0, -8.0)))
        .collect();
    NetworkCase::new(1.0, buses, branches).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn composed_state_matches_direct_recomputation(seed in any::<u64>(), n in 4usize..=12, dseed in any::<u64>()) {
        let (network, lib) = common::small_instance(seed, n, 2);
        let config = common::config(0.01, 0.5);
        let mut rng = common::rng(dseed);
        let mut state = ReductionState::initial(&network, &lib);
        // independent bookkeeping: original bus -> original index of its super node
        let mut owner: Vec<usize> = (0..n).collect();
        for _ in 0..4 {
            let model = state_model(&state, &network, &config);
            let a = common::random_feasible(&mut rng, &model);
            let next = state.apply_decision(&a, &network.adjacency).unwrap();
            for o in owner.iter_mut() {
                let p = state.keep.binary_search(o).unwrap();
                *o = state.keep[a.target(p)];
            }
            state = next;

            prop_assert_eq!(&state.total_targets(n), &owner);
            prop_assert_eq!(&state.zbus, &linalg::select(&network.zbus, &state.keep, &state.keep));
            for (p, members) in state.clusters.iter().enumerate() {
                prop_assert!(members.contains(&state.keep[p]));
                for &u in members {
                    prop_assert_eq!(owner[u], state.keep[p]);
                }
            }
            prop_assert!(state.keep.contains(&network.slack));
            for (s, sc) in lib.scenarios.iter().enumerate() {
                let total: Complex64 = sc.i.iter().sum();
                let now: Complex64 = state.currents[s].iter().sum();
                prop_assert!((total - now).norm() <= 1e-12 * (1.0 + total.norm()));
                for (p, members) in state.clusters.iter().enumerate() {
                    let direct: Complex64 = members.iter().map(|&u| sc.i[u]).sum();
                    prop_assert!((direct - state.currents[s][p]).norm() <= 1e-12 * (1.0 + direct.norm()));
                }
            }
            let expected = AdjacencyMask::from_edges(
                state.n(),
                (0..state.n()).flat_map(|a| (0..state.n()).map(move |b| (a, b))).filter(|&(a, b)| {
                    state.clusters[a]
                        .iter()
                        .any(|&u| state.clusters[b].iter().any(|&w| network.adjacency.get(u, w)))
                }),
            );
            prop_assert_eq!(&state.adjacency, &expected);
        }
    }

    #[test]
    fn run_invariants(seed in any::<u64>(), n in 4usize..=10, beta in prop::sample::select(vec![0.2, 0.5, 1.0])) {
        let (network, lib) = common::small_instance(seed, n, 2);
        let config = common::config(0.02, beta);
        let reduced = run(&network, &lib, &config, &[], &optikron::milp::BuiltinBackend, RunOptions::default()).unwrap();
        let kept = reduced.kept_indices(&network).unwrap();
        prop_assert_eq!(&reduced.z_kron, &linalg::select(&network.zbus, &kept, &kept));
        prop_assert!(reduced.kept_ids.contains(&network.bus_ids[network.slack]));
        prop_assert!(reduced.iterations.len() <= n);
        for w in reduced.iterations.windows(2) {
            prop_assert!(w[0].reduced > 0);
            prop_assert!(w[1].nodes_before == w[0].nodes_after);
            prop_assert!(w[0].nodes_after < w[0].nodes_before);
        }
        prop_assert_eq!(reduced.iterations.last().unwrap().reduced, 0);
        let mut all: Vec<u64> = reduced.clusters.iter().flat_map(|c| c.members.clone()).collect();
        all.sort_unstable();
        prop_assert_eq!(&all, &network.bus_ids);
        for c in &reduced.clusters {
            prop_assert!(c.members.contains(&c.super_node));
            for m in &c.members {
                let u = network.index_of(*m).unwrap();
                prop_assert_eq!(reduced.aggregation[u], c.super_node);
            }
        }
        let a = reduced.total_assignment(&network).unwrap();
        for sc in &lib.scenarios {
            let before: Complex64 = sc.i.iter().sum();
            let after: Complex64 = optikron::kron::aggregate_currents(&a, &sc.i).iter().sum();
            prop_assert!((before - after).norm() <= 1e-12 * (1.0 + before.norm()));
        }
        let back: ReducedNetwork = from_json(&reduced_to_string(&reduced), "mem").unwrap();
        let mut timeless = reduced.clone();
        timeless.iterations.iter_mut().for_each(|t| t.wall_time = 0.0);
        prop_assert_eq!(back, timeless);
    }
}

#[test]
fn zero_budget_stops_after_one_identity_solve() {
    let (network, lib) = common::small_instance(5, 8, 2);
    let reduced = run(
        &network,
        &lib,
        &common::config(0.5, 0.0),
        &[],
        &optikron::milp::BuiltinBackend,
        RunOptions::default(),
    )
    .unwrap();
    assert_eq!(reduced.iterations.len(), 1);
    assert_eq!(reduced.kept_ids, network.bus_ids);
    assert_eq!(reduced.z_kron, network.zbus);
    assert_eq!(reduced.certified_delta(), 0.0);
}

#[test]
fn vanishing_gamma_reduces_nothing() {
    let (network, lib) = common::small_instance(9, 8, 2);
    let config = MilpConfig {
        gamma: 1e-12,
        ..common::config(0.5, 0.5)
    };
    let reduced = run(
        &network,
        &lib,
        &config,
        &[],
        &optikron::milp::BuiltinBackend,
        RunOptions::default(),
    )
    .unwrap();
    assert_eq!(reduced.iterations.len(), 1);
    assert_eq!(reduced.iterations[0].reduced, 0);
}

#[test]
fn equal_voltage_leaf_merges_first() {
    // no shunt at the end bus and no current there: V_6 = V_5 exactly
    let case = path(6, |id| id != 6);
    let network = AdmittanceModel::build(&case).unwrap();
    let mut rng = common::rng(2);
    let scenarios = (0..2)
        .map(|s| {
            let mut i: Vec<Complex64> = (0..6)
                .map(|_| {
                    Complex64::new(
                        rand::Rng::gen_range(&mut rng, -0.5..0.5),
                        rand::Rng::gen_range(&mut rng, -0.5..0.5),
                    )
                })
                .collect();
            i[5] = Complex64::new(0.0, 0.0);
            Scenario {
                id: format!("s{s}"),
                v: linalg::matvec(&network.zbus, &i),
                i,
            }
        })
        .collect();
    let lib = ScenarioLibrary::new(scenarios);
    let traces = RefCell::new(Vec::<IterationTrace>::new());
    let opts = RunOptions {
        on_iteration: Some(Box::new(|t: &IterationTrace| {
            traces.borrow_mut().push(t.clone())
        })),
        ..RunOptions::default()
    };
    let reduced = run(
        &network,
        &lib,
        &common::config(1e-3, 0.5),
        &[],
        &optikron::milp::BuiltinBackend,
        opts,
    )
    .unwrap();
    let traces = traces.into_inner();
    assert_eq!(traces[0].reduced, 1);
    assert_eq!(traces.last().unwrap().reduced, 0);
    assert_eq!(reduced.aggregation[5], 5);
    assert!(reduced.certified_delta() < 1e-12);
}

#[test]
fn merging_a_leaf_on_path4_leaves_path3() {
    let network = AdmittanceModel::build(&path(4, |_| true)).unwrap();
    let lib = common::voltage_library(&mut common::rng(1), &network, 1);
    let state = ReductionState::initial(&network, &lib);
    let a = optikron::Assignment::from_targets(vec![0, 1, 2, 2]).unwrap();
    let next = state.apply_decision(&a, &network.adjacency).unwrap();
    let path3 = AdjacencyMask::from_edges(3, [(0, 1), (1, 2)]);
    assert_eq!(next.adjacency, path3);
    assert_eq!(next.clusters, vec![vec![0], vec![1], vec![2, 3]]);
}

#[test]
fn identity_decision_leaves_state_unchanged() {
    let (network, lib) = common::small_instance(17, 7, 2);
    let state = ReductionState::initial(&network, &lib);
    let next = state
        .apply_decision(&optikron::Assignment::identity(7), &network.adjacency)
        .unwrap();
    assert_eq!(next.keep, state.keep);
    assert_eq!(next.zbus, state.zbus);
    assert_eq!(next.currents, state.currents);
    assert_eq!(next.clusters, state.clusters);
    assert_eq!(next.adjacency, state.adjacency);
}

#[test]
fn target_reduction_stops_early() {
    let (network, lib) = common::small_instance(12, 12, 2);
    let config = common::config(1.0, 0.25);
    let full = run(
        &network,
        &lib,
        &config,
        &[],
        &optikron::milp::BuiltinBackend,
        RunOptions::default(),
    )
    .unwrap();
    let opts = RunOptions {
        target_reduction: Some(0.2),
        ..RunOptions::default()
    };
    let early = run(
        &network,
        &lib,
        &config,
        &[],
        &optikron::milp::BuiltinBackend,
        opts,
    )
    .unwrap();
    assert!(early.iterations.len() <= full.iterations.len());
    assert!(early.reduction_pct() >= 20.0 || early.iterations.last().unwrap().reduced == 0);
    assert!(early
        .iterations
        .iter()
        .all(|t| t.status == SolverStatus::Optimal));
}

#[test]
fn trace_lines_carry_wall_time() {
    let (network, lib) = common::small_instance(3, 6, 1);
    let reduced = run(
        &network,
        &lib,
        &common::config(0.05, 0.5),
        &[],
        &optikron::milp::BuiltinBackend,
        RunOptions::default(),
    )
    .unwrap();
    let line: serde_json::Value =
        serde_json::from_str(&reduced.iterations[0].to_json_line()).unwrap();
    assert!(line["wall_time"].is_number());
    assert_eq!(line["iteration"], 1);
    assert!(!reduced_to_string(&reduced).contains("wall_time"));
}
