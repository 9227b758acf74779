#![allow(dead_code)]

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use optikron::kron::Assignment;
use optikron::linalg;
use optikron::milp::{build_model, MilpModel};
use optikron::synth::random_connected;
use optikron::{AdmittanceModel, MilpConfig, Scenario, ScenarioLibrary};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Voltages near 1∠0 with the slack pinned; currents follow as `Y_b V`.
pub fn voltage_library(
    rng: &mut impl Rng,
    model: &AdmittanceModel,
    count: usize,
) -> ScenarioLibrary {
    let y = model.ybus_dense();
    let scenarios = (0..count)
        .map(|s| {
            let v: Vec<Complex64> = (0..model.n())
                .map(|u| {
                    if u == model.slack {
                        Complex64::new(1.0, 0.0)
                    } else {
                        Complex64::from_polar(
                            1.0 + rng.gen_range(-0.05..0.05),
                            rng.gen_range(-0.05..0.05),
                        )
                    }
                })
                .collect();
            Scenario {
                id: format!("s{s}"),
                i: linalg::matvec(&y, &v),
                v,
            }
        })
        .collect();
    ScenarioLibrary::new(scenarios)
}

/// Random network of `n` buses with a few chords and `scenarios` operating points.
pub fn small_instance(seed: u64, n: usize, scenarios: usize) -> (AdmittanceModel, ScenarioLibrary) {
    let mut r = rng(seed);
    let extra = r.gen_range(0..=n / 2);
    let case = random_connected(&mut r, n, extra);
    let model = AdmittanceModel::build(&case).unwrap();
    let lib = voltage_library(&mut r, &model, scenarios);
    (model, lib)
}

pub fn small_model(seed: u64, n: usize, scenarios: usize, config: &MilpConfig) -> MilpModel {
    let (model, lib) = small_instance(seed, n, scenarios);
    build_model(&model, &lib, &[], config).unwrap()
}

/// A random decision satisfying column one-hot, row gating, adjacency,
/// protection and budget.
pub fn random_feasible(rng: &mut impl Rng, model: &MilpModel) -> Assignment {
    let n = model.n;
    let mut keep: Vec<bool> = (0..n)
        .map(|k| model.protected[k] || rng.gen_bool(0.5))
        .collect();
    let mut target: Vec<usize> = (0..n).collect();
    let mut used = 0;
    for k in 0..n {
        if keep[k] {
            continue;
        }
        let options: Vec<usize> = model.candidates[k]
            .iter()
            .copied()
            .filter(|&t| t != k && keep[t])
            .collect();
        match options.choose(rng) {
            Some(&t) if used < model.budget => {
                target[k] = t;
                used += 1;
            }
            _ => keep[k] = true,
        }
    }
    Assignment::from_targets(target).unwrap()
}

pub fn config(alpha: f64, beta: f64) -> MilpConfig {
    MilpConfig {
        alpha,
        beta,
        mip_gap: 0.0,
        ..MilpConfig::default()
    }
}
