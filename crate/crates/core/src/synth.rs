//! Seeded synthetic networks: a radial distribution feeder with two operating
//! profiles, and random meshed or radial test networks.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{AdmittanceModel, Branch, Bus, BusType, NetworkCase};
use crate::powerflow::{solve_powerflow, InjectionSpec, Scenario, ScenarioLibrary};

/// Radial feeder plus a heavy-load and a light-load/high-PV profile.
#[derive(Clone, Debug)]
pub struct Feeder {
    pub case: NetworkCase,
    pub heavy: InjectionSpec,
    pub light: InjectionSpec,
}

#[derive(Clone, Copy, Debug)]
pub struct FeederOptions {
    pub buses: usize,
    pub seed: u64,
    /// Lowest voltage magnitude reached in the heavy profile.
    pub heavy_min_vm: f64,
    /// Highest voltage magnitude reached in the light profile.
    pub light_max_vm: f64,
}

impl Default for FeederOptions {
    fn default() -> Self {
        FeederOptions {
            buses: 115,
            seed: 123,
            heavy_min_vm: 0.952,
            light_max_vm: 1.045,
        }
    }
}

/// Section impedance; one section in ten is a long run carrying most of the drop.
fn z(rng: &mut ChaCha8Rng, r: f64, x: f64) -> Complex64 {
    let mut s = rng.gen_range(0.6..1.4);
    if rng.gen_bool(0.1) {
        s *= 20.0;
    }
    Complex64::new(r * s, x * s)
}

fn radial_parents(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let trunk = (n / 4).max(2).min(n);
    let mut parent = vec![0; n];
    for (i, p) in parent.iter_mut().enumerate().take(trunk).skip(1) {
        *p = i - 1;
    }
    let mut count = trunk;
    while count < n {
        let attach = rng.gen_range(0..count);
        let len = rng.gen_range(1..=6).min(n - count);
        let mut prev = attach;
        for _ in 0..len {
            parent[count] = prev;
            prev = count;
            count += 1;
        }
    }
    parent
}

fn min_max_vm(model: &AdmittanceModel, spec: &InjectionSpec) -> Result<(f64, f64)> {
    let sol = solve_powerflow(model, spec)?;
    Ok(sol
        .v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.norm()), hi.max(v.norm()))
        }))
}

/// Largest scale in `[0, hi]` for which `ok(scale)` holds, by bisection.
fn bisect(mut hi: f64, mut ok: impl FnMut(f64) -> Result<bool>) -> Result<f64> {
    let mut lo = 0.0;
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Builds the feeder. Load and PV scales are tuned by bisection so the two
/// profiles touch `heavy_min_vm` and `light_max_vm`.
pub fn radial_feeder(opts: &FeederOptions) -> Result<Feeder> {
    let n = opts.buses;
    if n < 3 {
        return Err(Error::InvalidConfig(
            "a feeder needs at least 3 buses".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let parent = radial_parents(&mut rng, n);
    let trunk = (n / 4).max(2);

    let mut buses = Vec::with_capacity(n);
    let mut load = vec![Complex64::new(0.0, 0.0); n];
    let mut pv = vec![Complex64::new(0.0, 0.0); n];
    for (i, l) in load.iter_mut().enumerate() {
        let kind = if i == 0 { BusType::Slack } else { BusType::Pq };
        let b = rng.gen_range(2e-4..8e-4);
        buses.push(Bus::new(i as u64 + 1, kind).with_shunt(Complex64::new(0.0, b)));
        if i > 0 && rng.gen_bool(0.7) {
            let p = rng.gen_range(0.2..1.0);
            *l = Complex64::new(p, 0.45 * p);
        }
    }
    let mut candidates: Vec<usize> = (1..n).collect();
    candidates.shuffle(&mut rng);
    for &i in candidates.iter().take((n / 8).max(1)) {
        pv[i] = Complex64::new(rng.gen_range(0.5..1.5), 0.0);
    }
    let branches = (1..n)
        .map(|i| {
            let zs = if i < trunk {
                z(&mut rng, 0.001, 0.002)
            } else {
                z(&mut rng, 0.001, 0.001)
            };
            Branch::new(parent[i] as u64 + 1, i as u64 + 1, zs.inv())
        })
        .collect();
    let mut case = NetworkCase::new(1.0, buses, branches)?;
    let model = AdmittanceModel::build(&case)?;

    let profile = |id: &str, load_scale: f64, pv_scale: f64| InjectionSpec {
        id: id.to_string(),
        power: load
            .iter()
            .zip(&pv)
            .map(|(&l, &g)| g * pv_scale - l * load_scale)
            .collect(),
        vm: vec![1.0; n],
        slack_voltage: Complex64::new(1.0, 0.0),
    };
    let feasible =
        |spec: &InjectionSpec, f: &dyn Fn(f64, f64) -> bool| match min_max_vm(&model, spec) {
            Ok((lo, hi)) => Ok(f(lo, hi)),
            Err(Error::PowerFlowDiverged { .. }) => Ok(false),
            Err(e) => Err(e),
        };
    let k_load = bisect(1.0, |k| {
        feasible(&profile("heavy", k, 0.0), &|lo, _| lo >= opts.heavy_min_vm)
    })?;
    let light_load = 0.3 * k_load;
    let k_pv = bisect(1.0, |k| {
        feasible(&profile("light", light_load, k), &|_, hi| {
            hi <= opts.light_max_vm
        })
    })?;
    let heavy = profile("heavy", k_load, 0.0);
    let light = profile("light", light_load, k_pv);
    for (bus, s) in case.buses.iter_mut().zip(&heavy.power) {
        if bus.bus_type != BusType::Slack {
            bus.injection = Some(*s);
        }
    }
    Ok(Feeder { case, heavy, light })
}

impl Feeder {
    pub fn library(&self) -> Result<ScenarioLibrary> {
        let model = AdmittanceModel::build(&self.case)?;
        ScenarioLibrary::from_specs(&model, &[self.heavy.clone(), self.light.clone()])
    }
}

fn random_bus(rng: &mut impl Rng, id: u64, kind: BusType) -> Bus {
    let shunt = Complex64::new(rng.gen_range(0.0..0.05), rng.gen_range(-0.1..0.1));
    Bus::new(id, kind).with_shunt(shunt)
}

fn random_series(rng: &mut impl Rng) -> Complex64 {
    Complex64::new(rng.gen_range(0.01..0.2), rng.gen_range(0.02..0.5)).inv()
}

/// Random tree plus `extra` chords; shunts have positive conductance so
/// `Y_b` stays invertible. Bus ids are shuffled over `1..=3n`.
pub fn random_connected(rng: &mut impl Rng, n: usize, extra: usize) -> NetworkCase {
    assert!(n >= 2, "need at least two buses");
    let mut ids: Vec<u64> = (1..=3 * n as u64).collect();
    ids.shuffle(rng);
    ids.truncate(n);
    let buses = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| random_bus(rng, id, if i == 0 { BusType::Slack } else { BusType::Pq }))
        .collect();
    let mut branches = Vec::new();
    let mut edges = std::collections::BTreeSet::new();
    for i in 1..n {
        let p = rng.gen_range(0..i);
        edges.insert((p.min(i), p.max(i)));
        branches.push(Branch::new(ids[p], ids[i], random_series(rng)));
    }
    for _ in 0..extra {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b && edges.insert((a.min(b), a.max(b))) {
            branches.push(Branch::new(ids[a], ids[b], random_series(rng)));
        }
    }
    NetworkCase::new(1.0, buses, branches).expect("generated network is valid")
}

pub fn random_radial(rng: &mut impl Rng, n: usize) -> NetworkCase {
    random_connected(rng, n, 0)
}

/// Scenarios with random currents and `V = Z_b I`, consistent by construction.
pub fn random_scenarios(
    rng: &mut impl Rng,
    model: &AdmittanceModel,
    count: usize,
) -> ScenarioLibrary {
    let scenarios = (0..count)
        .map(|s| {
            let i: Vec<Complex64> = (0..model.n())
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            Scenario {
                id: format!("random-{s}"),
                v: linalg::matvec(&model.zbus, &i),
                i,
            }
        })
        .collect();
    ScenarioLibrary::new(scenarios)
}
