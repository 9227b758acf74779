use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{objective_value, MilpConfig};
use crate::error::{Error, Result};
use crate::kron::{aggregate_currents, Assignment};
use crate::linalg::{self, CMatrix};
use crate::network::{AdjacencyMask, AdmittanceModel};
use crate::powerflow::ScenarioLibrary;

/// One solve of the reduction program on the current (possibly already
/// reduced) network.
#[derive(Clone, Debug)]
pub struct MilpModel {
    pub n: usize,
    pub zbus: CMatrix,
    /// Per scenario, current injections of the `n` current nodes.
    pub currents: Vec<Vec<Complex64>>,
    /// Per scenario, the voltages deviations are measured against.
    pub reference: Vec<Vec<Complex64>>,
    /// For each node, the indices into `reference` it must stay close to.
    pub members: Vec<Vec<usize>>,
    /// For each column `k`, the rows that may receive its current; `k` first,
    /// then neighbors ascending.
    pub candidates: Vec<Vec<usize>>,
    pub protected: Vec<bool>,
    /// Largest number of eliminations allowed in this solve.
    pub budget: usize,
    pub config: MilpConfig,
    /// `[re_min, re_max, im_min, im_max]` of member references, indexed by
    /// `s * n + k`.
    ranges: Vec<[f64; 4]>,
}

/// Real/imaginary split of the model data.
#[derive(Clone, Debug)]
pub struct RectangularBlocks {
    pub z_g: DMatrix<f64>,
    pub z_b: DMatrix<f64>,
    pub v_r: Vec<Vec<f64>>,
    pub v_i: Vec<Vec<f64>>,
    pub i_r: Vec<Vec<f64>>,
    pub i_i: Vec<Vec<f64>>,
}

/// Exact value of one assignment under the model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub delta: f64,
    pub reductions: usize,
    pub objective: f64,
    /// `δ ≤ γ`.
    pub feasible: bool,
}

/// First-iteration model straight from the network and scenario library.
/// `protected` holds internal bus indices; the slack is always added.
pub fn build_model(
    network: &AdmittanceModel,
    scenarios: &ScenarioLibrary,
    protected: &[usize],
    config: &MilpConfig,
) -> Result<MilpModel> {
    let n = network.n();
    let mut mask = vec![false; n];
    mask[network.slack] = true;
    for &p in protected {
        if p >= n {
            return Err(Error::InvalidConfig(format!(
                "protected bus index {p} out of range"
            )));
        }
        mask[p] = true;
    }
    let currents: Vec<Vec<Complex64>> = scenarios.scenarios.iter().map(|s| s.i.clone()).collect();
    let reference = currents
        .iter()
        .map(|i| linalg::matvec(&network.zbus, i))
        .collect();
    MilpModel::new(
        network.zbus.clone(),
        &network.adjacency,
        currents,
        reference,
        (0..n).map(|k| vec![k]).collect(),
        mask,
        config,
    )
}

impl MilpModel {
    pub fn new(
        zbus: CMatrix,
        adjacency: &AdjacencyMask,
        currents: Vec<Vec<Complex64>>,
        reference: Vec<Vec<Complex64>>,
        members: Vec<Vec<usize>>,
        protected: Vec<bool>,
        config: &MilpConfig,
    ) -> Result<Self> {
        config.validate()?;
        let n = zbus.nrows();
        if currents.is_empty() {
            return Err(Error::EmptyScenarioLibrary);
        }
        if zbus.ncols() != n || adjacency.n() != n || members.len() != n || protected.len() != n {
            return Err(Error::Dimension(
                "model inputs disagree on the node count".into(),
            ));
        }
        if reference.len() != currents.len() || currents.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension(
                "scenario currents must have one entry per node".into(),
            ));
        }
        for (k, m) in members.iter().enumerate() {
            if m.is_empty() {
                return Err(Error::Dimension(format!("node {k} has an empty cluster")));
            }
            if reference.iter().any(|r| m.iter().any(|&u| u >= r.len())) {
                return Err(Error::Dimension(format!(
                    "cluster of node {k} points outside the reference"
                )));
            }
        }
        if protected.iter().all(|&p| p) {
            log::warn!("every bus is protected; only the identity decision is feasible");
        }
        let candidates = (0..n)
            .map(|k| {
                let mut rows = vec![k];
                rows.extend(adjacency.neighbors(k));
                rows
            })
            .collect();
        let mut ranges = Vec::with_capacity(currents.len() * n);
        for r in &reference {
            for m in &members {
                let mut b = [
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                ];
                for &u in m {
                    b[0] = b[0].min(r[u].re);
                    b[1] = b[1].max(r[u].re);
                    b[2] = b[2].min(r[u].im);
                    b[3] = b[3].max(r[u].im);
                }
                ranges.push(b);
            }
        }
        Ok(MilpModel {
            n,
            zbus,
            currents,
            reference,
            members,
            candidates,
            protected,
            budget: config.budget(n),
            config: config.clone(),
            ranges,
        })
    }

    pub fn scenarios(&self) -> usize {
        self.currents.len()
    }

    /// One binary per adjacency-true `(row, column)` pair.
    pub fn num_binaries(&self) -> usize {
        self.candidates.iter().map(Vec::len).sum()
    }

    /// All `(t, k)` pairs carrying a binary, column-major.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.candidates
            .iter()
            .enumerate()
            .flat_map(|(k, rows)| rows.iter().map(move |&t| (t, k)))
    }

    pub(crate) fn range(&self, s: usize, k: usize) -> &[f64; 4] {
        &self.ranges[s * self.n + k]
    }

    /// Largest componentwise gap between `v` and the references of `k`'s
    /// members.
    pub fn pair_deviation(&self, v: Complex64, s: usize, k: usize) -> f64 {
        let r = self.range(s, k);
        (v.re - r[0])
            .max(r[1] - v.re)
            .max(v.im - r[2])
            .max(r[3] - v.im)
    }

    /// `Ṽ = Z A I` for scenario `s`, without the `S` mask.
    pub fn tilde_voltages(&self, a: &Assignment, s: usize) -> Vec<Complex64> {
        linalg::matvec(&self.zbus, &aggregate_currents(a, &self.currents[s]))
    }

    /// Structural checks: column one-hot (by construction), row gating,
    /// adjacency, protected buses kept, budget.
    pub fn check_assignment(&self, a: &Assignment) -> Result<()> {
        if a.n() != self.n {
            return Err(Error::Dimension(format!(
                "assignment has {} columns, model {}",
                a.n(),
                self.n
            )));
        }
        a.check_structure()?;
        for k in 0..self.n {
            if !self.candidates[k].contains(&a.target(k)) {
                return Err(Error::InfeasibleAssignment(format!(
                    "column {k} assigned to non-neighbor {}",
                    a.target(k)
                )));
            }
            if self.protected[k] && a.target(k) != k {
                return Err(Error::InfeasibleAssignment(format!(
                    "protected bus {k} reduced"
                )));
            }
        }
        if a.reductions() > self.budget {
            return Err(Error::InfeasibleAssignment(format!(
                "{} reductions exceed the budget of {}",
                a.reductions(),
                self.budget
            )));
        }
        Ok(())
    }

    /// Value of the big-M program at a fixed `A`: the smallest `δ ≥ 0`
    /// satisfying every deviation constraint, active or relaxed by `M`.
    pub fn evaluate(&self, a: &Assignment) -> Result<Evaluation> {
        self.check_assignment(a)?;
        let big_m = self.config.big_m;
        let mut delta = 0.0_f64;
        for s in 0..self.scenarios() {
            let vt = self.tilde_voltages(a, s);
            for (t, k) in self.pairs() {
                let dev = self.pair_deviation(vt[t], s, k);
                if a.target(k) == t {
                    delta = delta.max(dev);
                } else {
                    delta = delta.max(dev - big_m);
                }
            }
        }
        let reductions = a.reductions();
        Ok(Evaluation {
            delta,
            reductions,
            objective: objective_value(delta, reductions, self.config.alpha, self.n),
            feasible: delta <= self.config.gamma,
        })
    }

    pub fn blocks(&self) -> RectangularBlocks {
        let n = self.n;
        let z_g = DMatrix::from_fn(n, n, |i, j| self.zbus[(i, j)].re);
        let z_b = DMatrix::from_fn(n, n, |i, j| self.zbus[(i, j)].im);
        let v: Vec<Vec<Complex64>> = self
            .currents
            .iter()
            .map(|i| linalg::matvec(&self.zbus, i))
            .collect();
        RectangularBlocks {
            z_g,
            z_b,
            v_r: v.iter().map(|x| x.iter().map(|z| z.re).collect()).collect(),
            v_i: v.iter().map(|x| x.iter().map(|z| z.im).collect()).collect(),
            i_r: self
                .currents
                .iter()
                .map(|x| x.iter().map(|z| z.re).collect())
                .collect(),
            i_i: self
                .currents
                .iter()
                .map(|x| x.iter().map(|z| z.im).collect())
                .collect(),
        }
    }
}

impl RectangularBlocks {
    /// `Z_G + j Z_B`.
    pub fn zbus(&self) -> CMatrix {
        CMatrix::from_fn(self.z_g.nrows(), self.z_g.ncols(), |i, j| {
            Complex64::new(self.z_g[(i, j)], self.z_b[(i, j)])
        })
    }

    /// Rectangular product `[Z_G −Z_B; Z_B Z_G]·[x_r; x_i]` for one scenario's currents.
    pub fn voltages(&self, s: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.z_g.nrows();
        let mut vr = vec![0.0; n];
        let mut vi = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                vr[i] += self.z_g[(i, j)] * self.i_r[s][j] - self.z_b[(i, j)] * self.i_i[s][j];
                vi[i] += self.z_b[(i, j)] * self.i_r[s][j] + self.z_g[(i, j)] * self.i_i[s][j];
            }
        }
        (vr, vi)
    }
}
