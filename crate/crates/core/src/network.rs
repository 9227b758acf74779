//! Graph and electrical description of a single-phase network.
//!
//! Buses are renumbered internally by ascending external id; every matrix in
//! this module is indexed by that internal order.

use nalgebra_sparse::{CooMatrix, CsrMatrix};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::tolerances::{Tolerances, SYNTHETIC_SHUNT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusType {
    Slack,
    Pv,
    Pq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: u64,
    pub bus_type: BusType,
    pub shunt: Complex64,
    /// Net complex power injection (generation minus load) used to seed scenarios.
    pub injection: Option<Complex64>,
    /// Voltage magnitude set-point for slack and PV buses.
    pub vm: Option<f64>,
}

impl Bus {
    pub fn new(id: u64, bus_type: BusType) -> Self {
        Bus {
            id,
            bus_type,
            shunt: Complex64::new(0.0, 0.0),
            injection: None,
            vm: None,
        }
    }

    pub fn with_shunt(mut self, shunt: Complex64) -> Self {
        self.shunt = shunt;
        self
    }

    pub fn with_injection(mut self, injection: Complex64) -> Self {
        self.injection = Some(injection);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub from: u64,
    pub to: u64,
    pub y_series: Complex64,
}

impl Branch {
    pub fn new(from: u64, to: u64, y_series: Complex64) -> Self {
        Branch { from, to, y_series }
    }
}

/// A validated network: unique ids, one slack bus, no dangling branch
/// endpoints, connected branch graph.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub base_kv: Option<f64>,
    /// Sorted by external id; position is the internal index.
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    /// Set when buses received the synthetic shunt to keep `Y_b` invertible.
    pub synthetic_shunt: Option<f64>,
}

impl NetworkCase {
    pub fn new(base_mva: f64, mut buses: Vec<Bus>, branches: Vec<Branch>) -> Result<Self> {
        if !(base_mva.is_finite() && base_mva > 0.0) {
            return Err(Error::schema("base_mva", "must be a positive number"));
        }
        buses.sort_by_key(|b| b.id);
        for pair in buses.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::DuplicateBus(pair[0].id));
            }
        }
        let slacks: Vec<u64> = buses
            .iter()
            .filter(|b| b.bus_type == BusType::Slack)
            .map(|b| b.id)
            .collect();
        match slacks.len() {
            0 => return Err(Error::NoSlack),
            1 => {}
            _ => return Err(Error::MultipleSlack(slacks)),
        }
        let case = NetworkCase {
            base_mva,
            base_kv: None,
            buses,
            branches,
            synthetic_shunt: None,
        };
        let mut components = UnionFind::new(case.n());
        for (k, br) in case.branches.iter().enumerate() {
            let (f, t) = case.endpoints(k)?;
            if f == t {
                return Err(Error::SelfLoop {
                    branch: k,
                    bus: br.from,
                });
            }
            components.union(f, t);
        }
        let count = components.count();
        if count != 1 {
            return Err(Error::Disconnected { components: count });
        }
        Ok(case)
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn m(&self) -> usize {
        self.branches.len()
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.buses.binary_search_by_key(&id, |b| b.id).ok()
    }

    /// Internal indices of branch `k`'s endpoints.
    pub fn endpoints(&self, k: usize) -> Result<(usize, usize)> {
        let br = &self.branches[k];
        let f = self.index_of(br.from).ok_or(Error::DanglingBranch {
            branch: k,
            bus: br.from,
        })?;
        let t = self.index_of(br.to).ok_or(Error::DanglingBranch {
            branch: k,
            bus: br.to,
        })?;
        Ok((f, t))
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.bus_type == BusType::Slack)
            .expect("validated case has a slack bus")
    }

    pub fn bus_ids(&self) -> Vec<u64> {
        self.buses.iter().map(|b| b.id).collect()
    }

    pub fn bus_types(&self) -> Vec<BusType> {
        self.buses.iter().map(|b| b.bus_type).collect()
    }

    /// Gives every shunt-less bus a small capacitive shunt when the case has
    /// no shunt at all. Returns whether anything changed.
    pub fn ensure_shunt_path(&mut self) -> bool {
        if self
            .buses
            .iter()
            .any(|b| b.shunt != Complex64::new(0.0, 0.0))
        {
            return false;
        }
        for bus in &mut self.buses {
            bus.shunt = Complex64::new(0.0, SYNTHETIC_SHUNT);
        }
        self.synthetic_shunt = Some(SYNTHETIC_SHUNT);
        true
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }

    fn count(&mut self) -> usize {
        (0..self.parent.len())
            .filter(|&x| self.find(x) == x)
            .count()
    }
}

/// Boolean support of `|EᵀE|`: true on the diagonal and between buses that
/// share a branch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdjacencyMask {
    n: usize,
    bits: Vec<bool>,
}

impl AdjacencyMask {
    /// Diagonal-only mask.
    pub fn identity(n: usize) -> Self {
        let mut bits = vec![false; n * n];
        for i in 0..n {
            bits[i * n + i] = true;
        }
        AdjacencyMask { n, bits }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut mask = Self::identity(n);
        for (a, b) in edges {
            mask.set(a, b);
        }
        mask
    }

    pub fn set(&mut self, a: usize, b: usize) {
        self.bits[a * self.n + b] = true;
        self.bits[b * self.n + a] = true;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    /// Neighbors of `i`, excluding `i`, ascending.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| j != i && self.get(i, j))
    }

    /// Number of true entries, diagonal included.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Contracts the mask onto clusters: two clusters are adjacent when any
    /// pair of their members is.
    pub fn contract(&self, clusters: &[Vec<usize>]) -> AdjacencyMask {
        let mut owner = vec![usize::MAX; self.n];
        for (c, members) in clusters.iter().enumerate() {
            for &u in members {
                owner[u] = c;
            }
        }
        let mut out = AdjacencyMask::identity(clusters.len());
        for i in 0..self.n {
            for j in self.neighbors(i) {
                let (a, b) = (owner[i], owner[j]);
                if a != usize::MAX && b != usize::MAX && a != b {
                    out.set(a, b);
                }
            }
        }
        out
    }
}

/// Everything derived from a [`NetworkCase`] that the reduction needs.
/// Immutable after construction.
#[derive(Clone, Debug)]
pub struct AdmittanceModel {
    pub bus_ids: Vec<u64>,
    pub bus_types: Vec<BusType>,
    pub slack: usize,
    pub incidence: CsrMatrix<f64>,
    pub line_admittance: Vec<Complex64>,
    pub shunt_admittance: Vec<Complex64>,
    pub ybus: CsrMatrix<Complex64>,
    pub zbus: CMatrix,
    pub adjacency: AdjacencyMask,
}

impl AdmittanceModel {
    pub fn build(case: &NetworkCase) -> Result<Self> {
        Self::build_with(case, &Tolerances::default())
    }

    pub fn build_with(case: &NetworkCase, tol: &Tolerances) -> Result<Self> {
        let incidence = build_incidence(case)?;
        let line_admittance: Vec<Complex64> = case.branches.iter().map(|b| b.y_series).collect();
        let shunt_admittance: Vec<Complex64> = case.buses.iter().map(|b| b.shunt).collect();
        let ybus = build_ybus(&incidence, &line_admittance, &shunt_admittance)?;
        let zbus = invert_ybus_with(&ybus, tol)?;
        let adjacency = adjacency_mask(&incidence);
        Ok(AdmittanceModel {
            bus_ids: case.bus_ids(),
            bus_types: case.bus_types(),
            slack: case.slack_index(),
            incidence,
            line_admittance,
            shunt_admittance,
            ybus,
            zbus,
            adjacency,
        })
    }

    pub fn n(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn m(&self) -> usize {
        self.line_admittance.len()
    }

    pub fn ybus_dense(&self) -> CMatrix {
        linalg::csr_to_dense(&self.ybus)
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.bus_ids.binary_search(&id).ok()
    }
}

/// Signed `m × n` incidence: `+1` at the from-bus, `−1` at the to-bus.
pub fn build_incidence(case: &NetworkCase) -> Result<CsrMatrix<f64>> {
    let mut coo = CooMatrix::new(case.m(), case.n());
    for k in 0..case.m() {
        let (f, t) = case.endpoints(k)?;
        if f == t {
            return Err(Error::SelfLoop {
                branch: k,
                bus: case.branches[k].from,
            });
        }
        coo.push(k, f, 1.0);
        coo.push(k, t, -1.0);
    }
    Ok(CsrMatrix::from(&coo))
}

/// `Y_b = Eᵀ Y_l E + Y_s` with diagonal `Y_l`, `Y_s` given as vectors.
pub fn build_ybus(
    incidence: &CsrMatrix<f64>,
    line_admittance: &[Complex64],
    shunt_admittance: &[Complex64],
) -> Result<CsrMatrix<Complex64>> {
    let (m, n) = (incidence.nrows(), incidence.ncols());
    if line_admittance.len() != m || shunt_admittance.len() != n {
        return Err(Error::Dimension(format!(
            "incidence is {m}x{n} but got {} line and {} shunt admittances",
            line_admittance.len(),
            shunt_admittance.len()
        )));
    }
    let mut e = CooMatrix::new(m, n);
    let mut yl_e = CooMatrix::new(m, n);
    for (k, i, &v) in incidence.triplet_iter() {
        e.push(k, i, Complex64::new(v, 0.0));
        yl_e.push(k, i, line_admittance[k] * v);
    }
    let e = CsrMatrix::from(&e);
    let yl_e = CsrMatrix::from(&yl_e);
    let laplacian = &e.transpose() * &yl_e;
    let mut ys = CooMatrix::new(n, n);
    for (i, &y) in shunt_admittance.iter().enumerate() {
        if y != Complex64::new(0.0, 0.0) {
            ys.push(i, i, y);
        }
    }
    Ok(&laplacian + &CsrMatrix::from(&ys))
}

pub fn invert_ybus(ybus: &CsrMatrix<Complex64>) -> Result<CMatrix> {
    invert_ybus_with(ybus, &Tolerances::default())
}

/// Dense `Z_b = Y_b⁻¹` through LU, with a residual check.
pub fn invert_ybus_with(ybus: &CsrMatrix<Complex64>, tol: &Tolerances) -> Result<CMatrix> {
    let dense = linalg::csr_to_dense(ybus);
    if dense.nrows() != dense.ncols() {
        return Err(Error::Dimension("Y-bus must be square".into()));
    }
    let scale = dense.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let laplacian_like = dense.row_iter().all(|row| {
        let s: Complex64 = row.iter().sum();
        s.norm() <= 1e-14 * scale.max(1.0)
    });
    if laplacian_like {
        return Err(Error::NoShuntPath);
    }
    let mut zbus = linalg::lu_inverse(&dense, tol.singular_pivot)?;
    let mut residual = linalg::identity_residual(&dense, &zbus);
    if residual > tol.inversion_residual {
        // one step of iterative refinement: Z += Z (I - Y Z)
        let n = dense.nrows();
        let correction = &zbus * (CMatrix::identity(n, n) - &dense * &zbus);
        let refined = &zbus + correction;
        let r = linalg::identity_residual(&dense, &refined);
        if r < residual {
            zbus = refined;
            residual = r;
        }
    }
    // the product Y Z cannot be formed more accurately than its rounding floor
    let floor = rounding_floor(&dense, &zbus);
    if !(residual <= tol.inversion_residual.max(floor)) {
        return Err(Error::Singular(format!(
            "inversion residual {residual:.3e} exceeds {:.1e}",
            tol.inversion_residual.max(floor)
        )));
    }
    if residual > tol.inversion_residual {
        log::warn!("inversion residual {residual:.3e} is at the rounding floor {floor:.3e}");
    }
    Ok(zbus)
}

/// `8 n ε ‖|Y| |Z|‖_∞`.
fn rounding_floor(y: &CMatrix, z: &CMatrix) -> f64 {
    let ay = y.map(|v| v.norm());
    let az = z.map(|v| v.norm());
    let prod = ay * az;
    let worst = prod.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
    8.0 * y.nrows() as f64 * f64::EPSILON * worst
}

/// `mask[i][j] = |EᵀE|[i][j] > 0`; the diagonal is always set.
pub fn adjacency_mask(incidence: &CsrMatrix<f64>) -> AdjacencyMask {
    let n = incidence.ncols();
    let gram = &incidence.transpose() * incidence;
    let mut mask = AdjacencyMask::identity(n);
    for (i, j, v) in gram.triplet_iter() {
        if v.abs() > 0.0 {
            mask.set(i, j);
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn path(n: u64, y: Complex64, shunt: Complex64) -> NetworkCase {
        let buses = (0..n)
            .map(|i| {
                Bus::new(i, if i == 0 { BusType::Slack } else { BusType::Pq }).with_shunt(shunt)
            })
            .collect();
        let branches = (1..n).map(|i| Branch::new(i - 1, i, y)).collect();
        NetworkCase::new(1.0, buses, branches).unwrap()
    }

    fn dense_real(m: &CsrMatrix<f64>) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; m.ncols()]; m.nrows()];
        for (i, j, v) in m.triplet_iter() {
            out[i][j] += v;
        }
        out
    }

    #[test]
    fn incidence_two_bus() {
        let case = path(2, c(1.0, -5.0), c(0.0, 0.01));
        assert_eq!(
            dense_real(&build_incidence(&case).unwrap()),
            vec![vec![1.0, -1.0]]
        );
    }

    #[test]
    fn incidence_three_bus_path() {
        let case = path(3, c(1.0, -5.0), c(0.0, 0.01));
        assert_eq!(
            dense_real(&build_incidence(&case).unwrap()),
            vec![vec![1.0, -1.0, 0.0], vec![0.0, 1.0, -1.0]]
        );
    }

    #[test]
    fn incidence_reports_dangling_branch() {
        let mut case = path(3, c(1.0, -5.0), c(0.0, 0.01));
        case.branches.push(Branch::new(2, 9, c(1.0, 0.0)));
        assert!(matches!(
            build_incidence(&case),
            Err(Error::DanglingBranch { branch: 2, bus: 9 })
        ));
    }

    #[test]
    fn ybus_two_bus_hand_stamp() {
        let case = path(2, c(1.0, -5.0), c(0.0, 0.01));
        let model = AdmittanceModel::build(&case).unwrap();
        let y = model.ybus_dense();
        assert_eq!(y[(0, 0)], c(1.0, -4.99));
        assert_eq!(y[(1, 1)], c(1.0, -4.99));
        assert_eq!(y[(0, 1)], c(-1.0, 5.0));
        assert_eq!(y[(1, 0)], c(-1.0, 5.0));
    }

    #[test]
    fn ybus_without_shunts_has_zero_row_sums() {
        let case = path(4, c(2.0, -7.0), c(0.0, 0.0));
        let e = build_incidence(&case).unwrap();
        let yl = vec![c(2.0, -7.0); 3];
        let y = linalg::csr_to_dense(&build_ybus(&e, &yl, &[c(0.0, 0.0); 4]).unwrap());
        for row in y.row_iter() {
            assert_eq!(row.iter().sum::<Complex64>(), c(0.0, 0.0));
        }
    }

    #[test]
    fn ybus_rejects_dimension_mismatch() {
        let case = path(3, c(1.0, -5.0), c(0.0, 0.01));
        let e = build_incidence(&case).unwrap();
        assert!(matches!(
            build_ybus(&e, &[c(1.0, 0.0)], &[c(0.0, 0.0); 3]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn invert_diagonal() {
        let mut coo = CooMatrix::new(2, 2);
        coo.push(0, 0, c(2.0, 0.0));
        coo.push(1, 1, c(4.0, 0.0));
        let z = invert_ybus(&CsrMatrix::from(&coo)).unwrap();
        assert_eq!(z[(0, 0)], c(0.5, 0.0));
        assert_eq!(z[(1, 1)], c(0.25, 0.0));
    }

    #[test]
    fn invert_two_bus_reproduces_voltages() {
        // 2x2 inverse by hand: Z = adj(Y)/det(Y).
        let case = path(2, c(1.0, -5.0), c(0.0, 0.01));
        let model = AdmittanceModel::build(&case).unwrap();
        let (a, b) = (c(1.0, -4.99), c(-1.0, 5.0));
        let det = a * a - b * b;
        let injection = [c(0.3, -0.1), c(-0.2, 0.05)];
        let v_hand = [
            (a * injection[0] - b * injection[1]) / det,
            (-b * injection[0] + a * injection[1]) / det,
        ];
        let v = linalg::matvec(&model.zbus, &injection);
        for i in 0..2 {
            assert!((v[i] - v_hand[i]).norm() < 1e-9 * v_hand[i].norm().max(1.0));
        }
    }

    #[test]
    fn pure_laplacian_has_no_shunt_path() {
        let case = path(3, c(1.0, -5.0), c(0.0, 0.0));
        assert!(matches!(
            AdmittanceModel::build(&case),
            Err(Error::NoShuntPath)
        ));
    }

    #[test]
    fn adjacency_path_and_star() {
        let case = path(3, c(1.0, -5.0), c(0.0, 0.01));
        let mask = adjacency_mask(&build_incidence(&case).unwrap());
        assert!(mask.get(0, 1) && mask.get(1, 2) && mask.get(1, 0));
        assert!(!mask.get(0, 2));
        assert!((0..3).all(|i| mask.get(i, i)));

        let buses = (0..5)
            .map(|i| Bus::new(i, if i == 0 { BusType::Slack } else { BusType::Pq }))
            .collect();
        let branches = (1..5).map(|i| Branch::new(0, i, c(1.0, -1.0))).collect();
        let star = NetworkCase::new(1.0, buses, branches).unwrap();
        let mask = adjacency_mask(&build_incidence(&star).unwrap());
        for j in 0..5 {
            assert!(mask.get(0, j));
        }
        for a in 1..5 {
            for b in 1..5 {
                assert_eq!(mask.get(a, b), a == b);
            }
        }
    }

    #[test]
    fn case_validation_errors() {
        let two_slack = vec![Bus::new(1, BusType::Slack), Bus::new(2, BusType::Slack)];
        assert!(matches!(
            NetworkCase::new(1.0, two_slack, vec![Branch::new(1, 2, c(1.0, 0.0))]),
            Err(Error::MultipleSlack(_))
        ));
        let none = vec![Bus::new(1, BusType::Pq), Bus::new(2, BusType::Pq)];
        assert!(matches!(
            NetworkCase::new(1.0, none, vec![Branch::new(1, 2, c(1.0, 0.0))]),
            Err(Error::NoSlack)
        ));
        let dup = vec![Bus::new(1, BusType::Slack), Bus::new(1, BusType::Pq)];
        assert!(matches!(
            NetworkCase::new(1.0, dup, vec![]),
            Err(Error::DuplicateBus(1))
        ));
        let split = vec![
            Bus::new(1, BusType::Slack),
            Bus::new(2, BusType::Pq),
            Bus::new(3, BusType::Pq),
        ];
        assert!(matches!(
            NetworkCase::new(1.0, split, vec![Branch::new(1, 2, c(1.0, 0.0))]),
            Err(Error::Disconnected { components: 2 })
        ));
    }

    #[test]
    fn buses_are_renumbered_by_sorted_id() {
        let buses = vec![
            Bus::new(30, BusType::Pq),
            Bus::new(10, BusType::Slack),
            Bus::new(20, BusType::Pq),
        ];
        let branches = vec![
            Branch::new(10, 30, c(1.0, 0.0)),
            Branch::new(30, 20, c(1.0, 0.0)),
        ];
        let case = NetworkCase::new(1.0, buses, branches).unwrap();
        assert_eq!(case.bus_ids(), vec![10, 20, 30]);
        assert_eq!(case.endpoints(1).unwrap(), (2, 1));
        assert_eq!(case.slack_index(), 0);
    }

    #[test]
    fn synthetic_shunt_only_when_none_present() {
        let mut bare = path(3, c(1.0, -5.0), c(0.0, 0.0));
        assert!(bare.ensure_shunt_path());
        assert_eq!(bare.synthetic_shunt, Some(SYNTHETIC_SHUNT));
        assert!(AdmittanceModel::build(&bare).is_ok());
        let mut shunted = path(3, c(1.0, -5.0), c(0.0, 0.01));
        assert!(!shunted.ensure_shunt_path());
    }

    #[test]
    fn contraction_merges_neighbors() {
        // path 0-1-2-3, merge {0,1}
        let mask = AdjacencyMask::from_edges(4, [(0, 1), (1, 2), (2, 3)]);
        let contracted = mask.contract(&[vec![0, 1], vec![2], vec![3]]);
        assert_eq!(contracted, AdjacencyMask::from_edges(3, [(0, 1), (1, 2)]));
    }
}
