//! Exact Kron reduction: Schur complement, impedance-submatrix route,
//! generalized Kron impedance and current aggregation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, ZERO};
use crate::tolerances::Tolerances;

/// Kept/reduced split of `0..n`. Both index sets are sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    n: usize,
    keep: Vec<usize>,
    reduce: Vec<usize>,
}

impl Partition {
    pub fn new(n: usize, mut keep: Vec<usize>, slack: usize) -> Result<Self> {
        keep.sort_unstable();
        keep.dedup();
        if keep.is_empty() {
            return Err(Error::InvalidConfig("keep set must not be empty".into()));
        }
        if let Some(&bad) = keep.iter().find(|&&k| k >= n) {
            return Err(Error::Dimension(format!(
                "keep index {bad} out of range 0..{n}"
            )));
        }
        if keep.binary_search(&slack).is_err() {
            return Err(Error::InvalidConfig("slack bus must be kept".into()));
        }
        let reduce = (0..n).filter(|i| keep.binary_search(i).is_err()).collect();
        Ok(Partition { n, keep, reduce })
    }

    pub fn from_mask(keep: &[bool], slack: usize) -> Result<Self> {
        let idx = keep
            .iter()
            .enumerate()
            .filter(|(_, &k)| k)
            .map(|(i, _)| i)
            .collect();
        Self::new(keep.len(), idx, slack)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn keep(&self) -> &[usize] {
        &self.keep
    }

    pub fn reduce(&self) -> &[usize] {
        &self.reduce
    }
}

#[derive(Clone, Debug)]
pub struct KronResult {
    pub kept: Vec<usize>,
    pub y_kron: CMatrix,
    pub z_kron: CMatrix,
}

impl KronResult {
    /// Computes both routes and checks that they invert each other.
    pub fn compute(
        ybus: &CMatrix,
        zbus: &CMatrix,
        partition: &Partition,
        tol: &Tolerances,
    ) -> Result<Self> {
        let y_kron = kron_schur(ybus, partition)?;
        let z_kron = kron_via_impedance(zbus, partition);
        let residual = linalg::identity_residual(&y_kron, &z_kron);
        if !(residual <= tol.kron_identity) {
            return Err(Error::Singular(format!(
                "Y_K Z_K deviates from identity by {residual:.3e}"
            )));
        }
        Ok(KronResult {
            kept: partition.keep.clone(),
            y_kron,
            z_kron,
        })
    }
}

/// `Y_K = Y_b1 − Y_b2 Y_b4⁻¹ Y_b3`, via an LU solve on the reduce block.
pub fn kron_schur(ybus: &CMatrix, partition: &Partition) -> Result<CMatrix> {
    if ybus.nrows() != partition.n || ybus.ncols() != partition.n {
        return Err(Error::Dimension(format!(
            "Y-bus is {}x{} but partition covers {} buses",
            ybus.nrows(),
            ybus.ncols(),
            partition.n
        )));
    }
    let (k, r) = (&partition.keep, &partition.reduce);
    let y1 = linalg::select(ybus, k, k);
    if r.is_empty() {
        return Ok(y1);
    }
    check_reduce_set_attached(ybus, partition)?;
    let y2 = linalg::select(ybus, k, r);
    let y3 = linalg::select(ybus, r, k);
    let y4 = linalg::select(ybus, r, r);
    let x = linalg::lu_solve(&y4, &y3, Tolerances::default().singular_pivot)
        .map_err(|e| Error::FloatingSubnetwork(e.to_string()))?;
    Ok(y1 - y2 * x)
}

/// Every connected component of the reduce set (through nonzero `Y_b`
/// couplings) must touch the keep set.
fn check_reduce_set_attached(ybus: &CMatrix, partition: &Partition) -> Result<()> {
    let n = partition.n;
    let mut in_reduce = vec![false; n];
    for &i in &partition.reduce {
        in_reduce[i] = true;
    }
    let mut seen = vec![false; n];
    for &start in &partition.reduce {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut attached = false;
        let mut members = Vec::new();
        while let Some(u) = stack.pop() {
            members.push(u);
            for v in 0..n {
                if v == u || ybus[(u, v)] == ZERO {
                    continue;
                }
                if in_reduce[v] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                } else {
                    attached = true;
                }
            }
        }
        if !attached {
            members.sort_unstable();
            return Err(Error::FloatingSubnetwork(format!(
                "buses {members:?} have no branch to the keep set"
            )));
        }
    }
    Ok(())
}

/// `Z_K = Z_b[K, K]`.
pub fn kron_via_impedance(zbus: &CMatrix, partition: &Partition) -> CMatrix {
    linalg::select(zbus, &partition.keep, &partition.keep)
}

/// `S Z_b S` with `S = diag(s)`.
pub fn generalized_kron(zbus: &CMatrix, keep: &[bool]) -> CMatrix {
    CMatrix::from_fn(zbus.nrows(), zbus.ncols(), |i, j| {
        if keep[i] && keep[j] {
            zbus[(i, j)]
        } else {
            ZERO
        }
    })
}

/// Binary assignment matrix `A` stored by column: `target[k]` is the row
/// holding the single 1 of column `k`, i.e. the bus receiving `k`'s current.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    target: Vec<usize>,
}

impl Assignment {
    pub fn identity(n: usize) -> Self {
        Assignment {
            target: (0..n).collect(),
        }
    }

    pub fn from_targets(target: Vec<usize>) -> Result<Self> {
        let n = target.len();
        if let Some((k, &t)) = target.iter().enumerate().find(|(_, &t)| t >= n) {
            return Err(Error::InfeasibleAssignment(format!(
                "column {k} assigned to row {t} outside 0..{n}"
            )));
        }
        Ok(Assignment { target })
    }

    /// Reads a dense 0/1 matrix; every column must sum to one.
    pub fn from_matrix(a: &DMatrix<u8>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension("assignment matrix must be square".into()));
        }
        let mut target = Vec::with_capacity(a.ncols());
        for (k, col) in a.column_iter().enumerate() {
            if col.iter().any(|&v| v > 1) {
                return Err(Error::InfeasibleAssignment(format!(
                    "column {k} is not binary"
                )));
            }
            let ones: Vec<usize> = col
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 1)
                .map(|(i, _)| i)
                .collect();
            if ones.len() != 1 {
                return Err(Error::InfeasibleAssignment(format!(
                    "column {k} sums to {} instead of 1",
                    ones.len()
                )));
            }
            target.push(ones[0]);
        }
        Ok(Assignment { target })
    }

    pub fn to_matrix(&self) -> DMatrix<u8> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, k| u8::from(self.target[k] == i))
    }

    pub fn n(&self) -> usize {
        self.target.len()
    }

    pub fn target(&self, k: usize) -> usize {
        self.target[k]
    }

    pub fn targets(&self) -> &[usize] {
        &self.target
    }

    /// Diagonal of `A`, i.e. the keep vector `s`.
    pub fn keep(&self) -> Vec<bool> {
        self.target
            .iter()
            .enumerate()
            .map(|(k, &t)| t == k)
            .collect()
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&k| self.target[k] == k).collect()
    }

    pub fn reductions(&self) -> usize {
        self.target
            .iter()
            .enumerate()
            .filter(|(k, &t)| t != *k)
            .count()
    }

    pub fn is_identity(&self) -> bool {
        self.reductions() == 0
    }

    /// Row gating: a row holding any 1 must have its diagonal set, so
    /// currents only land on kept buses.
    pub fn check_structure(&self) -> Result<()> {
        for (k, &t) in self.target.iter().enumerate() {
            if self.target[t] != t {
                return Err(Error::InfeasibleAssignment(format!(
                    "column {k} assigned to reduced bus {t}"
                )));
            }
        }
        Ok(())
    }

    /// Every 1 of `A` lies on the adjacency support.
    pub fn respects(&self, adjacency: &crate::network::AdjacencyMask) -> bool {
        self.target
            .iter()
            .enumerate()
            .all(|(k, &t)| adjacency.get(t, k))
    }
}

/// `I_K = A I`; summed over columns in ascending order.
pub fn aggregate_currents(assignment: &Assignment, currents: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(
        assignment.n(),
        currents.len(),
        "assignment/current length mismatch"
    );
    let mut out = vec![ZERO; currents.len()];
    for (k, &t) in assignment.target.iter().enumerate() {
        out[t] += currents[k];
    }
    out
}

/// `V_K = S Z_b S A I`. Entries at reduced buses are zero.
pub fn kron_voltages(
    zbus: &CMatrix,
    keep: &[bool],
    assignment: &Assignment,
    currents: &[Complex64],
) -> Result<Vec<Complex64>> {
    let n = zbus.nrows();
    if keep.len() != n || assignment.n() != n || currents.len() != n {
        return Err(Error::Dimension(
            "kron_voltages inputs must all have length n".into(),
        ));
    }
    if assignment.keep() != keep {
        return Err(Error::InfeasibleAssignment(
            "keep vector differs from the diagonal of A".into(),
        ));
    }
    assignment.check_structure()?;
    let aggregated: Vec<Complex64> = aggregate_currents(assignment, currents)
        .into_iter()
        .zip(keep)
        .map(|(i, &s)| if s { i } else { ZERO })
        .collect();
    let v = linalg::matvec(zbus, &aggregated);
    Ok(v.into_iter()
        .zip(keep)
        .map(|(v, &s)| if s { v } else { ZERO })
        .collect())
}
