//! Small dense complex helpers on top of nalgebra.

use nalgebra::DMatrix;
use nalgebra_sparse::CsrMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `y = M x`, accumulating each row left to right from zero.
///
/// Every voltage computed by the crate goes through this routine so that
/// equal products are bitwise equal regardless of which path requested them.
pub fn matvec(m: &CMatrix, x: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(m.ncols(), x.len(), "matvec dimension mismatch");
    (0..m.nrows())
        .map(|i| {
            let mut acc = ZERO;
            for (j, xj) in x.iter().enumerate() {
                acc += m[(i, j)] * xj;
            }
            acc
        })
        .collect()
}

/// Maximum absolute row sum.
pub fn inf_norm(m: &CMatrix) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_inf_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Row/column selection `M[rows, cols]`.
pub fn select(m: &CMatrix, rows: &[usize], cols: &[usize]) -> CMatrix {
    CMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn csr_to_dense(m: &CsrMatrix<Complex64>) -> CMatrix {
    let mut dense = CMatrix::zeros(m.nrows(), m.ncols());
    for (i, j, v) in m.triplet_iter() {
        dense[(i, j)] += *v;
    }
    dense
}

/// Residual `‖A B − I‖_∞`.
pub fn identity_residual(a: &CMatrix, b: &CMatrix) -> f64 {
    let mut prod = a * b;
    for i in 0..prod.nrows().min(prod.ncols()) {
        prod[(i, i)] -= Complex64::new(1.0, 0.0);
    }
    inf_norm(&prod)
}

/// LU-based inverse; fails when the smallest pivot is negligible relative to
/// the largest one.
pub fn lu_inverse(m: &CMatrix, rel_pivot: f64) -> Result<CMatrix> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "cannot invert a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.is_empty() {
        return Ok(m.clone());
    }
    let lu = m.clone().lu();
    check_pivots(&lu.u(), rel_pivot)?;
    lu.try_inverse()
        .ok_or_else(|| Error::Singular("zero pivot in LU factorization".into()))
}

/// Solves `M X = B` through an LU factorization of `M`.
pub fn lu_solve(m: &CMatrix, b: &CMatrix, rel_pivot: f64) -> Result<CMatrix> {
    if m.nrows() != m.ncols() || m.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "cannot solve {}x{} system with {} right-hand-side rows",
            m.nrows(),
            m.ncols(),
            b.nrows()
        )));
    }
    if m.is_empty() {
        return Ok(b.clone());
    }
    let lu = m.clone().lu();
    check_pivots(&lu.u(), rel_pivot)?;
    lu.solve(b)
        .ok_or_else(|| Error::Singular("zero pivot in LU factorization".into()))
}

fn check_pivots(u: &CMatrix, rel_pivot: f64) -> Result<()> {
    let pivots: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].norm()).collect();
    let largest = pivots.iter().cloned().fold(0.0, f64::max);
    let smallest = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
    if largest == 0.0 || !smallest.is_finite() || smallest <= rel_pivot * largest {
        return Err(Error::Singular(format!(
            "pivot ratio {:.3e} below {:.1e}",
            if largest > 0.0 {
                smallest / largest
            } else {
                0.0
            },
            rel_pivot
        )));
    }
    Ok(())
}
