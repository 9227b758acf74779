//! Numerical tolerances shared across the crate.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Bound on `‖Y_b Z_b − I‖_∞` after inversion.
    pub inversion_residual: f64,
    /// Bound on `‖Y_K Z_K − I‖_∞` for Kron results.
    pub kron_identity: f64,
    /// Bound on `‖Y_b V − I‖_∞` for every stored scenario.
    pub scenario_consistency: f64,
    /// Newton-Raphson stopping threshold on the power mismatch (pu).
    pub powerflow_mismatch: f64,
    /// Allowed gap between solver delta and the recomputed certificate.
    pub certificate_match: f64,
    /// Relative pivot size below which a factorization is declared singular.
    pub singular_pivot: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        DEFAULT
    }
}

pub const DEFAULT: Tolerances = Tolerances {
    inversion_residual: 1e-9,
    kron_identity: 1e-8,
    scenario_consistency: 1e-8,
    powerflow_mismatch: 1e-10,
    certificate_match: 1e-6,
    singular_pivot: 1e-13,
};

/// Uniform shunt (pu, susceptance) given to buses when a case has none.
pub const SYNTHETIC_SHUNT: f64 = 1e-6;
