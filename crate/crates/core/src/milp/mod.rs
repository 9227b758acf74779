//! The reduction program: which buses to eliminate and where their currents go.
//!
//! Decision variables are the entries of the assignment matrix `A` on the
//! adjacency support; `s` is read off its diagonal. All deviations are taken
//! componentwise on real and imaginary parts.

mod backend;
mod builtin;
mod enumerate;
mod linear;
mod model;
mod verify;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kron::Assignment;

#[cfg(feature = "microlp")]
pub use backend::MicrolpBackend;
pub use backend::{
    backend_by_name, BuiltinBackend, LpOutcome, LpSolution, MilpBackend, OracleChecked,
};
pub use builtin::{builtin_exact_solver, builtin_solve_with_stats, BuiltinStats};
pub use enumerate::{enumerate_decisions, enumeration_oracle};
pub use linear::{Comparison, Constraint, LinearProgram, VarKind, Variable};
pub use model::{build_model, MilpModel, RectangularBlocks};
pub use verify::{certified_delta, verify_decision};

/// What a super node's voltage is compared against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// Original full-network voltages of every bus in the composed cluster.
    #[default]
    Composed,
    /// Only the current iterate's voltage of the absorbed node.
    Immediate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MilpConfig {
    /// Weight on the number of eliminated buses.
    pub alpha: f64,
    /// Per-solve cap on eliminated buses as a fraction of the current size.
    pub beta: f64,
    /// Cap on the worst-case componentwise deviation (pu).
    pub gamma: f64,
    /// Big-M for the deviation constraints (pu).
    pub big_m: f64,
    /// Seconds.
    pub time_limit: f64,
    pub mip_gap: f64,
    /// Largest model the built-in solver accepts, counted in binaries.
    pub binary_cap: usize,
    /// Search nodes the built-in solver may visit before settling for its
    /// incumbent. Unlike the time limit this keeps runs reproducible.
    #[serde(default = "default_node_limit")]
    pub node_limit: u64,
    #[serde(default)]
    pub targets: TargetMode,
}

impl Default for MilpConfig {
    fn default() -> Self {
        MilpConfig {
            alpha: 0.002,
            beta: 0.25,
            gamma: 1.0,
            big_m: 10.0,
            time_limit: 60.0,
            mip_gap: 1e-9,
            binary_cap: 400,
            node_limit: default_node_limit(),
            targets: TargetMode::Composed,
        }
    }
}

fn default_node_limit() -> u64 {
    500_000
}

impl MilpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.big_m > self.gamma && self.big_m.is_finite()) {
            return bad(format!(
                "big_m ({}) must exceed gamma ({})",
                self.big_m, self.gamma
            ));
        }
        if !(self.time_limit > 0.0) {
            return bad(format!(
                "time_limit must be positive, got {}",
                self.time_limit
            ));
        }
        if !(self.mip_gap >= 0.0 && self.mip_gap.is_finite()) {
            return bad(format!(
                "mip_gap must be finite and >= 0, got {}",
                self.mip_gap
            ));
        }
        if self.binary_cap == 0 {
            return bad("binary_cap must be positive".into());
        }
        Ok(())
    }

    pub fn time_limit(&self) -> Duration {
        Duration::from_secs_f64(self.time_limit.min(1e9))
    }

    /// `⌊n·β⌋`.
    pub fn budget(&self, n: usize) -> usize {
        ((n as f64 * self.beta) + 1e-9).floor() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverStatus {
    Optimal,
    /// Search budget (node limit or engine gap) reached; incumbent returned.
    Feasible,
    Infeasible,
    /// Wall-clock limit reached; incumbent returned.
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionDecision {
    pub assignment: Assignment,
    /// Worst-case componentwise deviation reached by the decision (pu).
    pub delta: f64,
    pub objective: f64,
    pub status: SolverStatus,
    pub backend: String,
}

impl ReductionDecision {
    /// Diagonal of `A`.
    pub fn keep(&self) -> Vec<bool> {
        self.assignment.keep()
    }

    pub fn reductions(&self) -> usize {
        self.assignment.reductions()
    }
}

/// `δ − (α/n)·R`, the single formula every solver and oracle uses.
pub fn objective_value(delta: f64, reductions: usize, alpha: f64, n: usize) -> f64 {
    delta - alpha / n as f64 * reductions as f64
}

/// Solves `model` with `backend`; infeasibility and timeouts without an
/// incumbent come back as errors.
pub fn solve(model: &MilpModel, backend: &dyn MilpBackend) -> Result<ReductionDecision> {
    backend.solve_model(model)
}
