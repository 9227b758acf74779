//! Optimal Kron-based reduction of AC power networks.
//!
//! A successive MILP picks which buses to eliminate and where their current
//! injections go, bounding the voltage deviation between each kept bus and
//! the buses it represents.

pub mod case_io;
pub mod error;
pub mod kron;
pub mod linalg;
pub mod milp;
pub mod network;
pub mod powerflow;
pub mod successive;
pub mod synth;
pub mod tolerances;
pub mod validation;

pub use error::{Error, ErrorKind, Result};
pub use kron::{Assignment, Partition};
pub use milp::{MilpBackend, MilpConfig, ReductionDecision, SolverStatus};
pub use network::{AdmittanceModel, Branch, Bus, BusType, NetworkCase};
pub use powerflow::{InjectionSpec, Scenario, ScenarioLibrary};
pub use successive::{ReducedNetwork, RunOptions};
pub use tolerances::Tolerances;
