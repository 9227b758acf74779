use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front-ends to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Parse,
    Numerical,
    Infeasible,
    Timeout,
    Config,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema violation at {location}: {message}")]
    Schema { location: String, message: String },

    #[error("duplicate bus id {0}")]
    DuplicateBus(u64),

    #[error("multiple slack buses: {0:?}")]
    MultipleSlack(Vec<u64>),

    #[error("no slack bus")]
    NoSlack,

    #[error("branch {branch} references unknown bus {bus}")]
    DanglingBranch { branch: usize, bus: u64 },

    #[error("branch {branch} connects bus {bus} to itself")]
    SelfLoop { branch: usize, bus: u64 },

    #[error("network is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("unsupported branch model (taps/phase shifters) on branches: {}", offenders.join(", "))]
    UnsupportedBranchModel { offenders: Vec<String> },

    #[error("network has no shunt path to ground: Y-bus is singular")]
    NoShuntPath,

    #[error("matrix is numerically singular: {0}")]
    Singular(String),

    #[error("reduce-set isolates a floating subnetwork: {0}")]
    FloatingSubnetwork(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("power flow diverged after {iterations} iterations (mismatch {mismatch:.3e} pu)")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible assignment matrix: {0}")]
    InfeasibleAssignment(String),

    #[error("scenario library is empty")]
    EmptyScenarioLibrary,

    #[error("model has {binaries} binaries, above the built-in solver cap of {cap}; use an external backend")]
    SolverCapExceeded { binaries: usize, cap: usize },

    #[error("[{backend}] {message}")]
    Backend { backend: String, message: String },

    #[error("reduction program is infeasible: {0}")]
    Infeasible(String),

    #[error("solver stopped at its time limit without an incumbent")]
    Timeout,

    #[error("certificate mismatch: solver delta {solver:.6e} vs recomputed {certified:.6e} (big-M too small?)")]
    BigMViolation { solver: f64, certified: f64 },
}

impl Error {
    pub fn schema(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Schema { .. }
            | Error::DuplicateBus(_)
            | Error::MultipleSlack(_)
            | Error::NoSlack
            | Error::DanglingBranch { .. }
            | Error::SelfLoop { .. }
            | Error::Disconnected { .. }
            | Error::UnsupportedBranchModel { .. } => ErrorKind::Parse,
            Error::InvalidConfig(_) => ErrorKind::Config,
            Error::Infeasible(_) | Error::InfeasibleAssignment(_) => ErrorKind::Infeasible,
            Error::Timeout => ErrorKind::Timeout,
            Error::NoShuntPath
            | Error::Singular(_)
            | Error::FloatingSubnetwork(_)
            | Error::Dimension(_)
            | Error::PowerFlowDiverged { .. }
            | Error::EmptyScenarioLibrary
            | Error::SolverCapExceeded { .. }
            | Error::Backend { .. }
            | Error::BigMViolation { .. } => ErrorKind::Numerical,
        }
    }

    /// Short stable tag for machine-readable reports.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Schema { .. } => "schema",
            Error::DuplicateBus(_) => "duplicate_bus",
            Error::MultipleSlack(_) => "multiple_slack",
            Error::NoSlack => "no_slack",
            Error::DanglingBranch { .. } => "dangling_branch",
            Error::SelfLoop { .. } => "self_loop",
            Error::Disconnected { .. } => "disconnected",
            Error::UnsupportedBranchModel { .. } => "unsupported_branch_model",
            Error::NoShuntPath => "no_shunt_path",
            Error::Singular(_) => "singular",
            Error::FloatingSubnetwork(_) => "floating_subnetwork",
            Error::Dimension(_) => "dimension",
            Error::PowerFlowDiverged { .. } => "powerflow_diverged",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InfeasibleAssignment(_) => "infeasible_assignment",
            Error::EmptyScenarioLibrary => "empty_scenarios",
            Error::SolverCapExceeded { .. } => "solver_cap_exceeded",
            Error::Backend { .. } => "backend",
            Error::Infeasible(_) => "infeasible",
            Error::Timeout => "timeout",
            Error::BigMViolation { .. } => "big_m_violation",
        }
    }
}
