use std::path::PathBuf;

use thiserror::Error;
use u1evolve_core::constraints::ConstraintError;
use u1evolve_core::diagnostics::DiagnosticsError;
use u1evolve_core::elliptic::EllipticError;
use u1evolve_core::evolution::{EvolutionError, RunError, RunFailure};
use u1evolve_core::snapshot::SnapshotError;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("initial data: {0}")]
    Constraint(#[from] ConstraintError),
    #[error("evolution: {0}")]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Run(#[from] RunFailure),
    #[error("diagnostics: {0}")]
    Diagnostics(#[from] DiagnosticsError),
    #[error("snapshot: {0}")]
    Snapshot(#[from] SnapshotError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("invalid environment: {0}")]
    Environment(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_STABILITY: i32 = 4;

fn elliptic_code(e: &EllipticError) -> i32 {
    match e {
        EllipticError::InvalidConfig(_) => EXIT_VALIDATION,
        EllipticError::NonZeroMean { .. } | EllipticError::NoConvergence { .. } => EXIT_DIVERGENCE,
    }
}

fn constraint_code(e: &ConstraintError) -> i32 {
    match e {
        ConstraintError::OrthogonalityViolated(..) | ConstraintError::InvalidData(_) => EXIT_VALIDATION,
        ConstraintError::FixedPointDiverged { .. } | ConstraintError::LapseCollapse(_) => EXIT_DIVERGENCE,
        ConstraintError::Elliptic(e) => elliptic_code(e),
    }
}

fn evolution_code(e: &EvolutionError) -> i32 {
    match e {
        EvolutionError::Elliptic(e) => elliptic_code(e),
        EvolutionError::Constraint(e) => constraint_code(e),
        EvolutionError::FixedPointDiverged { .. } | EvolutionError::LapseCollapse(_) => EXIT_DIVERGENCE,
        EvolutionError::Geometry(_) | EvolutionError::CflViolation { .. } => EXIT_STABILITY,
        EvolutionError::InvalidConfig(_) => EXIT_VALIDATION,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Io { .. }) => EXIT_IO,
            CliError::Config(_) | CliError::Environment(_) => EXIT_VALIDATION,
            CliError::Constraint(e) => constraint_code(e),
            CliError::Evolution(e) => evolution_code(e),
            CliError::Run(f) => match &f.error {
                RunError::Evolution(e) => evolution_code(e),
                RunError::Sink(_) => EXIT_IO,
            },
            CliError::Diagnostics(_) => EXIT_VALIDATION,
            CliError::Snapshot(SnapshotError::Io(_)) => EXIT_IO,
            CliError::Snapshot(_) => EXIT_VALIDATION,
            CliError::Io { .. } | CliError::MissingInput(_) => EXIT_IO,
        }
    }
}
