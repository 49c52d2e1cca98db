use std::path::PathBuf;

/// Errors produced by the solver library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("incompatible grids")]
    IncompatibleGrids,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("incompatible flux: closure gap {gap:e} exceeds tolerance {tol:e}")]
    IncompatibleFlux { gap: f64, tol: f64 },

    #[error("Gamma not strict inflow at boundary node {index} (v0.n = {flux:e})")]
    GammaNotInflow { index: usize, flux: f64 },

    #[error("nonpositive boundary density {value} at boundary node {index}")]
    NonpositiveDensity { index: usize, value: f64 },

    #[error("eps too small for grid: eps = {eps}, need at least 2h = {min}")]
    EpsTooSmall { eps: f64, min: f64 },

    #[error("singular matrix (pivot {pivot:e} at row {row})")]
    SingularMatrix { row: usize, pivot: f64 },

    #[error("indefinite matrix in cg (curvature {0:e})")]
    IndefiniteMatrix(f64),

    #[error("linear solve failed: {0}")]
    LinearSolveFailed(String),

    #[error("biharmonic solve stagnated (relative residual {0:e})")]
    BiharmonicStagnated(f64),

    #[error("input not divergence-free (max interior |div| = {0:e})")]
    NotDivergenceFree(f64),

    #[error("invalid MMS case: {0}")]
    InvalidMms(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown key '{key}' in section [{section}] at line {line}")]
    UnknownKey {
        section: String,
        key: String,
        line: usize,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
