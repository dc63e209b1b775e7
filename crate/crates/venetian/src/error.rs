use thiserror::Error;

/// Errors produced by the construction, planning, and verification layers.
///
/// Variants are grouped roughly by the subsystem that raises them; the CLI
/// maps them onto exit codes (config 2, construction 3, verification 4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid direction: {0}")]
    InvalidDirection(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionError { expected: usize, got: usize },

    #[error("degenerate piece: slab directions are linearly dependent")]
    DegeneratePiece,

    #[error("lines are orthogonal")]
    OrthogonalLines,

    #[error("no admissible helper lines within search bound: {0}")]
    ScheduleSearchExhausted(String),

    #[error("no feasible (n_k, a_k) at stage {k}: {reason}")]
    PlanInfeasible { k: u32, reason: String },

    #[error("stage {k}: parent {parent} produced no children")]
    StageStarved { k: u32, parent: u64 },

    #[error("stage {k} would exceed max_pieces={cap} (needs {needed})")]
    PieceCapExceeded { k: u32, cap: u64, needed: u64 },

    #[error("previous stage is empty")]
    EmptyStage,

    #[error("ledger has too few stages (need > {need})")]
    InsufficientDepth { need: u32 },

    #[error("q={q} is outside both case ranges of stage {k}")]
    CaseRangeError { k: u32, q: u32 },

    #[error("energy exponent must be positive, got {0}")]
    InvalidExponent(f64),

    #[error("line {0} does not occur (often enough) in the schedule")]
    LineNotInSchedule(String),

    #[error("box-count series has no usable slope")]
    SlopeUndefined,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("representative points collide in coordinate {coord}")]
    SampleNotInjective { coord: usize },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("manifest incomplete: {0}")]
    ManifestIncomplete(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
