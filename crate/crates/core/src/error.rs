//! Error type shared by every module of the crate.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    /// A game or behavior table is incomplete, out of range, or not normalised.
    #[error("malformed spec: {0}")]
    MalformedSpec(String),

    /// Exact enumeration would exceed the configured cell budget.
    #[error("enumeration needs {cells} cells, budget is {budget}")]
    SpaceTooLarge { cells: u128, budget: u128 },

    /// The identifying linear system has no unique solution.
    #[error("singular identification system at (s={s}, u={u}): {reason}")]
    SingularSystem { s: usize, u: usize, reason: String },

    /// The sieve basis is not linearly independent on the supplied support.
    #[error("rank-deficient basis: Gram rank {rank} < {k} terms")]
    RankDeficientBasis { rank: usize, k: usize },

    /// Too few rows to fit the requested number of basis terms.
    #[error("insufficient data: {rows} rows for {needed} basis terms")]
    InsufficientData { rows: usize, needed: usize },

    /// The instrument has (near) zero conditional variance in some cell.
    #[error("degenerate instrument at (s={s}, u={u}): variance {variance:e}")]
    DegenerateIV { s: usize, u: usize, variance: f64 },

    /// The minimum-distance problem is unbounded below along a null direction.
    #[error("ill-posed fit: gradient has weight {residual:e} on the Hessian null space")]
    IllPosedFit { residual: f64 },

    /// A coefficient vector does not match the basis of a region or fit.
    #[error("basis mismatch: expected {expected} coefficients, got {got}")]
    BasisMismatch { expected: usize, got: usize },

    /// A linear objective is unbounded below over a confidence region.
    #[error("objective unbounded below over region along direction {direction:?}")]
    UnboundedBelow { direction: Vec<f64> },

    /// A policy class with no members was supplied.
    #[error("empty policy class")]
    EmptyClass,

    /// A dataset or report file does not match the documented schema.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    /// A dataset row could not be parsed.
    #[error("corrupt row at line {line}: {reason}")]
    CorruptRow { line: usize, reason: String },

    /// Error raised while processing one stage of a backward recursion.
    #[error("stage {stage} ({player}, {block}): {source}")]
    Stage {
        stage: String,
        player: String,
        block: String,
        #[source]
        source: Box<Error>,
    },

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with the stage, player and block it came from.
    pub fn at_stage(self, stage: impl Into<String>, player: impl Into<String>, block: impl Into<String>) -> Error {
        Error::Stage {
            stage: stage.into(),
            player: player.into(),
            block: block.into(),
            source: Box::new(self),
        }
    }

    /// Returns the innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
