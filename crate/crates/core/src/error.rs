use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("no creditors")]
    NoCreditors,
    #[error("non-finite input")]
    NonFinite,
    #[error("{creditors} creditors but {claims} claims")]
    LengthMismatch { creditors: usize, claims: usize },
    #[error("duplicate creditor `{0}`")]
    DuplicateCreditor(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(&'static str),
    #[error("target {target} outside [0, {total}]")]
    TargetOutOfRange { target: f64, total: f64 },

    #[error("exact Shapley table too large ({0} players, limit 24)")]
    GameTooLarge(usize),
    #[error("oracle limited to small games ({0} players, limit 4)")]
    OracleTooLarge(usize),
    #[error("game table must have {expected} entries, got {got}")]
    GameTableSize { expected: usize, got: usize },
    #[error("value of the empty coalition must be 0, got {0}")]
    EmptyCoalitionValue(f64),
    #[error("allocation has {got} entries for {expected} players")]
    AllocationLength { expected: usize, got: usize },
    #[error("allocation sums to {sum}, grand coalition is worth {grand}")]
    Inefficient { sum: f64, grand: f64 },
    #[error("excess vectors differ in length ({0} vs {1})")]
    ExcessLength(usize, usize),

    #[error("party `{0}`: {1}")]
    Party(String, &'static str),
    #[error("parties are not row-aligned")]
    Misaligned,
    #[error("invalid training config: {0}")]
    Config(&'static str),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("non-finite loss at round {round}, batch {batch} (learning rate too high?)")]
    NonFiniteLoss { round: usize, batch: usize },
}
