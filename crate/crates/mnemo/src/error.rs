//! Crate-wide error type.

use crate::types::ActionKind;

/// Unified error for every subsystem in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A point or box coordinate falls outside the unit square, is not
    /// finite, or box corners are out of order.
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// An action kind requires a field that was not supplied.
    #[error("action `{kind}` requires field `{field}`")]
    MissingField { kind: ActionKind, field: &'static str },

    /// An action kind forbids a field that was supplied.
    #[error("action `{kind}` does not accept field `{field}`")]
    UnexpectedField { kind: ActionKind, field: &'static str },

    /// An instruction or embedder input was empty.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Consecutive trajectory transitions do not share a screen.
    #[error("transition {index} is not contiguous with its predecessor")]
    NonContiguous { index: usize },

    /// Two widgets in one observation share an id.
    #[error("duplicate widget id `{0}` in observation")]
    DuplicateWidgetId(String),

    /// The remote embedding endpoint failed or returned a non-success status.
    #[error("remote embedder unavailable: {0}")]
    RemoteUnavailable(String),

    /// Two vectors (or a vector and a provider) disagree on dimension.
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// An appended transition does not advance the episodic step counter.
    #[error("non-monotonic step index: {next} after {last}")]
    NonMonotonicStep { last: u32, next: u32 },

    /// The entry being added is already present under the store's
    /// deduplication key.
    #[error("duplicate entry: {0}")]
    DuplicateEntry(String),

    /// A trajectory with no transitions was supplied where steps are needed.
    #[error("trajectory `{0}` has no transitions")]
    EmptyTrajectory(String),

    /// The retrieval mixing weight is outside [0, 1].
    #[error("mixing weight {0} outside [0, 1]")]
    InvalidLambda(f64),

    /// A persisted store failed checksum or structural validation.
    #[error("corrupt store: {0}")]
    CorruptStore(String),

    /// A persisted artifact carries an unsupported format version.
    #[error("{what}: format version {found} unsupported (expected {expected})")]
    VersionMismatch {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    /// A required tag block is missing or out of order in agent output.
    #[error("missing or out-of-order tag <{0}>")]
    MissingTag(&'static str),

    /// The answer payload is not a well-formed action record.
    #[error("malformed answer payload: {0}")]
    MalformedAnswer(String),

    /// The answer payload parsed but the action fails field validation.
    #[error("invalid action: {0}")]
    InvalidAction(String),

    /// A ground-truth record carries fields inconsistent with its kind.
    #[error("inconsistent ground truth: {0}")]
    InconsistentGroundTruth(String),

    /// An empty batch, group, or token sequence was supplied.
    #[error("empty sequence: {0}")]
    EmptySequence(String),

    /// A numeric argument is outside its documented range.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// Two parallel collections differ in length.
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    /// The sample pool cannot satisfy the requested split quotas.
    #[error("pool of {pool} samples cannot fill quotas totalling {needed}")]
    InsufficientPool { pool: usize, needed: usize },

    /// The named task does not exist in the environment fixture.
    #[error("unknown task `{0}`")]
    UnknownTask(String),

    /// `step` was called after the episode terminated.
    #[error("episode already finished")]
    EpisodeFinished,

    /// The named fixture is absent from the fixture manifest.
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    /// A fixture's bytes do not match its manifest checksum.
    #[error("checksum mismatch for fixture `{0}`")]
    ChecksumMismatch(String),

    /// A record line or record file is structurally invalid.
    #[error("invalid record: {0}")]
    InvalidRecord(String),

    /// A configuration file or flag set fails validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
