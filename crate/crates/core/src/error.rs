//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong across the alignment, training, inference,
/// and I/O layers. One enum keeps propagation simple; each variant carries
/// enough context to pinpoint the offending signal, subject, or file line.
#[derive(Debug, Error)]
pub enum Error {
    #[error("signal {subject_id}: {sample_count} samples is below the window size {window_size}")]
    SampleCountTooSmall {
        subject_id: String,
        sample_count: usize,
        window_size: usize,
    },

    #[error("invalid target length {target_points} for window of {window_size} samples")]
    InvalidTargetLength {
        target_points: usize,
        window_size: usize,
    },

    #[error("signal {subject_id}: expected {expected} samples, found {actual}")]
    LengthMismatch {
        subject_id: String,
        expected: usize,
        actual: usize,
    },

    #[error("empty signal")]
    EmptySignal,

    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty task set")]
    EmptyTask,

    #[error("loss requires a Siamese bundle, got variant {found}")]
    VariantMismatch { found: String },

    #[error("need {needed} subjects with enough signals, only {available} available")]
    InsufficientSubjects { needed: usize, available: usize },

    #[error("subject {subject_id} has too few signals for the episode layout")]
    InsufficientSignals { subject_id: String },

    #[error("subject {subject_id} has no signals to fine-tune on")]
    EmptySubject { subject_id: String },

    #[error("prediction and label lists differ in length ({preds} vs {labels})")]
    EvalLengthMismatch { preds: usize, labels: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("ROC requires both classes present in the labels")]
    SingleClassInput,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: row has {found} columns, expected {expected}")]
    InconsistentWidth {
        line: usize,
        found: usize,
        expected: usize,
    },

    #[error("line {line}: bad enum value `{value}` for {field}")]
    BadEnum {
        line: usize,
        field: &'static str,
        value: String,
    },

    #[error("checkpoint schema version {found} does not match supported version {supported}")]
    SchemaMismatch { found: u32, supported: u32 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(context: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
