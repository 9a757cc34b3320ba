//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the pipeline stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    // --- signal ---
    #[error("unsupported rate conversion {src} Hz -> {dst} Hz (integer decimation only)")]
    UnsupportedRate { src: u32, dst: u32 },
    #[error("empty signal")]
    EmptySignal,
    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),
    #[error("record sampled at {actual} Hz, expected {expected} Hz")]
    RateMismatch { expected: u32, actual: u32 },
    #[error("lead {lead} is flat (peak-to-peak {range} mV below 1e-6 mV)")]
    FlatLead { lead: usize, range: f64 },

    // --- segmentation ---
    #[error("lead {0:?} not present in record")]
    LeadMissing(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    // --- nn ---
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch normalization needs a training batch of at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    // --- models ---
    #[error("lead count mismatch: model expects {expected}, features carry {actual}")]
    LeadCountMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    // --- protocol ---
    #[error("too few subjects: {have} available, {need} required")]
    TooFewSubjects { have: usize, need: usize },
    #[error("subject {subject}: {have} summary segments in session {session}, {need} required")]
    InsufficientSummaries {
        subject: String,
        session: u32,
        have: usize,
        need: usize,
    },
    #[error("no subjects remain after applying the exclusion list")]
    EmptyAfterExclusion,
    #[error("subject {0} has no summary segments for the requested scenario")]
    NoSummaries(String),

    // --- metrics ---
    #[error("empty score list: {0}")]
    EmptyScores(&'static str),
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },

    // --- dataset / persistence ---
    #[error("invalid manifest {path}: {reason}")]
    ManifestInvalid { path: PathBuf, reason: String },
    #[error("cannot read record {path}: {reason}")]
    RecordUnreadable { path: PathBuf, reason: String },
    #[error("record {path}: {actual} leads, manifest declares {expected}")]
    LeadMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("checksum mismatch in {0} (file truncated or corrupted)")]
    ChecksumMismatch(PathBuf),
    #[error("unsupported format version {found} in {path} (this build reads up to {supported})")]
    VersionUnsupported {
        path: PathBuf,
        found: u32,
        supported: u32,
    },
    #[error("invalid synthesis parameters: {0}")]
    InvalidParams(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A pipeline error annotated with the (subject, session) it occurred in.
    #[error("subject {subject} session {session}: {source}")]
    Context {
        subject: String,
        session: u32,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn with_context(self, subject: &str, session: u32) -> Self {
        Error::Context {
            subject: subject.to_string(),
            session,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
