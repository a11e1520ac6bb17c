use thiserror::Error;

/// Shape or topology mismatch. The message names the offending layer or tensor.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("configuration error: {message}")]
pub struct ConfigError {
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self { message: message.into() }
    }
}

/// An API was called outside its contract (wrong arity, closed session, ...).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("usage error: {message}")]
pub struct UsageError {
    pub message: String,
}

impl UsageError {
    pub fn new(message: impl Into<String>) -> Self {
        Self { message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NumericError {
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckpointError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("checkpoint conflicts with configuration: {0}")]
    ConfigConflict(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WavError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported codec (format tag {0}, bits {1}); only 16-bit PCM is accepted")]
    UnsupportedCodec(u16, u16),
    #[error("unsupported channel count {0}")]
    UnsupportedChannels(u16),
    #[error("truncated chunk: {0}")]
    Truncated(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("enrollment needs at least one utterance embedding")]
    EmptyEnrollment,
    #[error("enrollment mean has norm {0:e}, too small to normalize")]
    DegenerateMean(f64),
    #[error("{active} active embeddings exceed slot capacity {capacity}")]
    Capacity { active: usize, capacity: usize },
    #[error("active slot {0} holds an all-zero embedding")]
    ZeroActive(usize),
    #[error("embedding {index} has norm {norm}, expected unit length or exact zero")]
    NotUnit { index: usize, norm: f64 },
    #[error("embedding dimension {found} does not match expected {expected}")]
    Dimension { found: usize, expected: usize },
    #[error("at least one active embedding is required")]
    NoActive,
    #[error("oracle embedding failed: {0}")]
    Oracle(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("interferer has zero energy but a finite SNR of {0} dB was requested")]
    ZeroEnergyNoise(f64),
    #[error("target has zero energy")]
    ZeroEnergyTarget,
    #[error("invalid mixture spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

impl FormatError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self { line, message: message.into() }
    }
}

/// Umbrella error for the higher-level pipeline entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Usage(#[from] UsageError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
