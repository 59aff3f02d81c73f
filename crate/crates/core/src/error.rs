use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: need at least {min} samples, got {actual}")]
    SignalTooShort { min: usize, actual: usize },

    #[error("length mismatch: expected {expected} samples, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },

    #[error("degenerate reference set: Gram matrix is near-singular (min pivot {min_pivot:e})")]
    DegenerateGram { min_pivot: f64 },

    #[error(transparent)]
    Weights(#[from] WeightsError),

    #[error(transparent)]
    Audio(#[from] AudioError),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("serialization: {0}")]
    Serialize(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable short identifier used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SignalTooShort { .. } => "signal_too_short",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Empty(_) => "empty_input",
            Error::NonFinite { .. } => "non_finite",
            Error::DegenerateGram { .. } => "degenerate_gram",
            Error::Weights(e) => e.kind(),
            Error::Audio(e) => e.kind(),
            Error::Config(e) => e.kind(),
            Error::Serialize(_) => "serialize",
            Error::Io(_) => "io",
        }
    }
}

/// Failures while decoding a decoder weight file.
#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("bad magic: expected \"GPRW\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported weight file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("dimension mismatch in layer {layer}: {detail}")]
    DimensionMismatch { layer: usize, detail: String },

    #[error("truncated weight file: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("{extra} unexpected trailing bytes after checksum")]
    TrailingBytes { extra: usize },

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("non-finite weight in layer {layer}")]
    NonFiniteWeight { layer: usize },
}

impl WeightsError {
    pub fn kind(&self) -> &'static str {
        match self {
            WeightsError::BadMagic { .. } => "weights_bad_magic",
            WeightsError::VersionMismatch { .. } => "weights_version",
            WeightsError::DimensionMismatch { .. } => "weights_dimension",
            WeightsError::Truncated { .. } => "weights_truncated",
            WeightsError::TrailingBytes { .. } => "weights_trailing_bytes",
            WeightsError::Checksum { .. } => "weights_checksum",
            WeightsError::NonFiniteWeight { .. } => "weights_non_finite",
        }
    }
}

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed audio header: {0}")]
    MalformedHeader(String),

    #[error("mono required: file has {channels} channels")]
    NotMono { channels: u16 },

    #[error("unsupported sample rate {found} Hz: expected {expected} Hz (resample the file first)")]
    SampleRate { found: u32, expected: u32 },

    #[error("unsupported sample format: expected 16-bit signed integer PCM, found {bits}-bit {format}")]
    BitDepth { bits: u16, format: &'static str },
}

impl AudioError {
    pub fn kind(&self) -> &'static str {
        match self {
            AudioError::MalformedHeader(_) => "audio_malformed_header",
            AudioError::NotMono { .. } => "audio_not_mono",
            AudioError::SampleRate { .. } => "audio_sample_rate",
            AudioError::BitDepth { .. } => "audio_bit_depth",
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        message: String,
        line: usize,
        column: usize,
    },

    #[error("unknown config key at line {line}, column {column}: {message}")]
    UnknownKey {
        message: String,
        line: usize,
        column: usize,
    },

    #[error("config value `{key}` = {value} out of range: {bound}")]
    OutOfRange {
        key: String,
        value: String,
        bound: String,
    },
}

impl ConfigError {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::Parse { .. } => "config_parse",
            ConfigError::UnknownKey { .. } => "config_unknown_key",
            ConfigError::OutOfRange { .. } => "config_out_of_range",
        }
    }
}
