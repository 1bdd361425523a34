use std::io;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or insecure encryption parameters.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Operands that cannot be combined (different moduli, degrees, parameter sets).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("range error: {0}")]
    Range(String),

    /// A real value does not fit the plaintext space at the requested scale.
    #[error("quantization overflow: {0}")]
    QuantizationOverflow(String),

    #[error("scale mismatch: {left} vs {right}")]
    ScaleMismatch { left: u32, right: u32 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A serialized artifact could not be parsed.
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported layer: {0}")]
    UnsupportedLayer(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("depth unreachable at this level: {0}")]
    DepthUnreachable(String),

    #[error("missing relinearization keys")]
    MissingRelinKeys,

    /// A structural security invariant was violated (e.g. secret material in a package).
    #[error("security violation: {0}")]
    Security(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("vault mismatch: {0}")]
    VaultMismatch(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    /// Network failure; retriable, carries the job it belonged to.
    #[error("network error (job {job_id}): {source}")]
    Network {
        job_id: u64,
        #[source]
        source: io::Error,
    },

    /// Error reported by the remote peer in an ERROR frame.
    #[error("remote error: {0}")]
    Remote(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable kind, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Usage(_) => "usage",
            Error::Range(_) => "range",
            Error::QuantizationOverflow(_) => "overflow",
            Error::ScaleMismatch { .. } => "scale_mismatch",
            Error::Dimension(_) => "dimension",
            Error::Format(_) => "format",
            Error::Version { .. } => "version",
            Error::Checksum { .. } => "checksum",
            Error::UnsupportedLayer(_) => "unsupported_layer",
            Error::Training { .. } => "training",
            Error::DepthUnreachable(_) => "depth_unreachable",
            Error::MissingRelinKeys => "missing_relin_keys",
            Error::Security(_) => "security",
            Error::NotFound(_) => "not_found",
            Error::VaultMismatch(_) => "vault_mismatch",
            Error::Protocol(_) => "protocol",
            Error::Network { .. } => "network",
            Error::Remote(_) => "remote",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
