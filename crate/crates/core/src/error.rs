//! Error type shared by every protocol in the crate.

use thiserror::Error;

/// Everything that can go wrong while building sketches, decoding them or
/// running a session.
#[derive(Debug, Error)]
pub enum Error {
    #[error("tables or sketches differ in shape")]
    ShapeMismatch,
    #[error("malformed bytes: {0}")]
    MalformedBytes(String),
    #[error("decode failed at stage {stage}")]
    DecodeFailed { stage: &'static str },
    #[error("verification hash mismatch at stage {stage}")]
    VerifyMismatch { stage: &'static str },
    #[error("value out of range: {0}")]
    RangeExceeded(String),
    #[error("interpolation failed")]
    InterpolationFailure,
    #[error("polynomial does not split into distinct roots in the universe")]
    RootFailure,
    #[error("no child decodes against an extracted encoding")]
    NoMatchFound,
    #[error("children left unrecovered after the last table")]
    ResidualChildren,
    #[error("gave up once the trial bound exceeded {0}")]
    GiveUp(u64),
    #[error("instance too large for the exhaustive oracle: {0}")]
    OracleScaleExceeded(String),
    #[error("instance too large: {0}")]
    ScaleExceeded(String),
    #[error("two candidate signatures are within the matching threshold")]
    AmbiguousMatch,
    #[error("no signature within the matching threshold")]
    NoMatch,
    #[error("reconstruction failed: {0}")]
    ReconstructionFailure(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("framing error: {0}")]
    Framing(#[from] FramingError),
    #[error("peer disconnected")]
    PeerDisconnected,
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Byte-level problems with a frame on the wire.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FramingError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    VersionMismatch(u8),
    #[error("crc mismatch")]
    CrcMismatch,
    #[error("truncated frame")]
    Truncated,
    #[error("payload of {0} bytes exceeds the frame limit")]
    Oversized(usize),
}

impl Error {
    /// Short machine-readable name of the failing stage, used in reports.
    pub fn stage(&self) -> String {
        match self {
            Error::DecodeFailed { stage } | Error::VerifyMismatch { stage } => (*stage).to_string(),
            other => {
                let dbg = format!("{other:?}");
                dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("").to_string()
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
