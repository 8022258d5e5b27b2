use thiserror::Error;

/// Errors raised by the core pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("event stream is empty")]
    EmptyStream,

    #[error("timestamps decrease at record {index}: {previous} -> {current} (slack {slack} us)")]
    UnsortedInput {
        index: usize,
        previous: u64,
        current: u64,
        slack: u64,
    },

    #[error("pixel ({u}, {v}) outside {width}x{height} sensor")]
    OutOfBounds {
        u: i64,
        v: i64,
        width: u16,
        height: u16,
    },

    #[error("malformed record {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },

    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },

    #[error("variance map is zero everywhere")]
    DegenerateVariance,

    #[error("sampling mass exhausted after {drawn} of {requested} draws")]
    MassExhausted { drawn: usize, requested: usize },

    #[error("descriptor length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("sensor geometry mismatch: {left:?} vs {right:?}")]
    GeometryMismatch { left: (u16, u16), right: (u16, u16) },

    #[error("sequence length must be a positive odd integer, got {0}")]
    BadSequenceLength(usize),

    #[error("time {t} us not covered by pose track [{first}, {last}]")]
    TrackCoverageGap { t: f64, first: u64, last: u64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let index = err
            .position()
            .map(|p| p.record() as usize)
            .unwrap_or_default();
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            kind => Error::MalformedRecord {
                index,
                reason: format!("{kind:?}"),
            },
        }
    }
}
