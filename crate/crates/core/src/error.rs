use thiserror::Error;

/// Errors produced by the pool, the protocol flows, the strategy layer, and
/// the trace front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// No free run large enough to satisfy a reservation. The strategy layer
    /// may flush the page cache and retry before giving up.
    #[error("out of space: no free run of {len} pages")]
    OutOfSpace { len: usize },

    /// Reservation failed even after flushing the page cache.
    #[error("out of memory: no free run of {len} pages after cache flush")]
    OutOfMemory { len: usize },

    /// A flow was invoked on pages whose state does not match its entry
    /// condition, or an illegal page-state transition was attempted.
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    /// Access to an unmapped page of a freed mapping. Accesses to freed but
    /// still-mapped pages succeed silently and only bump `posix_warnings`.
    #[error("use after free: page {page} is unmapped")]
    UseAfterFree { page: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("enclave load failed: {source}")]
    Load { source: Box<Error> },

    /// A strategy error annotated with the 0-based index of the trace event
    /// that triggered it.
    #[error("event {event}: {source}")]
    Replay { event: usize, source: Box<Error> },
}

impl Error {
    /// Coarse error class, used by differential tests to compare failures
    /// from independent implementations.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::OutOfSpace { .. } => "out-of-space",
            Error::OutOfMemory { .. } => "out-of-memory",
            Error::ProtocolViolation(_) => "protocol-violation",
            Error::UseAfterFree { .. } => "use-after-free",
            Error::Parse { .. } => "parse",
            Error::Load { source } => source.category(),
            Error::Replay { source, .. } => source.category(),
        }
    }

    /// Index of the trace event a replay error is attached to, if any.
    pub fn event_index(&self) -> Option<usize> {
        match self {
            Error::Replay { event, .. } => Some(*event),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
