use thiserror::Error;

/// Errors raised across the storage protocol stack.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("field mismatch: operands belong to different prime fields")]
    FieldMismatch,

    #[error("key supply exhausted: requested {requested} bits, {available} available")]
    KeySupply { requested: u64, available: u64 },

    #[error("single-use violation: {0}")]
    SingleUse(&'static str),

    #[error("duplicate interpolation index {0}")]
    DuplicateIndex(String),

    #[error("interpolation index 0 is reserved for the secret")]
    ZeroIndex,

    #[error("improper request: {got} holders named, threshold is {threshold}")]
    ImproperRequest { got: usize, threshold: usize },

    #[error("precomputation exhausted: {needed} tuples needed, {available} available")]
    PrecomputationExhausted { needed: usize, available: usize },

    #[error("password check failed; no data released")]
    PasswordFailure,

    #[error("abort: collected {collected} of {needed} required shares")]
    Abort { collected: usize, needed: usize },

    #[error("unknown registration (id {id}, t1 {t1})")]
    UnknownRegistration { id: u64, t1: u64 },

    #[error("channel integrity failure from {0}")]
    ChannelIntegrity(String),

    #[error("replayed or reordered envelope from {from}: seq {seq} <= {last}")]
    Replay { from: String, seq: u64, last: u64 },

    #[error("no route between {0} and {1}")]
    NoRoute(String, String),

    #[error("malformed message: {0}")]
    Malformed(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("tamper detected in {path} at record {record}")]
    TamperDetected { path: String, record: usize },

    #[error("injected crash")]
    Crash,

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
