use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A ciphertext failed authentication (wrong key or tampered bytes).
    #[error("authentication failure: ciphertext rejected")]
    AuthenticationFailure,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("timestamp {time} outside epoch [{start}, {end})")]
    OutOfEpoch { time: u64, start: u64, end: u64 },

    #[error("epoch has no rows")]
    EmptyEpoch,

    #[error("value of {len} bytes does not fit a {width}-byte column")]
    ValueTooLong { len: usize, width: usize },

    #[error("item weight {weight} exceeds bin capacity {capacity}")]
    Capacity { weight: u64, capacity: u64 },

    #[error("bin-count or fake-count bound violated: {0}")]
    BoundViolation(String),

    #[error("{bins} bins cannot be split evenly into {f} super-bins")]
    Divisibility { bins: usize, f: usize },

    #[error("epoch {0} already ingested")]
    DuplicateEpoch(u64),

    #[error("unknown epoch {0}")]
    UnknownEpoch(u64),

    #[error("corrupt package: {0}")]
    CorruptPackage(String),

    #[error("index key not present in epoch")]
    UnknownKey,

    #[error("authentication failed for user {0:?}")]
    AuthFailure(String),

    #[error("user {user:?} may not query data of observation {observation:?}")]
    AuthorizationFailure { user: String, observation: String },

    #[error("integrity verification failed for epoch {0}")]
    IntegrityFailure(u64),

    #[error("epoch {eid} was not ingested with enough padding for {what}")]
    InsufficientPadding { eid: u64, what: &'static str },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
