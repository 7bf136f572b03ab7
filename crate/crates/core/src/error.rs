use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared across the pipeline modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("utterance too short: {0} samples, need at least {1}")]
    TooShort(usize, usize),
    #[error("unsupported sample rate {0} Hz")]
    BadRate(u32),
    #[error("feature sequence already normalized ({0})")]
    DoubleNormalization(String),
    #[error("utterance {0} has no speaker id")]
    NoSpeaker(String),
    #[error("no data: {0}")]
    NoData(String),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("stale cache: {0}")]
    StaleCache(String),
    #[error("sequence too short to split: {0} output frames")]
    TooShortToSplit(usize),
    #[error("oracle limit exceeded: {0}")]
    OracleLimit(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("degenerate SNR: {0}")]
    DegenerateSnr(String),
    #[error("bad shift: {0}")]
    BadShift(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("manifest line {line} rejected ({reason}): {detail}")]
    ManifestLine {
        line: usize,
        reason: &'static str,
        detail: String,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{module}: {source}")]
    Context {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the name of the pipeline stage it surfaced from.
    pub fn in_module(self, module: &'static str) -> Error {
        Error::Context {
            module,
            source: Box::new(self),
        }
    }
}
