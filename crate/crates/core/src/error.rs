use std::path::PathBuf;

/// Every failure the toolkit reports.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed RIFF/WAVE container: {0}")]
    MalformedContainer(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio contains no samples")]
    EmptyAudio,
    #[error("waveform contains a non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("signal too short: {len} samples after padding, need {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("window-sum normalizer {value:e} below threshold at sample {index}")]
    DegenerateWindowSum { index: usize, value: f64 },
    #[error("invalid spectrogram: {0}")]
    InvalidSpectrogram(String),
    #[error("invalid value: {0}")]
    InvalidInput(String),
    #[error("clean signal is silent")]
    SilentClean,
    #[error("missing audio file {}", .0.display())]
    MissingAudio(PathBuf),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("split `{0}` has no entries")]
    EmptySplit(String),
    #[error("checkpoint version {found} does not match supported version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("zero variance in score vector")]
    DegenerateVariance,
    #[error("i/o failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by the caller's data rather than by the program.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Diverged { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
