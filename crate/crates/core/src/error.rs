use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format in {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },

    #[error("corrupt image stream in {path}: {detail}")]
    CorruptImage { path: PathBuf, detail: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("expected {expected} channel(s), found {found}")]
    ChannelCount { expected: String, found: usize },

    #[error("rectangle {rect} does not fit inside a {height}x{width} image")]
    RectOutOfBounds {
        rect: String,
        height: usize,
        width: usize,
    },

    #[error("window of size {window} does not fit a {height}x{width} image")]
    WindowTooLarge {
        window: usize,
        height: usize,
        width: usize,
    },

    #[error("image of size {height}x{width} is too small: {detail}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        detail: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate depth: disparity map is constant")]
    DegenerateDepth,

    #[error("weight file format error: {0}")]
    WeightFormat(String),

    #[error("weight file truncated while reading tensor `{tensor}`")]
    WeightTruncated { tensor: String },

    #[error("duplicate tensor name `{0}` in weight store")]
    DuplicateTensor(String),

    #[error("weight `{name}` has shape {found:?}, expected {expected:?}")]
    WeightShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("missing weight `{0}`")]
    MissingWeight(String),

    #[error("directory {0} contains no files")]
    EmptyDirectory(PathBuf),

    #[error("duplicate pair id `{id}`: {first} and {second}")]
    DuplicateId {
        id: String,
        first: PathBuf,
        second: PathBuf,
    },

    #[error("alignment failed: {0}")]
    AlignmentFailed(String),

    #[error("no matched prediction/ground-truth pairs")]
    NoMatchedPairs,

    #[error("unknown loss term `{0}`")]
    UnknownTerm(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::NotFound(_) | Error::Io { .. } | Error::EmptyDirectory(_)
        )
    }
}
