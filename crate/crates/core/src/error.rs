use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image data: {0}")]
    CorruptData(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("padding {pad} too large for {height}x{width} image")]
    PadTooLarge { pad: usize, height: usize, width: usize },
    #[error("patch size {size} exceeds image {height}x{width}")]
    PatchTooLarge { size: usize, height: usize, width: usize },
    #[error("odd spatial dimension {height}x{width}; pad to even first")]
    OddDimension { height: usize, width: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value encountered in {0}")]
    NumericFault(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("batch size {batch_size} exceeds dataset size {dataset_size}")]
    BatchTooLarge { batch_size: usize, dataset_size: usize },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch (file truncated or corrupt)")]
    ChecksumMismatch,
    #[error("image {height}x{width} smaller than SSIM window {window}")]
    ImageTooSmall { height: usize, width: usize, window: usize },
    #[error("no images found in {0}")]
    EmptyDirectory(PathBuf),
    #[error("{} file(s) could not be decoded: {}", .0.len(), .0.iter().map(|(p, e)| format!("{}: {e}", p.display())).collect::<Vec<_>>().join("; "))]
    DecodeFailure(Vec<(PathBuf, String)>),
    #[error("too few images ({0}) to form non-empty train and validation splits")]
    TooFewImages(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure { path: path.into(), source }
    }
}
