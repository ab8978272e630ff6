use std::io;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    // image I/O
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("truncated pixel data: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("unsupported maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(u32),
    #[error("zero output dimension")]
    ZeroDimension,
    #[error("rectangle ({x0},{y0}) {w}x{h} outside a {width}x{height} image")]
    OutOfBounds {
        x0: usize,
        y0: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },

    // gabor / pipeline
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("wavelength must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("unknown pipeline variant `{0}`")]
    UnknownVariant(String),
    #[error("empty image")]
    EmptyImage,

    // dataset
    #[error("render size {0} is below the minimum of 16")]
    TooSmall(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("distance {0} cm is not present in the dataset")]
    UnknownDistance(f64),
    #[error("crop side {side} does not fit a {width}x{height} image")]
    CropLargerThanImage {
        side: usize,
        width: usize,
        height: usize,
    },
    #[error("empty dataset")]
    EmptyDataset,

    // nn / optim
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by {0}")]
    NonFiniteValue(String),
    #[error("backward called without a cached train-mode forward")]
    NoCachedForward,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("unsupported input channel count {0} (expected 1, 8 or 16)")]
    UnsupportedChannels(usize),
    #[error("epoch {epoch} outside [0, {total})")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,

    // svm / probe
    #[error("training labels contain a single class")]
    SingleClassInput,
    #[error("non-finite feature value")]
    NonFiniteFeature,
    #[error("feature dimension {found} does not match model dimension {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("block index {index} outside 1..={available}")]
    BadBlockIndex { index: usize, available: usize },

    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
