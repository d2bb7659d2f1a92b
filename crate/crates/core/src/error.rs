use std::path::PathBuf;

/// Errors raised by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    // volume I/O and geometry
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("malformed header {}: {reason}", path.display())]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("raw size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("value {value} at index {index} is not representable as {dtype}")]
    NotRepresentable {
        value: f64,
        index: usize,
        dtype: &'static str,
    },
    #[error("target spacing must be positive, got {0}")]
    NonPositiveTarget(f64),
    #[error("target dimensions must be at least 1, got {0:?}")]
    ZeroTargetDim([usize; 3]),
    #[error("mask has no nonzero voxel")]
    EmptyMask,
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimsMismatch { left: [usize; 3], right: [usize; 3] },
    #[error("index {index} out of range for extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },
    #[error("no connected component below threshold")]
    NoComponentFound,

    // standardization
    #[error("degenerate intensity range: all tallied values equal {0}")]
    DegenerateRange(f64),
    #[error("two histogram summits not found")]
    TwoSummitsNotFound,
    #[error("invalid standardizer config: {0}")]
    InvalidConfig(String),

    // flim
    #[error("voxel {coord:?} outside volume of dims {dims:?}")]
    InvalidCoord { coord: [i64; 3], dims: [usize; 3] },
    #[error("empty patch set")]
    EmptyPatchSet,
    #[error("channel mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("too few patches: {rows} rows for k = {k}")]
    TooFewPatches { rows: usize, k: usize },
    #[error("centroid {0} has zero norm")]
    ZeroCentroid(usize),
    #[error("rank deficient: {nonzero} nonzero eigenvalues, {requested} kernels requested")]
    RankDeficient { nonzero: usize, requested: usize },
    #[error("only {available} candidate kernels for {requested} requested")]
    InsufficientKernels { available: usize, requested: usize },
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("malformed model file: {0}")]
    MalformedModelFile(String),
    #[error("no markers for volume {0}")]
    MissingMarkers(String),

    // archlab
    #[error("layer spec was not evaluated before accepting")]
    SpecNotEvaluated,
    #[error("no candidates to select from")]
    EmptyCandidates,
    #[error("unknown volume id {0}")]
    UnknownVolume(String),
    #[error("invalid session: {0}")]
    InvalidSession(String),

    // classify
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("non-finite feature at sample {sample}, feature {feature}")]
    NonFiniteFeature { sample: usize, feature: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("too few abnormal patients: {0}")]
    TooFewAbnormal(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error on {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
