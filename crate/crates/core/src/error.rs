use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
///
/// Variants are grouped by the stage that raises them; the CLI maps them to
/// exit codes through [`Error::is_degenerate`] and [`Error::is_io`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    // volume I/O
    #[error("unsupported volume format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("unsupported NIfTI datatype code {0} (expected int16, uint8 or float32)")]
    UnsupportedDatatype(i16),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },

    // value contracts
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("degenerate intensity window: lo ({lo}) must be below hi ({hi})")]
    DegenerateRange { lo: f64, hi: f64 },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch { left: [usize; 3], right: [usize; 3] },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),

    // morphology / skeleton / parsing
    #[error("mask has no foreground voxels")]
    EmptyMask,
    #[error("distance target set is empty")]
    EmptyTargetSet,
    #[error("skeleton has {0} connected components; expected one")]
    DisconnectedSkeleton(usize),
    #[error("skeleton has no endpoints to root the tree at")]
    DegenerateSkeleton,
    #[error("tree has not been graded")]
    UngradedTree,
    #[error("tree has not been anatomically labeled")]
    UnlabeledTree,
    #[error("voxel {0:?} is not covered by any branch of the tree")]
    UnparsedTree([usize; 3]),

    // losses
    #[error("centerline is empty")]
    EmptyCenterline,
    #[error("gradient is singular at voxel {index} (p = 0 with gamma < 1)")]
    SingularPoint { index: usize },

    // sampling
    #[error("cannot draw from an empty {0} set")]
    EmptySet(&'static str),
    #[error("inconsistent counts: {0}")]
    InconsistentCounts(String),
    #[error("patch size {size} exceeds volume dims {dims:?}")]
    PatchExceedsVolume { size: usize, dims: [usize; 3] },

    // netshape
    #[error("shape mismatch at {stage}: {left:?} vs {right:?}")]
    ShapeMismatch {
        stage: String,
        left: (usize, [usize; 3]),
        right: (usize, [usize; 3]),
    },
    #[error("input size {size} is not divisible by {divisor}")]
    IndivisibleInput { size: usize, divisor: usize },
    #[error("invalid network config: {0}")]
    InvalidConfig(String),

    // testkit
    #[error("tree does not fit in the volume: {0}")]
    SpecDoesNotFit(String),
    #[error("branch {0} not found")]
    BranchNotFound(usize),
    #[error("gap of {len} voxels does not fit strictly inside branch {branch}")]
    GapTooLarge { branch: usize, len: usize },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnsupportedFormat(_) => "UnsupportedFormat",
            Error::CorruptHeader(_) => "CorruptHeader",
            Error::UnsupportedDatatype(_) => "UnsupportedDatatype",
            Error::Io { .. } => "IoFailure",
            Error::Sidecar { .. } => "CorruptHeader",
            Error::InvalidVolume(_) => "InvalidVolume",
            Error::DegenerateRange { .. } => "DegenerateRange",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::InvalidParams(_) => "InvalidParams",
            Error::OutOfRange(_) => "OutOfRange",
            Error::EmptyMask => "EmptyMask",
            Error::EmptyTargetSet => "EmptyTargetSet",
            Error::DisconnectedSkeleton(_) => "DisconnectedSkeleton",
            Error::DegenerateSkeleton => "DegenerateSkeleton",
            Error::UngradedTree => "UngradedTree",
            Error::UnlabeledTree => "UnlabeledTree",
            Error::UnparsedTree(_) => "UnparsedTree",
            Error::EmptyCenterline => "EmptyCenterline",
            Error::SingularPoint { .. } => "SingularPoint",
            Error::EmptySet(_) => "EmptySet",
            Error::InconsistentCounts(_) => "InconsistentCounts",
            Error::PatchExceedsVolume { .. } => "PatchExceedsVolume",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::IndivisibleInput { .. } => "IndivisibleInput",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::SpecDoesNotFit(_) => "SpecDoesNotFit",
            Error::BranchNotFound(_) => "BranchNotFound",
            Error::GapTooLarge { .. } => "GapTooLarge",
            Error::Json(_) => "Json",
        }
    }

    /// Input could not be read or written, or was not a volume at all.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::UnsupportedFormat(_)
                | Error::CorruptHeader(_)
                | Error::UnsupportedDatatype(_)
                | Error::Io { .. }
                | Error::Sidecar { .. }
                | Error::Json(_)
        )
    }

    /// Degenerate input that the pipeline handles rather than fails on.
    pub fn is_degenerate(&self) -> bool {
        matches!(self, Error::EmptyMask | Error::EmptySet(_))
    }
}
