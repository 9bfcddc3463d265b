use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("io error: {0}")]
    IoFailure(#[from] std::io::Error),

    // grid construction
    #[error("data length {actual} does not match dims {dims:?} (expected {expected})")]
    DataLength {
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },
    #[error("dims must be positive, got {0:?}")]
    ZeroDim([usize; 3]),
    #[error("spacing must be finite and strictly positive, got {0:?}")]
    NonPositiveSpacing([f64; 3]),
    #[error("geometry mismatch: {left} vs {right}")]
    GeometryMismatch { left: String, right: String },

    // nrrd
    #[error("not an NRRD file (magic line {0:?})")]
    BadMagic(String),
    #[error("missing required header field `{0}`")]
    MissingHeaderField(&'static str),
    #[error("unsupported encoding `{0}` (raw and gzip only)")]
    UnsupportedEncoding(String),
    #[error("unsupported sample type `{0}`")]
    UnsupportedType(String),
    #[error("unsupported endianness `{0}` (little only)")]
    UnsupportedEndian(String),
    #[error("malformed header field `{field}`: {reason}")]
    MalformedHeader { field: String, reason: String },
    #[error("payload holds {actual} bytes but header implies {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("grid holds non-binary values and cannot be read as a mask")]
    NotBinary,

    #[error("downsample factor {factor:?} exceeds dims {dims:?}")]
    FactorExceedsDim { factor: [usize; 3], dims: [usize; 3] },

    // quality / metrics
    #[error("mask is empty")]
    EmptyMask,
    #[error("no background voxels remain after excluding the foreground margin")]
    EmptyBackground,
    #[error("foreground mean {fg} does not exceed background mean {bg}")]
    DegenerateContrast { fg: f64, bg: f64 },
    #[error("truth must contain both foreground and background voxels")]
    DegenerateTruth,
    #[error("empty input")]
    EmptyInput,

    // preprocess
    #[error("volume is constant; cannot normalize")]
    ConstantVolume,
    #[error("tile grid {tiles:?} exceeds slice size {slice:?}")]
    TooManyTiles { tiles: [usize; 2], slice: [usize; 2] },
    #[error("invalid parameter: {0}")]
    InvalidSpec(String),
    #[error("no base volume/mask registered")]
    NoBaseData,

    // pipeline
    #[error("thresholding produced no foreground")]
    NoForeground,
    #[error("patch dims {patch:?} do not match box size {size:?}")]
    BoxInconsistent { patch: [usize; 3], size: [usize; 3] },
    #[error("mask extent {extent} exceeds roi size {size} along axis {axis}")]
    RoiTooSmall { axis: usize, extent: usize, size: usize },
    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },
    #[error("missing prediction for case `{0}`")]
    MissingPrediction(String),

    // stats
    #[error("no cases to aggregate")]
    EmptyCases,
    #[error("sample is degenerate: {0}")]
    DegenerateSample(String),
    #[error("sample is constant")]
    ConstantSample,
    #[error("attribute `{0}` does not split teams into two or more groups")]
    DegeneratePartition(String),
    #[error("team `{team}` case set differs from team `{reference}`")]
    CaseSetMismatch { team: String, reference: String },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    // phantom
    #[error("phantom geometry leaves the grid: {0}")]
    GeometryOutOfBounds(String),
    #[error("quality tier {0} is unreachable with the given intensities")]
    InfeasibleTier(String),

    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
