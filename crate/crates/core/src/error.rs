use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed scan: {len} bytes is not a multiple of 16")]
    MalformedScan { len: usize },

    #[error("calibration parse error: missing key `{key}`")]
    MissingCalibrationKey { key: String },

    #[error("calibration parse error: key `{key}` expects {expected} values, found {found}")]
    CalibrationValueCount { key: String, expected: usize, found: usize },

    #[error("calibration parse error: key `{key}`: {value:?} is not a number")]
    CalibrationValue { key: String, value: String },

    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate training set: {0}")]
    DegenerateTraining(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no valid pixels under the mask")]
    EmptyMask,

    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("metrics protocol error: {0}")]
    Protocol(String),

    #[error("depth {depth} m at pixel ({x}, {y}) does not fit the 16-bit depth codec")]
    DepthRange { depth: f64, x: usize, y: usize },

    #[error("unsupported depth image format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("model container: {0}")]
    ModelFormat(String),

    #[error("scene description line {line}: {reason}")]
    Scene { line: usize, reason: String },

    #[error("no in-frustum LiDAR points to densify")]
    NoData,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("png encoding: {0}")]
    PngEncode(#[from] png::EncodingError),
}
