use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed track file header: {0}")]
    MalformedHeader(String),

    #[error("non-finite coordinate inside streamline {streamline}")]
    NonFiniteCoordinate { streamline: usize },

    #[error("truncated track file: body ends without terminator")]
    Truncated,

    #[error("invalid streamline: {0}")]
    InvalidStreamline(String),

    #[error("point ({x}, {y}, {z}) lies outside the grid")]
    OutsideGrid { x: f64, y: f64, z: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geometry does not fit the grid: {0}")]
    GeometryDoesNotFit(String),

    #[error("no in-grid rotation found after {0} attempts")]
    RotationFailed(usize),

    #[error("degenerate subset: {0}")]
    DegenerateSubset(String),

    #[error("unknown streamline id {0}")]
    UnknownId(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("fold {fold} has no samples of class {class}")]
    MissingClassInFold { fold: usize, class: usize },

    #[error("no subset size satisfies the retention criterion")]
    NoMinSubsetSize,

    #[error("invalid file format: {0}")]
    Format(String),
}
