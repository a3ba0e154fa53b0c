use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("raster geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("cell (row {row}, col {col}) out of bounds for {rows}x{cols} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("raster has no valid (non-nodata) cells")]
    AllNodata,

    #[error("domain error at cell (row {row}, col {col}): {message}")]
    CellDomain {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("extents do not overlap: {0}")]
    DisjointExtents(String),

    #[error("building csv row {row}, column `{column}`: {message}")]
    Building {
        row: usize,
        column: String,
        message: String,
    },

    #[error("building csv is missing required column `{0}`")]
    MissingColumn(String),

    #[error("aggregates come from different hexagonal grids: {0}")]
    GridMismatch(String),

    #[error("geocoding service failure: {0}")]
    Service(String),

    #[error("malformed geocoding response for `{address}`: {message}")]
    MalformedResponse { address: String, message: String },

    #[error("spatial weights: {0}")]
    Weights(String),

    #[error("vector length {actual} does not match {expected} observations")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("coefficient {coef} outside feasible interval ({lower}, {upper})")]
    Infeasible { coef: f64, lower: f64, upper: f64 },

    #[error("design matrix is rank deficient; collinear columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },

    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),

    #[error("zero-variance input: {0}")]
    ZeroVariance(String),

    #[error("{0}")]
    Empty(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error on {path}: {source}")]
    PathIo {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn path_io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::PathIo {
            path: path.into(),
            source,
        }
    }
}
