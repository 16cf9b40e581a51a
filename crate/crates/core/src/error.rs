use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite intensity at voxel {index} ({x}, {y}, {z})")]
    NonFinite {
        index: usize,
        x: usize,
        y: usize,
        z: usize,
    },

    #[error("grid mismatch: {left:?} vs {right:?}")]
    GridMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("crop box {lo:?}..{hi:?} does not intersect a volume of dims {dims:?}")]
    CropOutside {
        lo: [i64; 3],
        hi: [i64; 3],
        dims: [usize; 3],
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("class {0} has no voxels")]
    EmptyClass(u8),

    #[error("mask is empty; {0} is undefined")]
    EmptyMask(&'static str),

    #[error("layer {layer}: {message}")]
    Shape { layer: String, message: String },

    #[error("non-finite {what} in layer {layer}")]
    NonFiniteTraining { layer: String, what: &'static str },

    #[error("training diverged at epoch {epoch}, step {step}: {source}")]
    Diverged {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no voxel of organ {organ} was predicted; fall back to a full-volume crop")]
    EmptyPrediction { organ: u8 },

    #[error("infeasible phantom geometry: {0}")]
    Geometry(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: expected {expected} payload bytes, found {found}")]
    LengthMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: file holds {found} voxels, expected {expected}")]
    ValueKind {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
