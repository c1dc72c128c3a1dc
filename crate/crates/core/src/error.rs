use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("insufficient history: {rows} rows cannot support lag {lag}")]
    InsufficientHistory { rows: usize, lag: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("voxel index {index} out of range (voxel count {count})")]
    VoxelOutOfRange { index: usize, count: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("singular design: X^T X is not positive definite")]
    SingularDesign,

    #[error("singular system in {0}")]
    SingularSystem(String),

    #[error("every grid point was degenerate (trace of the hat matrix equals the row count)")]
    DegenerateGcv,

    #[error("fit failed for voxel {voxel}: {source}")]
    VoxelFit {
        voxel: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("coordinate descent did not converge after {iterations} sweeps (kkt residual {kkt_residual:e})")]
    NoConvergence {
        iterations: usize,
        kkt_residual: f64,
        last: Vec<f64>,
    },

    #[error("invalid folds: {0}")]
    InvalidFolds(String),

    #[error("numerical blowup in the {site} update ({what} {index})")]
    NumericalBlowup {
        site: &'static str,
        what: &'static str,
        index: usize,
    },

    #[error("gibbs sweep {sweep} failed: {source}")]
    Sweep {
        sweep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("constant response at voxel {0}")]
    ConstantResponse(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
