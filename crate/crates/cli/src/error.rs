use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    Runtime,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 1,
            ErrorKind::Runtime => 2,
        }
    }
}

/// The record printed to stderr (one JSON line) when a command fails.
#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub kind: ErrorKind,
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn validation(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            code,
            message: message.into(),
        }
    }

    pub fn runtime(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Runtime,
            code,
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<brainreg::Error> for CliError {
    fn from(e: brainreg::Error) -> Self {
        use brainreg::Error as E;
        let message = e.to_string();
        let (kind, code) = match &e {
            E::Dimension(_) => (ErrorKind::Validation, "dimension"),
            E::InvalidParameter { .. } => (ErrorKind::Validation, "invalid_parameter"),
            E::InsufficientHistory { .. } => (ErrorKind::Validation, "insufficient_history"),
            E::InsufficientData(_) => (ErrorKind::Validation, "insufficient_data"),
            E::VoxelOutOfRange { .. } => (ErrorKind::Validation, "voxel_out_of_range"),
            E::InvalidPartition(_) => (ErrorKind::Validation, "invalid_partition"),
            E::InvalidGeometry(_) => (ErrorKind::Validation, "invalid_geometry"),
            E::InvalidFolds(_) => (ErrorKind::Validation, "invalid_folds"),
            E::Format(_) => (ErrorKind::Validation, "format"),
            E::SingularDesign => (ErrorKind::Runtime, "singular_design"),
            E::SingularSystem(_) => (ErrorKind::Runtime, "singular_system"),
            E::DegenerateGcv => (ErrorKind::Runtime, "degenerate_gcv"),
            E::VoxelFit { .. } => (ErrorKind::Runtime, "voxel_fit"),
            E::NoConvergence { .. } => (ErrorKind::Runtime, "no_convergence"),
            E::NumericalBlowup { .. } => (ErrorKind::Runtime, "numerical_blowup"),
            E::Sweep { .. } => (ErrorKind::Runtime, "sweep"),
            E::ConstantResponse(_) => (ErrorKind::Runtime, "constant_response"),
            E::Io { .. } => (ErrorKind::Runtime, "io"),
        };
        Self { kind, code, message }
    }
}

pub type CliResult<T> = Result<T, CliError>;
