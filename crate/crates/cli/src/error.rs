use std::path::{Path, PathBuf};

use ovitrap_core::detections::DetectionError;
use ovitrap_core::{DeviceError, EvalError, GeometryError, MergeError};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SCHEMA: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("input not found: {}", .0.display())]
    Missing(PathBuf),
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Missing(_) => EXIT_USAGE,
            CliError::Schema { .. } => EXIT_SCHEMA,
            CliError::Invariant(_) | CliError::Io { .. } => EXIT_INVARIANT,
        }
    }

    pub fn schema(path: &Path, message: impl ToString) -> Self {
        CliError::Schema { path: path.display().to_string(), message: message.to_string() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_input(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Missing(path.to_path_buf()),
        _ => CliError::io(path, e),
    })
}

pub fn write_output(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Geometry problems in a file are schema errors, in flags usage errors.
pub fn geometry_error(e: GeometryError, source: Option<&Path>) -> CliError {
    match source {
        Some(p) => CliError::schema(p, e),
        None => CliError::Usage(e.to_string()),
    }
}

pub fn detection_error(path: &Path, e: DetectionError) -> CliError {
    CliError::schema(path, e)
}

pub fn device_error(path: &Path, e: DeviceError) -> CliError {
    match e {
        DeviceError::Io(io) => CliError::io(path, io),
        DeviceError::Protocol { .. } => CliError::schema(path, e),
        DeviceError::SceneTooDense { .. } | DeviceError::InvalidParams(_) => CliError::Usage(e.to_string()),
        DeviceError::Image(m) => CliError::Invariant(m),
    }
}

pub fn merge_error(path: &Path, e: MergeError) -> CliError {
    CliError::schema(path, e)
}

pub fn eval_error(path: &Path, e: EvalError) -> CliError {
    match e {
        EvalError::BadPitch | EvalError::BadThreshold(_) => CliError::Usage(e.to_string()),
        _ => CliError::schema(path, e),
    }
}
