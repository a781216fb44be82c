use std::path::Path;

use affekt_core::dataset::DatasetError;
use affekt_core::pipeline::PipelineError;
use serde::Serialize;

/// Exit code for bad usage, invalid configuration or missing stage inputs.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for failures while a stage runs.
pub const EXIT_RUNTIME: i32 = 1;

/// Error printed as one JSON object on stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip)]
    pub code: i32,
}

impl CliError {
    pub fn missing(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError {
            kind: "missing_input",
            message: format!("{}: {e}", path.display()),
            code: EXIT_USAGE,
        }
    }

    pub fn missing_stage(stage: &str, path: &Path) -> Self {
        CliError {
            kind: "missing_input",
            message: format!("{} not found; run `affekt {stage}` first", path.display()),
            code: EXIT_USAGE,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            kind: "invalid_config",
            message: message.into(),
            code: EXIT_USAGE,
        }
    }

    pub fn bad_input(message: impl Into<String>) -> Self {
        CliError {
            kind: "bad_input",
            message: message.into(),
            code: EXIT_RUNTIME,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError {
            kind: "io",
            message: format!("{}: {e}", path.display()),
            code: EXIT_RUNTIME,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message, "exit_code": self.code }).to_string()
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let (kind, code) = match &e {
            PipelineError::Config(_) => ("invalid_config", EXIT_USAGE),
            PipelineError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ("missing_input", EXIT_USAGE)
            }
            PipelineError::Io { .. } => ("io", EXIT_RUNTIME),
            PipelineError::Dataset(DatasetError::MissingFile(_)) => ("missing_input", EXIT_USAGE),
            PipelineError::Signal(_) => ("signal", EXIT_RUNTIME),
            PipelineError::Entropy(_) => ("entropy", EXIT_RUNTIME),
            PipelineError::Feature(_) => ("features", EXIT_RUNTIME),
            PipelineError::Dataset(_) => ("dataset", EXIT_RUNTIME),
            PipelineError::Model(_) => ("model", EXIT_RUNTIME),
            PipelineError::RecordingTooShort { .. } => ("recording_too_short", EXIT_RUNTIME),
            PipelineError::EmptyTask(_) => ("empty_task", EXIT_RUNTIME),
        };
        CliError {
            kind,
            message: e.to_string(),
            code,
        }
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                PipelineError::from(e).into()
            }
        }
    )*};
}

from_core!(
    affekt_core::signal::SignalError,
    affekt_core::entropy::EntropyError,
    affekt_core::features::FeatureError,
    affekt_core::dataset::DatasetError,
    affekt_core::model::ModelError
);
