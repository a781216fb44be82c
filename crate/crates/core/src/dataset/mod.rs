//! Recording ingestion, labeling, class balancing, splitting and the
//! synthetic EEG generator.

mod bids;
mod labels;
mod smote;
mod split;
mod synth;

pub use bids::{load_recording, write_recording, RecordingSidecar, EVENTS_HEADER};
pub use labels::{extract_windows, label_from_ratings, LabelConfig, LabelTable, RatingDimension, WindowReport};
pub use smote::{smote_resample, Provenance, SmoteOutput, SmoteSpec};
pub use split::{into_batches, split_and_batch, stratified_split, SplitAssignment, SplitBatches, SplitRatios};
pub use synth::{synth_generate, synth_subject, Affect, ClassSpec, EmotionClass, SynthSpec};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: declared {expected} values, file holds {actual}")]
    ShapeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("events row {row}: {reason}")]
    MalformedEvent { row: usize, reason: String },
    #[error("bad sidecar {path}: {reason}")]
    BadSidecar { path: PathBuf, reason: String },
    #[error("unknown emotion name {0:?}")]
    UnknownEmotionName(String),
    #[error("class {class} has {count} samples, SMOTE needs more than {k}")]
    ClassTooSmall { class: u32, count: usize, k: usize },
    #[error("class {0} has no windows")]
    EmptyClass(u32),
    #[error("invalid dataset parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.into(),
            source,
        }
    }
}

/// One annotated stimulus interval from `events.tsv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionEvent {
    pub onset_s: f64,
    pub duration_s: f64,
    pub trial_type: String,
    pub valence: f64,
    pub arousal: f64,
    pub emotion_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinaryLabel {
    Negative,
    Positive,
}

impl BinaryLabel {
    /// Class index of the two-class head.
    pub fn index(self) -> usize {
        match self {
            BinaryLabel::Negative => 0,
            BinaryLabel::Positive => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            BinaryLabel::Negative
        } else {
            BinaryLabel::Positive
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLabel {
    /// `None` for neutral windows.
    pub binary: Option<BinaryLabel>,
    pub categorical: u32,
}

/// Fixed-length `channels x window_len` slice of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub data: Vec<Vec<f64>>,
    pub label: ClassLabel,
    pub subject_id: String,
    pub window_id: String,
}

pub const DEFAULT_WINDOW_LEN: usize = 1500;
