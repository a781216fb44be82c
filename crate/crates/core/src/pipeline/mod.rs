//! End-to-end composition: configuration, per-recording preprocessing,
//! featurization, task construction and the in-memory experiment runner.

mod config;
mod stream;

pub use config::{DataPaths, EntropyReportSpec, ModelSpec, PipelineConfig, StageSeeds, WindowSource};
pub use stream::{
    stream_classify, CnnWindowClassifier, InterventionEvent, ScriptedClassifier, Strategy, StrategyPolicy,
    StreamConfig, StreamReport, WindowClassification, WindowClassifier,
};

use std::time::Instant;

use thiserror::Error;

use crate::dataset::{
    extract_windows, smote_resample, stratified_split, DatasetError, EmotionEvent, LabelTable, LabeledWindow,
    Provenance, SmoteSpec, SplitAssignment,
};
use crate::entropy::EntropyError;
use crate::features::{build_feature_matrix, FeatureError, FeatureMatrix};
use crate::model::{evaluate, train, Example, ModelError, Task, TaskMetrics, TrainOutcome};
use crate::signal::{design_filter, zscore, FilterRealization, FilterSpec, Recording, SignalError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("recording has {n_samples} samples, shorter than one {window_len}-sample window")]
    RecordingTooShort { n_samples: usize, window_len: usize },
    #[error("no windows carry a label for the {0:?} task")]
    EmptyTask(Task),
}

/// Designs each filter at the recording's sample rate. The rate stored in a
/// configured spec is replaced so one config serves any input rate.
pub fn design_filters(specs: &[FilterSpec], sample_rate_hz: f64) -> Result<Vec<FilterRealization>, PipelineError> {
    specs
        .iter()
        .map(|s| {
            let spec = FilterSpec {
                sample_rate_hz,
                ..s.clone()
            };
            Ok(design_filter(&spec)?)
        })
        .collect()
}

/// Zero-phase filter chain, then per-channel standard score.
pub fn preprocess(rec: &Recording, filters: &[FilterRealization]) -> Recording {
    let filtered = rec.map_channels(|x| filters.iter().fold(x.to_vec(), |acc, f| f.filtfilt(&acc)));
    zscore(&filtered)
}

/// Preprocesses one recording and cuts its event windows.
pub fn subject_windows(
    rec: &Recording,
    events: &[EmotionEvent],
    cfg: &PipelineConfig,
    table: &mut LabelTable,
) -> Result<Vec<LabeledWindow>, PipelineError> {
    let filters = design_filters(&cfg.filters, rec.sample_rate_hz)?;
    let clean = preprocess(rec, &filters);
    let (windows, report) = extract_windows(&clean, events, cfg.window_len, &cfg.labels, table)?;
    log::info!(
        "{}: {} windows, {} events skipped",
        rec.subject_id,
        report.extracted,
        report.skipped
    );
    Ok(windows)
}

/// Flattened feature images plus labels, the shape training consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub n_channels: usize,
    pub n_bins: usize,
    pub values: Vec<Vec<f64>>,
    pub labels: Vec<crate::dataset::ClassLabel>,
    pub table: LabelTable,
}

impl FeatureSet {
    pub fn new(table: LabelTable) -> Self {
        FeatureSet {
            n_channels: 0,
            n_bins: 0,
            values: Vec::new(),
            labels: Vec::new(),
            table,
        }
    }

    pub fn push(&mut self, m: FeatureMatrix) -> Result<(), PipelineError> {
        if self.values.is_empty() {
            self.n_channels = m.n_channels;
            self.n_bins = m.n_bins;
        } else if (m.n_channels, m.n_bins) != (self.n_channels, self.n_bins) {
            return Err(PipelineError::Config(format!(
                "feature matrix {} is {}x{}, expected {}x{}",
                m.source_window_id, m.n_channels, m.n_bins, self.n_channels, self.n_bins
            )));
        }
        self.values.push(m.values);
        self.labels.push(m.label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn categorical_ids(&self) -> Vec<u32> {
        self.labels.iter().map(|l| l.categorical).collect()
    }
}

/// Generates the synthetic cohort subject by subject and keeps only the
/// feature matrices, so memory stays bounded by one recording.
pub fn synth_feature_set(cfg: &PipelineConfig) -> Result<FeatureSet, PipelineError> {
    let mut table = LabelTable::default();
    let mut matrices = Vec::new();
    for s in 0..cfg.synth.n_subjects {
        let (rec, events) = crate::dataset::synth_subject(&cfg.stage_synth(), s);
        for w in subject_windows(&rec, &events, cfg, &mut table)? {
            matrices.push(build_feature_matrix(&w, rec.sample_rate_hz, &cfg.psd)?);
        }
    }
    let mut set = FeatureSet::new(table);
    for m in matrices {
        set.push(m)?;
    }
    Ok(set)
}

/// Train/validation/test examples for one task, with SMOTE applied to the
/// training part only.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub task: Task,
    pub n_classes: usize,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    /// Provenance of each training example; indices refer to the feature set.
    pub train_provenance: Vec<Provenance>,
}

/// Class index of a window for `task`, or `None` when it does not take part.
pub fn task_class(label: &crate::dataset::ClassLabel, task: Task) -> Option<usize> {
    match task {
        Task::Binary => label.binary.map(|b| b.index()),
        Task::Categorical => Some(label.categorical as usize),
    }
}

pub fn task_data(
    set: &FeatureSet,
    split: &SplitAssignment,
    task: Task,
    smote: &SmoteSpec,
) -> Result<TaskData, PipelineError> {
    let n_classes = match task {
        Task::Binary => 2,
        Task::Categorical => set.table.len(),
    };
    let pick = |idx: &[usize]| -> Vec<(usize, usize)> {
        idx.iter()
            .filter_map(|&i| task_class(&set.labels[i], task).map(|c| (i, c)))
            .collect()
    };
    let train_idx = pick(&split.train);
    let val_idx = pick(&split.val);
    let test_idx = pick(&split.test);
    if train_idx.is_empty() || val_idx.is_empty() || test_idx.is_empty() {
        return Err(PipelineError::EmptyTask(task));
    }
    let samples: Vec<Vec<f64>> = train_idx.iter().map(|&(i, _)| set.values[i].clone()).collect();
    let labels: Vec<u32> = train_idx.iter().map(|&(_, c)| c as u32).collect();
    let resampled = smote_resample(&samples, &labels, smote)?;
    // Map provenance indices from the train subset back to the feature set.
    let to_set = |k: usize| train_idx[k].0;
    let train_provenance = resampled
        .provenance
        .iter()
        .map(|p| match *p {
            Provenance::Original { index } => Provenance::Original { index: to_set(index) },
            Provenance::Smote { base, neighbor, u } => Provenance::Smote {
                base: to_set(base),
                neighbor: to_set(neighbor),
                u,
            },
        })
        .collect();
    let train = resampled
        .samples
        .into_iter()
        .zip(resampled.labels)
        .map(|(input, c)| Example {
            input,
            class: c as usize,
        })
        .collect();
    let examples = |idx: &[(usize, usize)]| {
        idx.iter()
            .map(|&(i, c)| Example {
                input: set.values[i].clone(),
                class: c,
            })
            .collect()
    };
    Ok(TaskData {
        task,
        n_classes,
        train,
        val: examples(&val_idx),
        test: examples(&test_idx),
        train_provenance,
    })
}

/// Window-level stratified split over categorical ids.
pub fn split_feature_set(set: &FeatureSet, cfg: &PipelineConfig) -> Result<SplitAssignment, PipelineError> {
    Ok(stratified_split(
        &set.categorical_ids(),
        set.table.len(),
        &cfg.split,
        cfg.seeds().split,
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRun {
    pub outcome: TrainOutcome,
    pub metrics: TaskMetrics,
    pub train_seconds: f64,
}

pub fn run_task(data: &TaskData, set: &FeatureSet, cfg: &PipelineConfig) -> Result<TaskRun, PipelineError> {
    let model_cfg = cfg.cnn_config(set.n_channels, set.n_bins, data.n_classes, data.task);
    let start = Instant::now();
    let outcome = train(&model_cfg, &data.train, &data.val, &cfg.stage_train(data.task))?;
    let train_seconds = start.elapsed().as_secs_f64();
    let metrics = evaluate(&outcome.model, &data.test, cfg.train.batch_size, data.task)?;
    Ok(TaskRun {
        outcome,
        metrics,
        train_seconds,
    })
}

/// Both tasks on an already built feature set.
pub fn run_experiment(set: &FeatureSet, cfg: &PipelineConfig) -> Result<(TaskRun, TaskRun), PipelineError> {
    let split = split_feature_set(set, cfg)?;
    let smote = cfg.stage_smote();
    let binary = run_task(&task_data(set, &split, Task::Binary, &smote)?, set, cfg)?;
    let categorical = run_task(&task_data(set, &split, Task::Categorical, &smote)?, set, cfg)?;
    Ok((binary, categorical))
}

/// Table I shaped summary of the two tasks.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub task1: BinaryMetrics,
    pub task2: CategoricalMetrics,
    pub time_per_batch_ms: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BinaryMetrics {
    pub binary_loss: f64,
    pub binary_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CategoricalMetrics {
    pub categorical_loss: f64,
    pub categorical_accuracy: f64,
}

impl MetricsReport {
    pub fn new(binary: &TaskMetrics, categorical: &TaskMetrics) -> Self {
        MetricsReport {
            task1: BinaryMetrics {
                binary_loss: binary.loss,
                binary_accuracy: binary.accuracy,
            },
            task2: CategoricalMetrics {
                categorical_loss: categorical.loss,
                categorical_accuracy: categorical.accuracy,
            },
            time_per_batch_ms: (binary.time_per_batch_ms + categorical.time_per_batch_ms) / 2.0,
        }
    }
}
