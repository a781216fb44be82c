//! Sliding-window classification of a recording with intervention triggers.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{design_filters, PipelineError};
use crate::dataset::BinaryLabel;
use crate::features::{feature_image, PsdSpec};
use crate::model::{argmax, Cnn};
use crate::signal::{zscore_channel, FilterRealization, FilterSpec, Recording};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    CalmingStimuli,
    BreathingExercise,
    PositiveAffirmation,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::CalmingStimuli,
        Strategy::BreathingExercise,
        Strategy::PositiveAffirmation,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyPolicy {
    Fixed(Strategy),
    RoundRobin,
}

impl StrategyPolicy {
    /// Strategy for the `n`-th emitted event.
    pub fn pick(self, n: usize) -> Strategy {
        match self {
            StrategyPolicy::Fixed(s) => s,
            StrategyPolicy::RoundRobin => Strategy::ALL[n % Strategy::ALL.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub hop_samples: usize,
    /// Consecutive Negative windows needed to fire one event.
    pub trigger_consecutive: usize,
    pub strategy_policy: StrategyPolicy,
    /// Raw recording directory to stream; the first subject when unset.
    pub recording: Option<std::path::PathBuf>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            hop_samples: 375,
            trigger_consecutive: 1,
            strategy_policy: StrategyPolicy::RoundRobin,
            recording: None,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.hop_samples < 1 || self.trigger_consecutive < 1 {
            return Err(PipelineError::Config(
                "stream hop_samples and trigger_consecutive must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Anything that maps a raw `channels x samples` window to a binary affect
/// call with a confidence in (0, 1).
pub trait WindowClassifier {
    fn classify(&mut self, window: &[Vec<f64>]) -> Result<(BinaryLabel, f64), PipelineError>;
}

/// Replays a fixed sequence of decisions; for exercising the trigger logic.
#[derive(Debug, Clone)]
pub struct ScriptedClassifier {
    script: Vec<BinaryLabel>,
    next: usize,
}

impl ScriptedClassifier {
    pub fn new(script: Vec<BinaryLabel>) -> Self {
        ScriptedClassifier { script, next: 0 }
    }
}

impl WindowClassifier for ScriptedClassifier {
    fn classify(&mut self, _window: &[Vec<f64>]) -> Result<(BinaryLabel, f64), PipelineError> {
        let label = self.script[self.next % self.script.len()];
        self.next += 1;
        Ok((label, 0.9))
    }
}

/// Filter chain, per-channel standard score, PSD image and a two-class CNN
/// whose class 0 is Negative.
#[derive(Debug, Clone)]
pub struct CnnWindowClassifier {
    model: Cnn,
    filters: Vec<FilterRealization>,
    sample_rate_hz: f64,
    psd: PsdSpec,
}

impl CnnWindowClassifier {
    pub fn new(model: Cnn, filters: &[FilterSpec], sample_rate_hz: f64, psd: PsdSpec) -> Result<Self, PipelineError> {
        if model.config.n_classes != 2 {
            return Err(PipelineError::Config(format!(
                "stream model must have 2 classes, has {}",
                model.config.n_classes
            )));
        }
        Ok(CnnWindowClassifier {
            model,
            filters: design_filters(filters, sample_rate_hz)?,
            sample_rate_hz,
            psd,
        })
    }
}

impl WindowClassifier for CnnWindowClassifier {
    fn classify(&mut self, window: &[Vec<f64>]) -> Result<(BinaryLabel, f64), PipelineError> {
        let clean: Vec<Vec<f64>> = window
            .iter()
            .map(|row| zscore_channel(&self.filters.iter().fold(row.clone(), |acc, f| f.filtfilt(&acc))))
            .collect();
        let (image, _) = feature_image(&clean, self.sample_rate_hz, &self.psd)?;
        let probs = self.model.predict(&image)?;
        let k = argmax(&probs);
        Ok((BinaryLabel::from_index(k), probs[k]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowClassification {
    pub index: usize,
    pub window_id: String,
    /// Time at which the window is complete, seconds from recording start.
    pub t_s: f64,
    pub class: BinaryLabel,
    pub confidence: f64,
    /// Wall-clock processing time of this window.
    pub latency_s: f64,
}

/// One line of the intervention log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionEvent {
    pub t_s: f64,
    pub window_id: String,
    pub class: BinaryLabel,
    pub confidence: f64,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamReport {
    pub windows: Vec<WindowClassification>,
    pub events: Vec<InterventionEvent>,
    /// Seconds of signal between window starts: the real-time budget.
    pub budget_s: f64,
}

impl StreamReport {
    pub fn mean_latency_s(&self) -> f64 {
        self.windows.iter().map(|w| w.latency_s).sum::<f64>() / self.windows.len() as f64
    }

    pub fn keeps_up(&self) -> bool {
        self.mean_latency_s() < self.budget_s
    }

    pub fn events_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }
}

/// Slides a `window_len` window over the recording by `hop_samples`,
/// classifying each. Every run of `trigger_consecutive` Negative windows
/// emits one event and restarts the count.
pub fn stream_classify(
    rec: &Recording,
    classifier: &mut dyn WindowClassifier,
    cfg: &StreamConfig,
    window_len: usize,
) -> Result<StreamReport, PipelineError> {
    cfg.validate()?;
    let n = rec.n_samples();
    if n < window_len || window_len == 0 {
        return Err(PipelineError::RecordingTooShort {
            n_samples: n,
            window_len,
        });
    }
    let fs = rec.sample_rate_hz;
    let n_windows = (n - window_len) / cfg.hop_samples + 1;
    let mut windows = Vec::with_capacity(n_windows);
    let mut events = Vec::new();
    let mut run = 0;
    for index in 0..n_windows {
        let start = index * cfg.hop_samples;
        let slice: Vec<Vec<f64>> = rec
            .data
            .iter()
            .map(|row| row[start..start + window_len].to_vec())
            .collect();
        let began = Instant::now();
        let (class, confidence) = classifier.classify(&slice)?;
        let latency_s = began.elapsed().as_secs_f64();
        let w = WindowClassification {
            index,
            window_id: format!("{}_w{index:04}", rec.subject_id),
            t_s: (start + window_len) as f64 / fs,
            class,
            confidence,
            latency_s,
        };
        if class == BinaryLabel::Negative {
            run += 1;
            if run == cfg.trigger_consecutive {
                events.push(InterventionEvent {
                    t_s: w.t_s,
                    window_id: w.window_id.clone(),
                    class,
                    confidence,
                    strategy: cfg.strategy_policy.pick(events.len()),
                });
                run = 0;
            }
        } else {
            run = 0;
        }
        windows.push(w);
    }
    Ok(StreamReport {
        windows,
        events,
        budget_s: cfg.hop_samples as f64 / fs,
    })
}
