use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stream::StreamConfig;
use super::PipelineError;
use crate::dataset::{LabelConfig, SmoteSpec, SplitRatios, SynthSpec, DEFAULT_WINDOW_LEN};
use crate::entropy::{EntropyParams, NoiseSpec};
use crate::features::PsdSpec;
use crate::model::{BlockSpec, CnnConfig, Pooling, Task, TrainConfig};
use crate::signal::FilterSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    /// Root of every stage's outputs.
    pub work_dir: PathBuf,
    /// BIDS-like input directory; `<work_dir>/raw` when unset.
    pub raw_dir: Option<PathBuf>,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            work_dir: PathBuf::from("affekt-work"),
            raw_dir: None,
        }
    }
}

/// Which windows the featurize stage reads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowSource {
    #[default]
    Clean,
    Noisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntropyReportSpec {
    /// Number of windows, in manifest order, the entropy report covers.
    pub max_windows: usize,
}

impl Default for EntropyReportSpec {
    fn default() -> Self {
        EntropyReportSpec { max_windows: 1 }
    }
}

/// Network layout; input size and class count come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub blocks: Vec<BlockSpec>,
    pub pooling: Pooling,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let small = CnnConfig::small(1, 1, 2, 0);
        ModelSpec {
            blocks: small.blocks,
            pooling: small.pooling,
        }
    }
}

/// Seeds of the individual stages, all derived from the one in the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub synth: u64,
    pub noise: u64,
    pub split: u64,
    pub smote: u64,
    pub model: u64,
    pub train: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Required: every random stage is seeded from it.
    pub seed: u64,
    #[serde(default)]
    pub paths: DataPaths,
    #[serde(default)]
    pub synth: SynthSpec,
    #[serde(default = "default_filters")]
    pub filters: Vec<FilterSpec>,
    /// `null` disables the noise stage.
    #[serde(default = "default_noise")]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub entropy: EntropyParams,
    #[serde(default)]
    pub entropy_report: EntropyReportSpec,
    #[serde(default)]
    pub psd: PsdSpec,
    #[serde(default)]
    pub labels: LabelConfig,
    #[serde(default = "default_window_len")]
    pub window_len: usize,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default)]
    pub smote: SmoteSpec,
    #[serde(default)]
    pub feature_source: WindowSource,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub stream: StreamConfig,
}

fn default_filters() -> Vec<FilterSpec> {
    vec![FilterSpec::powerline_notch(0.0)]
}

fn default_noise() -> Option<NoiseSpec> {
    Some(NoiseSpec::default())
}

fn default_window_len() -> usize {
    DEFAULT_WINDOW_LEN
}

impl PipelineConfig {
    /// Defaults everywhere except the seed.
    pub fn new(seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "seed": seed })).expect("defaults deserialize")
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let fs = self.synth.sample_rate_hz;
        for f in &self.filters {
            FilterSpec {
                sample_rate_hz: fs,
                ..f.clone()
            }
            .validate()?;
        }
        if let Some(noise) = &self.noise {
            if !(noise.max_magnitude > 0.0 && noise.max_magnitude.is_finite()) {
                return bad(format!("noise max_magnitude {}", noise.max_magnitude));
            }
        }
        self.entropy.validate()?;
        if self.window_len < 2 {
            return bad(format!("window_len {}", self.window_len));
        }
        if self.labels.low > self.labels.high {
            return bad("label thresholds: low > high".into());
        }
        if self.model.blocks.is_empty() {
            return bad("model needs at least one block".into());
        }
        self.train.validate()?;
        self.stream.validate()?;
        Ok(())
    }

    pub fn raw_dir(&self) -> PathBuf {
        self.paths
            .raw_dir
            .clone()
            .unwrap_or_else(|| self.paths.work_dir.join("raw"))
    }

    pub fn seeds(&self) -> StageSeeds {
        let s = self.seed;
        StageSeeds {
            synth: s,
            noise: s.wrapping_add(1),
            split: s.wrapping_add(2),
            smote: s.wrapping_add(3),
            model: s.wrapping_add(4),
            train: s.wrapping_add(5),
        }
    }

    pub fn stage_synth(&self) -> SynthSpec {
        SynthSpec {
            seed: self.seeds().synth,
            ..self.synth.clone()
        }
    }

    /// Noise for the `window_index`-th window, each with its own stream.
    pub fn stage_noise(&self, window_index: usize) -> Option<NoiseSpec> {
        self.noise.map(|n| NoiseSpec {
            seed: self
                .seeds()
                .noise
                .wrapping_add((window_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..n
        })
    }

    pub fn stage_smote(&self) -> SmoteSpec {
        SmoteSpec {
            seed: self.seeds().smote,
            ..self.smote
        }
    }

    pub fn stage_train(&self, task: Task) -> TrainConfig {
        TrainConfig {
            seed: self.seeds().train.wrapping_add(task_offset(task)),
            ..self.train.clone()
        }
    }

    pub fn cnn_config(&self, channels: usize, bins: usize, n_classes: usize, task: Task) -> CnnConfig {
        CnnConfig {
            input_channels: channels,
            input_bins: bins,
            blocks: self.model.blocks.clone(),
            pooling: self.model.pooling,
            n_classes,
            seed: self.seeds().model.wrapping_add(task_offset(task)),
        }
    }
}

fn task_offset(task: Task) -> u64 {
    match task {
        Task::Binary => 0,
        Task::Categorical => 100,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_required() {
        assert!(serde_json::from_str::<PipelineConfig>("{}").is_err());
        let cfg: PipelineConfig = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
        assert_eq!(cfg, PipelineConfig::new(9));
        assert_eq!(cfg.window_len, 1500);
        assert_eq!(cfg.stream.hop_samples, 375);
        assert_eq!(cfg.filters[0].edges_hz, vec![48.0, 52.0]);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"seed": 1, "sed": 2}"#).is_err());
    }

    #[test]
    fn stage_seeds_differ() {
        let cfg = PipelineConfig::new(3);
        let s = cfg.seeds();
        let all = [s.synth, s.noise, s.split, s.smote, s.model, s.train];
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
        assert_ne!(cfg.stage_noise(0).unwrap().seed, cfg.stage_noise(1).unwrap().seed);
        assert_eq!(cfg.stage_synth().seed, 3);
    }

    #[test]
    fn invalid_sub_configs_rejected() {
        let mut cfg = PipelineConfig::new(0);
        cfg.filters[0].edges_hz = vec![52.0, 48.0];
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::new(0);
        cfg.train.lr_decay = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::new(0);
        cfg.stream.trigger_consecutive = 0;
        assert!(cfg.validate().is_err());
    }
}
