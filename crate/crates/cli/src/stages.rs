//! One function per subcommand. Every stage reads the previous stage's
//! artifacts from the work directory and writes its own next to them.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use affekt_core::dataset::LabeledWindow;
use affekt_core::dataset::{load_recording, synth_generate, ClassLabel, LabelTable, Provenance, SplitAssignment};
use affekt_core::entropy::{add_gaussian_noise, complexity_shift_report, EntropyParams, ScaleEntropy};
use affekt_core::features::{build_feature_matrix, FeatureMatrix, FeatureRecord};
use affekt_core::model::{evaluate, read_checkpoint, train as fit, write_checkpoint, Cnn, Task};
use affekt_core::pipeline::{
    split_feature_set, stream_classify, subject_windows, task_data, CnnWindowClassifier, FeatureSet, MetricsReport,
    PipelineConfig, TaskData, WindowSource,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::CliError;
use crate::winfile::{read_index, read_windows, write_windows, WindowEntry, WindowIndex, INDEX_FILE};
use crate::{ensure_dir, read_json, write_json};

const TASKS: [(Task, &str); 2] = [(Task::Binary, "binary"), (Task::Categorical, "categorical")];

struct Layout {
    raw: PathBuf,
    preprocessed: PathBuf,
    augmented: PathBuf,
    features: PathBuf,
    model: PathBuf,
    reports: PathBuf,
}

impl Layout {
    fn new(cfg: &PipelineConfig) -> Self {
        let w = &cfg.paths.work_dir;
        Layout {
            raw: cfg.raw_dir(),
            preprocessed: w.join("preprocessed"),
            augmented: w.join("augmented"),
            features: w.join("features"),
            model: w.join("model"),
            reports: w.join("reports"),
        }
    }
}

fn require(path: &Path, stage: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing_stage(stage, path))
    }
}

/// Subject directories under `raw`, sorted by name.
fn subject_dirs(raw: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(raw).map_err(|_| CliError::missing_stage("synth", raw))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::missing_stage("synth", &raw.join("sub-01")));
    }
    Ok(dirs)
}

pub fn synth(cfg: &PipelineConfig) -> Result<Value, CliError> {
    let layout = Layout::new(cfg);
    let dirs = synth_generate(&cfg.stage_synth(), &layout.raw)?;
    Ok(json!({
        "stage": "synth",
        "subjects": dirs.len(),
        "dir": layout.raw,
    }))
}

pub fn preprocess(cfg: &PipelineConfig) -> Result<Value, CliError> {
    let layout = Layout::new(cfg);
    let dirs = subject_dirs(&layout.raw)?;
    ensure_dir(&layout.preprocessed)?;
    let mut table = LabelTable::default();
    let mut index: Option<WindowIndex> = None;
    let mut entries = Vec::new();
    for dir in &dirs {
        let (rec, events) = load_recording(dir)?;
        let idx = index.get_or_insert_with(|| WindowIndex {
            sample_rate_hz: rec.sample_rate_hz,
            window_len: cfg.window_len,
            channel_names: rec.channel_names.clone(),
            label_table: Vec::new(),
            windows: Vec::new(),
        });
        if rec.sample_rate_hz != idx.sample_rate_hz || rec.channel_names != idx.channel_names {
            return Err(CliError::bad_input(format!(
                "{}: sample rate or channel layout differs from the first subject",
                dir.display()
            )));
        }
        let windows = subject_windows(&rec, &events, cfg, &mut table)?;
        let file = format!("{}.eegw", rec.subject_id);
        write_windows(
            &layout.preprocessed.join(&file),
            &windows.iter().map(|w| w.data.clone()).collect::<Vec<_>>(),
        )?;
        entries.extend(windows.into_iter().enumerate().map(|(slot, w)| WindowEntry {
            window_id: w.window_id,
            subject_id: w.subject_id,
            file: file.clone(),
            slot,
            label: w.label,
        }));
    }
    let mut index = index.expect("at least one subject");
    index.label_table = table.names().to_vec();
    index.windows = entries;
    write_json(&layout.preprocessed.join(INDEX_FILE), &index)?;
    Ok(json!({
        "stage": "preprocess",
        "subjects": dirs.len(),
        "windows": index.windows.len(),
        "classes": index.label_table,
    }))
}

/// Windows of a stage directory grouped per file, in index order.
fn load_stage_windows(dir: &Path, index: &WindowIndex) -> Result<Vec<Vec<Vec<f64>>>, CliError> {
    let mut cache: BTreeMap<&str, Vec<Vec<Vec<f64>>>> = BTreeMap::new();
    let mut out = Vec::with_capacity(index.windows.len());
    for e in &index.windows {
        if !cache.contains_key(e.file.as_str()) {
            cache.clear();
            cache.insert(&e.file, read_windows(&dir.join(&e.file))?);
        }
        let file = &cache[e.file.as_str()];
        let w = file
            .get(e.slot)
            .ok_or_else(|| CliError::bad_input(format!("{}: no slot {}", e.file, e.slot)))?;
        out.push(w.clone());
    }
    Ok(out)
}

pub fn augment(cfg: &PipelineConfig) -> Result<Value, CliError> {
    let layout = Layout::new(cfg);
    require(&layout.preprocessed.join(INDEX_FILE), "preprocess")?;
    if cfg.noise.is_none() {
        return Err(CliError::config("noise stage is disabled (\"noise\": null)"));
    }
    let index = read_index(&layout.preprocessed)?;
    ensure_dir(&layout.augmented)?;
    let mut files: Vec<&str> = index.windows.iter().map(|e| e.file.as_str()).collect();
    files.dedup();
    let mut g = 0;
    for file in files {
        let clean = read_windows(&layout.preprocessed.join(file))?;
        let noisy: Vec<_> = clean
            .iter()
            .map(|w| {
                let spec = cfg.stage_noise(g).expect("noise enabled");
                g += 1;
                add_gaussian_noise(w, &spec)
            })
            .collect();
        write_windows(&layout.augmented.join(file), &noisy)?;
    }
    write_json(&layout.augmented.join(INDEX_FILE), &index)?;
    Ok(json!({
        "stage": "augment",
        "windows": g,
        "max_magnitude": cfg.noise.map(|n| n.max_magnitude),
    }))
}

#[derive(Serialize)]
struct ChannelProfile {
    channel: String,
    scales: Vec<ScaleEntropy>,
    ci: f64,
}

#[derive(Serialize)]
struct ChannelDelta {
    channel: String,
    delta: f64,
}

#[derive(Serialize)]
struct WindowEntropy {
    window_id: String,
    clean: Vec<ChannelProfile>,
    noisy: Vec<ChannelProfile>,
    deltas: Vec<ChannelDelta>,
}

#[derive(Serialize)]
struct EntropyReport {
    params: EntropyParams,
    windows: Vec<WindowEntropy>,
    channels: usize,
    channels_increased: usize,
    mean_delta: f64,
}

pub fn entropy(cfg: &PipelineConfig) -> Result<Value, CliError> {
    let layout = Layout::new(cfg);
    require(&layout.preprocessed.join(INDEX_FILE), "preprocess")?;
    require(&layout.augmented.join(INDEX_FILE), "augment")?;
    let index = read_index(&layout.preprocessed)?;
    let mut head = index.clone();
    head.windows.truncate(cfg.entropy_report.max_windows);
    let clean = load_stage_windows(&layout.preprocessed, &head)?;
    let noisy = load_stage_windows(&layout.augmented, &head)?;
    let mut windows = Vec::new();
    let (mut total, mut increased, mut delta_sum) = (0, 0, 0.0);
    for ((entry, c), n) in head.windows.iter().zip(&clean).zip(&noisy) {
        let shifts = complexity_shift_report(c, n, &cfg.entropy)?;
        let name = |i: usize| index.channel_names[i].clone();
        let mut w = WindowEntropy {
            window_id: entry.window_id.clone(),
            clean: Vec::new(),
            noisy: Vec::new(),
            deltas: Vec::new(),
        };
        for s in shifts {
            total += 1;
            increased += usize::from(s.delta > 0.0);
            delta_sum += s.delta;
            w.clean.push(ChannelProfile {
                channel: name(s.channel),
                scales: s.clean.per_scale,
                ci: s.clean.complexity_index,
            });
            w.noisy.push(ChannelProfile {
                channel: name(s.channel),
                scales: s.noisy.per_scale,
                ci: s.noisy.complexity_index,
            });
            w.deltas.push(ChannelDelta {
                channel: name(s.channel),
                delta: s.delta,
            });
        }
        windows.push(w);
    }
    let report = EntropyReport {
        params: cfg.entropy,
        windows,
        channels: total,
        channels_increased: increased,
        mean_delta: if total > 0 { delta_sum / total as f64 } else { 0.0 },
    };
    ensure_dir(&layout.reports)?;
    write_json(&layout.reports.join("entropy.json"), &report)?;
    Ok(json!({
        "stage": "entropy",
        "channels": report.channels,
        "channels_increased": report.channels_increased,
        "mean_delta": report.mean_delta,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub file: String,
    pub window_id: String,
    pub subject_id: String,
    pub label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEntry {
    pub file: String,
    pub class: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: WindowSource,
    pub n_channels: usize,
    pub n_bins: usize,
    pub bin_freqs_hz: Vec<f64>,
    pub label_table: Vec<String>,
    pub windows: Vec<FeatureEntry>,
    /// Positions in `windows`.
    pub split: SplitAssignment,
    /// SMOTE points added to each task's training part; parents index `windows`.
    pub smote: BTreeMap<String, Vec<SyntheticEntry>>,
}

fn write_record(path: &Path, record: &FeatureRecord) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    record.write(BufWriter::new(f)).map_err(|e| CliError::io(path, e))
}

fn f32_round(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| v as f32 as f64).collect()
}

pub fn featurize(cfg: &PipelineConfig) -> Result<Value, CliError> {
    let layout = Layout::new(cfg);
    let dir = match cfg.feature_source {
        WindowSource::Clean => (&layout.preprocessed, "preprocess"),
        WindowSource::Noisy => (&layout.augmented, "augment"),
    };
    require(&dir.0.join(INDEX_FILE), dir.1)?;
    let index = read_index(dir.0)?;
    let raw_windows = load_stage_windows(dir.0, &index)?;
    ensure_dir(&layout.features)?;
    ensure_dir(&layout.features.join("smote"))?;

    let mut set = FeatureSet::new(LabelTable::from_names(index.label_table.clone()));
    let mut entries = Vec::new();
    let mut bin_freqs_hz = Vec::new();
    for (e, data) in index.windows.iter().zip(raw_windows) {
        let window = LabeledWindow {
            data,
            label: e.label.clone(),
            subject_id: e.subject_id.clone(),
            window_id: e.window_id.clone(),
        };
        let m = build_feature_matrix(&window, index.sample_rate_hz, &cfg.psd)?;
        let file = format!("{}.eegf", e.window_id);
        write_record(&layout.features.join(&file), &FeatureRecord::from_matrix(&m))?;
        bin_freqs_hz = m.bin_freqs_hz.clone();
        // Keep exactly what a later stage reads back from disk.
        set.push(FeatureMatrix {
            values: f32_round(&m.values),
            ..m
        })?;
        entries.push(FeatureEntry {
            file,
            window_id: e.window_id.clone(),
            subject_id: e.subject_id.clone(),
            label: e.label.clone(),
        });
    }
    let split = split_feature_set(&set, cfg)?;
    let mut smote = BTreeMap::new();
    for (task, name) in TASKS {
        let data = task_data(&set, &split, task, &cfg.stage_smote())?;
        let synthetic = synthetic_entries(&data, name);
        for (s, ex) in synthetic
            .iter()
            .zip(data.train.iter().skip(data.train.len() - synthetic.len()))
        {
            let record = FeatureRecord {
                n_channels: set.n_channels as u32,
                n_bins: set.n_bins as u32,
                label_id: s.class as u32,
                values: ex.input.iter().map(|&v| v as f32).collect(),
            };
            write_record(&layout.features.join(&s.file), &record)?;
        }
        smote.insert(name.to_string(), synthetic);
    }
    let manifest = Manifest {
        source: cfg.feature_source,
        n_channels: set.n_channels,
        n_bins: set.n_bins,
        bin_freqs_hz,
        label_table: index.label_table.clone(),
        windows: entries,
        split,
        smote,
    };
    write_json(&layout.features.join("manifest.json"), &manifest)?;
    Ok(json!({
        "stage": "featurize",
        "windows": manifest.windows.len(),
        "shape": [manifest.n_channels, manifest.n_bins],
        "split": [manifest.split.train.len(), manifest.split.val.len(), manifest.split.test.len()],
        "smote": manifest.smote.iter().map(|(k, v)| (k.clone(), v.len())).collect::<BTreeMap<_, _>>(),
    }))
}

fn synthetic_entries(data: &TaskData, task_name: &str) -> Vec<SyntheticEntry> {
    data.train_provenance
        .iter()
        .zip(&data.train)
        .filter(|(p, _)| matches!(p, Provenance::Smote { .. }))
        .enumerate()
        .map(|(k, (p, ex))| SyntheticEntry {
            file: format!("smote/{task_name}-{k:05}.eegf"),
            class: ex.class,
            provenance: *p,
        })
        .collect()
}

/// Feature set and manifest as written by `featurize`.
fn load_features(layout: &Layout) -> Result<(Manifest, FeatureSet), CliError> {
    let path = layout.features.join("manifest.json");
    require(&path, "featurize")?;
    let manifest: Manifest = read_json(&path)?;
    let mut set = FeatureSet::new(LabelTable::from_names(manifest.label_table.clone()));
    for e in &manifest.windows {
        let p = layout.features.join(&e.file);
        let f = File::open(&p).map_err(|err| CliError::missing(&p, err))?;
        let r = FeatureRecord::read(BufReader::new(f))?;
        if (r.n_channels as usize, r.n_bins as usize) != (manifest.n_channels, manifest.n_bins)
            || r.label_id != e.label.categorical
        {
            return Err(CliError::bad_input(format!(
                "{}: header disagrees with manifest",
                p.display()
            )));
        }
        set.push(FeatureMatrix {
            n_channels: manifest.n_channels,
            n_bins: manifest.n_bins,
            values: r.values.iter().map(|&v| v as f64).collect(),
            bin_freqs_hz: manifest.bin_freqs_hz.clone(),
            label: e.label.clone(),
            source_window_id: e.window_id.clone(),
        })?;
    }
    Ok((manifest, set))
}

fn task_from_manifest(
    cfg: &PipelineConfig,
    manifest: &Manifest,
    set: &FeatureSet,
    task: Task,
    name: &str,
) -> Result<TaskData, CliError> {
    let data = task_data(set, &manifest.split, task, &cfg.stage_smote())?;
    if manifest.smote.get(name) != Some(&synthetic_entries(&data, name)) {
        return Err(CliError::bad_input(format!(
            "SMOTE points for the {name} task do not match the manifest; re-run `affekt featurize`"
        )));
    }
    Ok(data)
}

#[derive(Serialize)]
struct TrainSummary {
    epochs_run: u32,
    best_epoch: u32,
    stopped_early: bool,
    n_train: usize,
    n_val: usize,
    n_classes: usize,
}

pub fn train(cfg: &PipelineConfig) -> Result<Value, CliError> {
    let layout = Layout::new(cfg);
    let (manifest, set) = load_features(&layout)?;
    ensure_dir(&layout.model)?;
    let mut summary = BTreeMap::new();
    let mut seconds = BTreeMap::new();
    for (task, name) in TASKS {
        let data = task_from_manifest(cfg, &manifest, &set, task, name)?;
        let model_cfg = cfg.cnn_config(set.n_channels, set.n_bins, data.n_classes, task);
        let start = std::time::Instant::now();
        let outcome = fit(&model_cfg, &data.train, &data.val, &cfg.stage_train(task))?;
        seconds.insert(name, start.elapsed().as_secs_f64());
        let ckpt = layout.model.join(format!("{name}.eegm"));
        let f = File::create(&ckpt).map_err(|e| CliError::io(&ckpt, e))?;
        write_checkpoint(&outcome.model, BufWriter::new(f))?;
        let log = layout.model.join(format!("{name}_log.jsonl"));
        fs::write(&log, outcome.log_jsonl()).map_err(|e| CliError::io(&log, e))?;
        summary.insert(
            name,
            TrainSummary {
                epochs_run: outcome.epochs_run(),
                best_epoch: outcome.best_epoch,
                stopped_early: outcome.stopped_early,
                n_train: data.train.len(),
                n_val: data.val.len(),
                n_classes: data.n_classes,
            },
        );
    }
    write_json(&layout.model.join("summary.json"), &summary)?;
    Ok(json!({ "stage": "train", "tasks": summary, "train_seconds": seconds }))
}

fn load_model(layout: &Layout, name: &str) -> Result<Cnn, CliError> {
    let path = layout.model.join(format!("{name}.eegm"));
    require(&path, "train")?;
    let f = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(read_checkpoint(BufReader::new(f))?)
}

pub fn eval(cfg: &PipelineConfig) -> Result<Value, CliError> {
    let layout = Layout::new(cfg);
    let (manifest, set) = load_features(&layout)?;
    let mut metrics = Vec::new();
    for (task, name) in TASKS {
        let model = load_model(&layout, name)?;
        let data = task_from_manifest(cfg, &manifest, &set, task, name)?;
        metrics.push(evaluate(&model, &data.test, cfg.train.batch_size, task)?);
    }
    let report = MetricsReport::new(&metrics[0], &metrics[1]);
    ensure_dir(&layout.reports)?;
    write_json(&layout.reports.join("metrics.json"), &report)?;
    Ok(serde_json::to_value(&report).expect("metrics serialize"))
}

#[derive(Serialize)]
struct StreamTiming {
    windows: usize,
    mean_latency_s: f64,
    max_latency_s: f64,
    budget_s: f64,
    keeps_up: bool,
}

pub fn stream(cfg: &PipelineConfig) -> Result<Value, CliError> {
    let layout = Layout::new(cfg);
    let model = load_model(&layout, "binary")?;
    let dir = match &cfg.stream.recording {
        Some(p) => p.clone(),
        None => subject_dirs(&layout.raw)?.remove(0),
    };
    let (rec, _) = load_recording(&dir)?;
    let mut classifier = CnnWindowClassifier::new(model, &cfg.filters, rec.sample_rate_hz, cfg.psd)?;
    let report = stream_classify(&rec, &mut classifier, &cfg.stream, cfg.window_len)?;
    ensure_dir(&layout.reports)?;
    let log = layout.reports.join("interventions.jsonl");
    fs::write(&log, report.events_jsonl()).map_err(|e| CliError::io(&log, e))?;
    let timing = StreamTiming {
        windows: report.windows.len(),
        mean_latency_s: report.mean_latency_s(),
        max_latency_s: report.windows.iter().map(|w| w.latency_s).fold(0.0, f64::max),
        budget_s: report.budget_s,
        keeps_up: report.keeps_up(),
    };
    write_json(&layout.reports.join("stream_timing.json"), &timing)?;
    Ok(json!({
        "stage": "stream",
        "recording": rec.subject_id,
        "windows": report.windows.len(),
        "events": report.events.len(),
        "mean_latency_s": timing.mean_latency_s,
        "budget_s": timing.budget_s,
        "keeps_up": timing.keeps_up,
    }))
}
