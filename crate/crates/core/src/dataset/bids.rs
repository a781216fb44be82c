//! Minimal BIDS-like recording directory: `eeg.json`, `eeg.f32`, `events.tsv`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, EmotionEvent};
use crate::signal::Recording;

pub const EVENTS_HEADER: &str = "onset\tduration\ttrial_type\tvalence\tarousal\temotion";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingSidecar {
    pub subject_id: String,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub n_samples: usize,
}

fn read(path: &Path) -> Result<Vec<u8>, DatasetError> {
    if !path.exists() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| DatasetError::io(path, e))
}

pub fn load_recording(dir: &Path) -> Result<(Recording, Vec<EmotionEvent>), DatasetError> {
    let sidecar_path = dir.join("eeg.json");
    let data_path = dir.join("eeg.f32");
    let events_path = dir.join("events.tsv");

    let sidecar: RecordingSidecar =
        serde_json::from_slice(&read(&sidecar_path)?).map_err(|e| DatasetError::BadSidecar {
            path: sidecar_path.clone(),
            reason: e.to_string(),
        })?;
    let raw = read(&data_path)?;
    let n_channels = sidecar.channel_names.len();
    let expected = n_channels * sidecar.n_samples;
    if raw.len() % 4 != 0 || raw.len() / 4 != expected {
        return Err(DatasetError::ShapeMismatch {
            path: data_path,
            expected,
            actual: raw.len() / 4,
        });
    }
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let data = if sidecar.n_samples == 0 {
        vec![Vec::new(); n_channels]
    } else {
        values.chunks(sidecar.n_samples).map(<[f64]>::to_vec).collect()
    };
    let rec = Recording::new(sidecar.subject_id, sidecar.sample_rate_hz, sidecar.channel_names, data)?;

    let text = String::from_utf8(read(&events_path)?).map_err(|e| DatasetError::MalformedEvent {
        row: 0,
        reason: format!("not UTF-8: {e}"),
    })?;
    let events = parse_events(&text)?;
    Ok((rec, events))
}

/// Parses the events table by header name; extra columns are ignored.
/// Row numbers in errors count the header as row 1.
fn parse_events(text: &str) -> Result<Vec<EmotionEvent>, DatasetError> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or(DatasetError::MalformedEvent {
            row: 1,
            reason: "missing header".into(),
        })?
        .split('\t')
        .collect();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(DatasetError::MalformedEvent {
                row: 1,
                reason: format!("missing column {name}"),
            })
    };
    let onset = column("onset")?;
    let duration = column("duration")?;
    let trial_type = column("trial_type")?;
    let valence = column("valence")?;
    let arousal = column("arousal")?;
    let emotion = column("emotion")?;

    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let field = |idx: usize, name: &str| {
            fields
                .get(idx)
                .map(|f| f.trim())
                .ok_or_else(|| DatasetError::MalformedEvent {
                    row,
                    reason: format!("missing {name}"),
                })
        };
        let number = |idx: usize, name: &str| -> Result<f64, DatasetError> {
            let raw = field(idx, name)?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DatasetError::MalformedEvent {
                    row,
                    reason: format!("{name} {raw:?} is not a number"),
                })
        };
        let event = EmotionEvent {
            onset_s: number(onset, "onset")?,
            duration_s: number(duration, "duration")?,
            trial_type: field(trial_type, "trial_type")?.to_string(),
            valence: number(valence, "valence")?,
            arousal: number(arousal, "arousal")?,
            emotion_name: field(emotion, "emotion")?.to_string(),
        };
        if event.onset_s < 0.0 || event.duration_s <= 0.0 {
            return Err(DatasetError::MalformedEvent {
                row,
                reason: "onset must be >= 0 and duration > 0".into(),
            });
        }
        for (name, r) in [("valence", event.valence), ("arousal", event.arousal)] {
            if !(1.0..=9.0).contains(&r) {
                return Err(DatasetError::MalformedEvent {
                    row,
                    reason: format!("{name} {r} outside [1, 9]"),
                });
            }
        }
        events.push(event);
    }
    Ok(events)
}

/// Writes a recording directory. Samples are stored as `f32`.
pub fn write_recording(dir: &Path, rec: &Recording, events: &[EmotionEvent]) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
    let sidecar = RecordingSidecar {
        subject_id: rec.subject_id.clone(),
        sample_rate_hz: rec.sample_rate_hz,
        channel_names: rec.channel_names.clone(),
        n_samples: rec.n_samples(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    let path = dir.join("eeg.json");
    fs::write(&path, json + "\n").map_err(|e| DatasetError::io(&path, e))?;

    let mut bytes = Vec::with_capacity(4 * rec.n_channels() * rec.n_samples());
    for row in &rec.data {
        for &v in row {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let path = dir.join("eeg.f32");
    fs::write(&path, bytes).map_err(|e| DatasetError::io(&path, e))?;

    let mut tsv = String::from(EVENTS_HEADER);
    tsv.push('\n');
    for ev in events {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            ev.onset_s, ev.duration_s, ev.trial_type, ev.valence, ev.arousal, ev.emotion_name
        ));
    }
    let path = dir.join("events.tsv");
    fs::write(&path, tsv).map_err(|e| DatasetError::io(&path, e))
}
