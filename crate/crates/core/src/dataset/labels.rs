use serde::{Deserialize, Serialize};

use super::{BinaryLabel, ClassLabel, DatasetError, EmotionEvent, LabeledWindow};
use crate::signal::Recording;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatingDimension {
    Arousal,
    Valence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub dimension: RatingDimension,
    /// Ratings strictly below this are Negative.
    pub low: f64,
    /// Ratings strictly above this are Positive.
    pub high: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            dimension: RatingDimension::Arousal,
            low: 4.0,
            high: 6.0,
        }
    }
}

/// Emotion name to categorical id, in order of first registration.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTable {
    names: Vec<String>,
}

impl LabelTable {
    pub fn from_names(names: Vec<String>) -> Self {
        LabelTable { names }
    }

    pub fn register(&mut self, name: &str) -> u32 {
        match self.id(name) {
            Ok(id) => id,
            Err(_) => {
                self.names.push(name.to_string());
                (self.names.len() - 1) as u32
            }
        }
    }

    pub fn id(&self, name: &str) -> Result<u32, DatasetError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| i as u32)
            .ok_or_else(|| DatasetError::UnknownEmotionName(name.to_string()))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

pub fn label_from_ratings(
    ev: &EmotionEvent,
    cfg: &LabelConfig,
    table: &LabelTable,
) -> Result<ClassLabel, DatasetError> {
    let rating = match cfg.dimension {
        RatingDimension::Arousal => ev.arousal,
        RatingDimension::Valence => ev.valence,
    };
    let binary = if rating < cfg.low {
        Some(BinaryLabel::Negative)
    } else if rating > cfg.high {
        Some(BinaryLabel::Positive)
    } else {
        None
    };
    Ok(ClassLabel {
        binary,
        categorical: table.id(&ev.emotion_name)?,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowReport {
    pub extracted: usize,
    pub skipped: usize,
}

/// One window per event, anchored at the event onset. Events whose window
/// would run past the end of the recording, or that are shorter than the
/// window, are skipped. New emotion names are registered in `table`.
pub fn extract_windows(
    rec: &Recording,
    events: &[EmotionEvent],
    window_len: usize,
    cfg: &LabelConfig,
    table: &mut LabelTable,
) -> Result<(Vec<LabeledWindow>, WindowReport), DatasetError> {
    let fs = rec.sample_rate_hz;
    let n = rec.n_samples();
    let mut windows = Vec::new();
    let mut report = WindowReport::default();
    for (idx, ev) in events.iter().enumerate() {
        let start = (ev.onset_s * fs).round() as usize;
        let event_len = (ev.duration_s * fs).round() as usize;
        if event_len < window_len || start + window_len > n {
            log::warn!(
                "{}: skipping event {idx} ({} at {} s): too short for a {window_len}-sample window",
                rec.subject_id,
                ev.emotion_name,
                ev.onset_s
            );
            report.skipped += 1;
            continue;
        }
        table.register(&ev.emotion_name);
        let label = label_from_ratings(ev, cfg, table)?;
        windows.push(LabeledWindow {
            data: rec
                .data
                .iter()
                .map(|row| row[start..start + window_len].to_vec())
                .collect(),
            label,
            subject_id: rec.subject_id.clone(),
            window_id: format!("{}_ev{idx:03}", rec.subject_id),
        });
        report.extracted += 1;
    }
    Ok((windows, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(onset_s: f64, duration_s: f64, rating: f64, name: &str) -> EmotionEvent {
        EmotionEvent {
            onset_s,
            duration_s,
            trial_type: "stimulus".into(),
            valence: 5.0,
            arousal: rating,
            emotion_name: name.into(),
        }
    }

    #[test]
    fn rating_thresholds() {
        let mut table = LabelTable::default();
        for name in ["anger", "calm", "sadness", "joy"] {
            table.register(name);
        }
        let cfg = LabelConfig::default();
        let neg = label_from_ratings(&event(0.0, 1.0, 2.0, "anger"), &cfg, &table).unwrap();
        assert_eq!(neg.binary, Some(BinaryLabel::Negative));
        let mid = label_from_ratings(&event(0.0, 1.0, 5.0, "calm"), &cfg, &table).unwrap();
        assert_eq!(mid.binary, None);
        let pos = label_from_ratings(&event(0.0, 1.0, 6.5, "joy"), &cfg, &table).unwrap();
        assert_eq!(
            pos,
            ClassLabel {
                binary: Some(BinaryLabel::Positive),
                categorical: 3
            }
        );
        assert!(matches!(
            label_from_ratings(&event(0.0, 1.0, 5.0, "awe"), &cfg, &table),
            Err(DatasetError::UnknownEmotionName(_))
        ));
    }

    #[test]
    fn valence_switch() {
        let mut table = LabelTable::default();
        table.register("joy");
        let cfg = LabelConfig {
            dimension: RatingDimension::Valence,
            ..Default::default()
        };
        let mut ev = event(0.0, 1.0, 8.0, "joy");
        ev.valence = 2.0;
        assert_eq!(
            label_from_ratings(&ev, &cfg, &table).unwrap().binary,
            Some(BinaryLabel::Negative)
        );
    }

    fn ramp_recording(n: usize) -> Recording {
        let data = vec![(0..n).map(|i| i as f64).collect(), vec![1.0; n]];
        Recording::new("sub-01", 512.0, vec!["a".into(), "b".into()], data).unwrap()
    }

    #[test]
    fn window_at_onset_zero() {
        let rec = ramp_recording(4000);
        let mut table = LabelTable::default();
        let (w, report) = extract_windows(
            &rec,
            &[event(0.0, 3.0, 2.0, "fear")],
            1500,
            &LabelConfig::default(),
            &mut table,
        )
        .unwrap();
        assert_eq!(
            report,
            WindowReport {
                extracted: 1,
                skipped: 0
            }
        );
        assert_eq!(w[0].data[0].len(), 1500);
        assert_eq!(w[0].data[0][0], 0.0);
        assert_eq!(w[0].data[0][1499], 1499.0);
        assert_eq!(w[0].window_id, "sub-01_ev000");
    }

    #[test]
    fn overrunning_and_short_events_skipped() {
        let rec = ramp_recording(4000);
        let events = [
            event(0.0, 3.0, 2.0, "fear"),
            event(6.0, 3.0, 8.0, "joy"),  // 3072 + 1500 > 4000
            event(3.0, 1.0, 5.0, "calm"), // 512 samples < 1500
            event(4.0, 3.0, 8.0, "joy"),
        ];
        let mut table = LabelTable::default();
        let (w, report) = extract_windows(&rec, &events, 1500, &LabelConfig::default(), &mut table).unwrap();
        assert_eq!(
            report,
            WindowReport {
                extracted: 2,
                skipped: 2
            }
        );
        assert_eq!(w[1].data[0][0], 2048.0);
        assert_eq!(table.names(), ["fear", "joy"]);
    }
}
