//! Synthetic multichannel EEG with class-dependent band oscillations.
//!
//! Each subject gets a pink (1/f) background on every channel, a common
//! 50 Hz mains component, and per-event oscillations inside the band of the
//! event's emotion class.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{write_recording, DatasetError, EmotionEvent};
use crate::signal::Recording;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Affect {
    Positive,
    Neutral,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionClass {
    pub name: String,
    pub affect: Affect,
    /// Band of the added oscillations; `None` leaves only the background.
    pub band_hz: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub classes: Vec<EmotionClass>,
}

impl Default for ClassSpec {
    /// Positive classes carry 15-40 Hz activity, negative ones 4-12 Hz.
    fn default() -> Self {
        let class = |name: &str, affect, band_hz| EmotionClass {
            name: name.into(),
            affect,
            band_hz,
        };
        ClassSpec {
            classes: vec![
                class("joy", Affect::Positive, Some([15.0, 25.0])),
                class("excitement", Affect::Positive, Some([26.0, 40.0])),
                class("neutral", Affect::Neutral, None),
                class("sadness", Affect::Negative, Some([4.0, 7.0])),
                class("fear", Affect::Negative, Some([8.0, 12.0])),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub n_events_per_subject: usize,
    pub channels: usize,
    pub sample_rate_hz: f64,
    pub classes: ClassSpec,
    pub seed: u64,
    pub event_duration_s: f64,
    pub gap_s: f64,
    /// RMS of the pink background, microvolts.
    pub background_uv: f64,
    /// Amplitude of each event oscillation, microvolts.
    pub oscillation_uv: f64,
    pub oscillations_per_event: usize,
    pub line_noise_uv: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_subjects: 40,
            n_events_per_subject: 10,
            channels: 128,
            sample_rate_hz: 512.0,
            classes: ClassSpec::default(),
            seed: 0,
            event_duration_s: 3.0,
            gap_s: 0.5,
            background_uv: 5.0,
            oscillation_uv: 4.0,
            oscillations_per_event: 4,
            line_noise_uv: 2.0,
        }
    }
}

impl SynthSpec {
    pub fn channel_names(&self) -> Vec<String> {
        if self.channels == 4 {
            ["TP9", "TP10", "AF7", "AF8"].map(String::from).to_vec()
        } else {
            (1..=self.channels).map(|i| format!("E{i}")).collect()
        }
    }

    pub fn subject_id(index: usize) -> String {
        format!("sub-{:02}", index + 1)
    }
}

fn pink_noise(n: usize, fs: f64, rms: f64, rng: &mut ChaCha8Rng, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        if bin == 0 {
            *c = Complex::new(0.0, 0.0);
        } else {
            *c /= (bin as f64 * fs / n as f64).sqrt();
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let sd = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if sd > 0.0 {
        out.iter_mut().for_each(|v| *v *= rms / sd);
    }
    out
}

fn rating(affect: Affect, rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = match affect {
        Affect::Positive => (6.5, 9.0),
        Affect::Neutral => (4.5, 5.5),
        Affect::Negative => (1.0, 3.5),
    };
    (rng.random_range(lo..=hi) * 100.0f64).round() / 100.0
}

/// Generates one subject's recording and events. Samples are rounded to
/// `f32` so the in-memory result equals what a round trip through disk
/// yields.
pub fn synth_subject(spec: &SynthSpec, subject_index: usize) -> (Recording, Vec<EmotionEvent>) {
    let fs = spec.sample_rate_hz;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ subject_index as u64);
    let slot_s = spec.event_duration_s + spec.gap_s;
    let n = (spec.n_events_per_subject as f64 * slot_s * fs).round() as usize;
    let mut planner = FftPlanner::new();
    let mut data: Vec<Vec<f64>> = (0..spec.channels)
        .map(|_| pink_noise(n, fs, spec.background_uv, &mut rng, &mut planner))
        .collect();

    let line_phase = rng.random_range(0.0..2.0 * PI);
    for row in data.iter_mut() {
        for (i, v) in row.iter_mut().enumerate() {
            *v += spec.line_noise_uv * (2.0 * PI * 50.0 * i as f64 / fs + line_phase).sin();
        }
    }

    let k = spec.classes.classes.len();
    let mut order: Vec<usize> = Vec::with_capacity(spec.n_events_per_subject);
    while order.len() < spec.n_events_per_subject {
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        order.extend(perm);
    }
    order.truncate(spec.n_events_per_subject);

    let mut events = Vec::with_capacity(order.len());
    for (e, &class_idx) in order.iter().enumerate() {
        let class = &spec.classes.classes[class_idx];
        let onset_s = e as f64 * slot_s + spec.gap_s / 2.0;
        let start = (onset_s * fs).round() as usize;
        let len = (spec.event_duration_s * fs).round() as usize;
        if let Some([lo, hi]) = class.band_hz {
            let freqs: Vec<f64> = (0..spec.oscillations_per_event)
                .map(|_| rng.random_range(lo..=hi))
                .collect();
            for row in data.iter_mut() {
                for &f in &freqs {
                    let amp = spec.oscillation_uv * rng.random_range(0.7..1.3);
                    let phase = rng.random_range(0.0..2.0 * PI);
                    for (i, v) in row[start..(start + len).min(n)].iter_mut().enumerate() {
                        *v += amp * (2.0 * PI * f * i as f64 / fs + phase).sin();
                    }
                }
            }
        }
        events.push(EmotionEvent {
            onset_s,
            duration_s: spec.event_duration_s,
            trial_type: "stimulus".into(),
            valence: rating(class.affect, &mut rng),
            arousal: rating(class.affect, &mut rng),
            emotion_name: class.name.clone(),
        });
    }

    for row in data.iter_mut() {
        row.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
    let rec = Recording::new(SynthSpec::subject_id(subject_index), fs, spec.channel_names(), data)
        .expect("synthetic recording is well formed");
    (rec, events)
}

/// Writes `sub-XX/` directories under `out_dir`, one per subject.
pub fn synth_generate(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    if spec.channels == 0 || spec.n_subjects == 0 || spec.classes.classes.is_empty() {
        return Err(DatasetError::Invalid(
            "need at least one channel, subject and class".into(),
        ));
    }
    (0..spec.n_subjects)
        .map(|s| {
            let (rec, events) = synth_subject(spec, s);
            let dir = out_dir.join(&rec.subject_id);
            write_recording(&dir, &rec, &events)?;
            Ok(dir)
        })
        .collect()
}
