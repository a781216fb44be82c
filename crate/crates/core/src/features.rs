//! Welch power spectral density and channel x frequency feature matrices.

use std::io::{self, Read, Write};
use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassLabel, LabeledWindow};

pub const FEATURE_MAGIC: &[u8; 4] = b"EEGF";
pub const FEATURE_VERSION: u32 = 1;
const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("window of {len} samples shorter than segment length {segment_len}")]
    WindowTooShort { len: usize, segment_len: usize },
    #[error("max frequency {max_freq_hz} Hz exceeds Nyquist {nyquist_hz} Hz")]
    NyquistExceeded { max_freq_hz: f64, nyquist_hz: f64 },
    #[error("invalid PSD parameters: {0}")]
    InvalidSpec(String),
    #[error("bad feature file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsdSpec {
    /// Samples per segment; `None` means one second of data (1 Hz bins).
    pub segment_len: Option<usize>,
    pub overlap_fraction: f64,
    pub max_freq_hz: f64,
}

impl Default for PsdSpec {
    fn default() -> Self {
        PsdSpec {
            segment_len: None,
            overlap_fraction: 0.5,
            max_freq_hz: 128.0,
        }
    }
}

impl PsdSpec {
    pub fn segment_len_for(&self, fs: f64) -> usize {
        self.segment_len.unwrap_or_else(|| fs.round() as usize)
    }

    fn validate(&self, fs: f64) -> Result<usize, FeatureError> {
        let len = self.segment_len_for(fs);
        if len < 8 {
            return Err(FeatureError::InvalidSpec(format!("segment length {len} < 8")));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(FeatureError::InvalidSpec(format!(
                "overlap {} outside [0, 1)",
                self.overlap_fraction
            )));
        }
        if self.max_freq_hz > fs / 2.0 {
            return Err(FeatureError::NyquistExceeded {
                max_freq_hz: self.max_freq_hz,
                nyquist_hz: fs / 2.0,
            });
        }
        Ok(len)
    }
}

/// Reusable Welch estimator for one (sample rate, segment length) pair.
pub struct Welch {
    fs: f64,
    segment_len: usize,
    hop: usize,
    window: Vec<f64>,
    window_power: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl Welch {
    pub fn new(fs: f64, spec: &PsdSpec) -> Result<Self, FeatureError> {
        let segment_len = spec.segment_len_for(fs);
        if segment_len < 8 {
            return Err(FeatureError::InvalidSpec(format!("segment length {segment_len} < 8")));
        }
        if !(0.0..1.0).contains(&spec.overlap_fraction) {
            return Err(FeatureError::InvalidSpec(format!(
                "overlap {} outside [0, 1)",
                spec.overlap_fraction
            )));
        }
        let hop = ((segment_len as f64) * (1.0 - spec.overlap_fraction)).round().max(1.0) as usize;
        // Periodic Hann.
        let window: Vec<f64> = (0..segment_len)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / segment_len as f64).cos())
            .collect();
        let window_power = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(segment_len);
        Ok(Welch {
            fs,
            segment_len,
            hop,
            window,
            window_power,
            fft,
        })
    }

    pub fn bin_width(&self) -> f64 {
        self.fs / self.segment_len as f64
    }

    /// Frequencies of the one-sided spectrum, `0..=segment_len/2`.
    pub fn freqs(&self) -> Vec<f64> {
        (0..=self.segment_len / 2)
            .map(|k| k as f64 * self.bin_width())
            .collect()
    }

    /// One-sided density (units^2 / Hz); `sum(psd) * bin_width` estimates the
    /// variance.
    pub fn psd(&self, x: &[f64]) -> Result<Vec<f64>, FeatureError> {
        let len = self.segment_len;
        if x.len() < len {
            return Err(FeatureError::WindowTooShort {
                len: x.len(),
                segment_len: len,
            });
        }
        let n_out = len / 2 + 1;
        let mut acc = vec![0.0; n_out];
        let mut buf = vec![Complex::new(0.0, 0.0); len];
        let mut segments = 0usize;
        let mut start = 0;
        while start + len <= x.len() {
            let seg = &x[start..start + len];
            let mean = seg.iter().sum::<f64>() / len as f64;
            for ((b, v), w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex::new((v - mean) * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (a, c) in acc.iter_mut().zip(&buf) {
                *a += c.norm_sqr();
            }
            segments += 1;
            start += self.hop;
        }
        let scale = 1.0 / (self.fs * self.window_power * segments as f64);
        for (k, a) in acc.iter_mut().enumerate() {
            let one_sided = if k == 0 || (len.is_multiple_of(2) && k == len / 2) {
                1.0
            } else {
                2.0
            };
            *a *= scale * one_sided;
        }
        Ok(acc)
    }
}

/// Welch PSD of one channel: Hann window, mean-removed overlapping segments.
pub fn welch_psd(channel: &[f64], fs: f64, spec: &PsdSpec) -> Result<(Vec<f64>, Vec<f64>), FeatureError> {
    let welch = Welch::new(fs, spec)?;
    let psd = welch.psd(channel)?;
    Ok((welch.freqs(), psd))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub n_channels: usize,
    pub n_bins: usize,
    /// Row-major `n_channels x n_bins` standardized log-power.
    pub values: Vec<f64>,
    pub bin_freqs_hz: Vec<f64>,
    pub label: ClassLabel,
    pub source_window_id: String,
}

impl FeatureMatrix {
    pub fn row(&self, channel: usize) -> &[f64] {
        &self.values[channel * self.n_bins..(channel + 1) * self.n_bins]
    }
}

/// Log-power feature image of a window. Bins run from the first non-DC bin up
/// to and including `max_freq_hz`; the whole matrix is standardized.
pub fn build_feature_matrix(window: &LabeledWindow, fs: f64, spec: &PsdSpec) -> Result<FeatureMatrix, FeatureError> {
    let (values, bin_freqs_hz) = feature_image(&window.data, fs, spec)?;
    Ok(FeatureMatrix {
        n_channels: window.data.len(),
        n_bins: bin_freqs_hz.len(),
        values,
        bin_freqs_hz,
        label: window.label.clone(),
        source_window_id: window.window_id.clone(),
    })
}

/// Row-major standardized log-power of unlabeled `channels x samples` data,
/// with the bin center frequencies.
pub fn feature_image(data: &[Vec<f64>], fs: f64, spec: &PsdSpec) -> Result<(Vec<f64>, Vec<f64>), FeatureError> {
    let segment_len = spec.validate(fs)?;
    if data.is_empty() {
        return Err(FeatureError::InvalidSpec("window has no channels".into()));
    }
    let welch = Welch::new(fs, spec)?;
    let bin_width = welch.bin_width();
    let n_bins = (spec.max_freq_hz / bin_width + 1e-9).floor() as usize;
    if n_bins == 0 || n_bins > segment_len / 2 {
        return Err(FeatureError::InvalidSpec(format!(
            "{n_bins} bins below {} Hz",
            spec.max_freq_hz
        )));
    }
    let bin_freqs_hz: Vec<f64> = (1..=n_bins).map(|k| k as f64 * bin_width).collect();

    let mut values = Vec::with_capacity(data.len() * n_bins);
    for row in data {
        let psd = welch.psd(row)?;
        values.extend(psd[1..=n_bins].iter().map(|p| (p + LOG_FLOOR).ln()));
    }
    standardize(&mut values);
    Ok((values, bin_freqs_hz))
}

fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd < crate::signal::SIGMA_FLOOR {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
}

/// Contents of one `EEGF` file. Values are stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub n_channels: u32,
    pub n_bins: u32,
    pub label_id: u32,
    pub values: Vec<f32>,
}

impl FeatureRecord {
    pub fn from_matrix(m: &FeatureMatrix) -> Self {
        FeatureRecord {
            n_channels: m.n_channels as u32,
            n_bins: m.n_bins as u32,
            label_id: m.label.categorical,
            values: m.values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        for v in [FEATURE_VERSION, self.n_channels, self.n_bins, self.label_id] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, FeatureError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FEATURE_MAGIC {
            return Err(FeatureError::BadFile(format!("magic {magic:?}")));
        }
        let mut header = [0u32; 4];
        for h in header.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *h = u32::from_le_bytes(b);
        }
        let [version, n_channels, n_bins, label_id] = header;
        if version != FEATURE_VERSION {
            return Err(FeatureError::BadFile(format!("version {version}")));
        }
        let count = n_channels as usize * n_bins as usize;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != 4 * count {
            return Err(FeatureError::BadFile(format!(
                "{} payload bytes for {count} values",
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(FeatureRecord {
            n_channels,
            n_bins,
            label_id,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BinaryLabel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn sine(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    fn variance(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
    }

    fn window(data: Vec<Vec<f64>>) -> LabeledWindow {
        LabeledWindow {
            data,
            label: ClassLabel {
                binary: Some(BinaryLabel::Positive),
                categorical: 1,
            },
            subject_id: "sub-01".into(),
            window_id: "sub-01_ev000".into(),
        }
    }

    #[test]
    fn sinusoid_peak_and_power() {
        let fs = 512.0;
        let x = sine(10.0, fs, 4096, 1.0);
        let (freqs, psd) = welch_psd(&x, fs, &PsdSpec::default()).unwrap();
        let peak = (0..psd.len()).max_by(|&a, &b| psd[a].total_cmp(&psd[b])).unwrap();
        assert_eq!(freqs[peak], 10.0);
        let total: f64 = psd.iter().sum::<f64>() * (freqs[1] - freqs[0]);
        assert!((total - 0.5).abs() < 0.01, "total {total}");
        assert!((total - variance(&x)).abs() / variance(&x) < 0.02);
    }

    #[test]
    fn zero_signal_zero_psd() {
        let (_, psd) = welch_psd(&vec![0.0; 1500], 512.0, &PsdSpec::default()).unwrap();
        assert!(psd.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn short_window_rejected() {
        assert!(matches!(
            welch_psd(&vec![0.0; 100], 512.0, &PsdSpec::default()),
            Err(FeatureError::WindowTooShort { .. })
        ));
    }

    #[test]
    fn white_noise_is_flat() {
        let fs = 512.0;
        let welch = Welch::new(fs, &PsdSpec::default()).unwrap();
        let mut mean = vec![0.0; 257];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: Vec<f64> = (0..1500).map(|_| rng.sample(StandardNormal)).collect();
            for (m, p) in mean.iter_mut().zip(welch.psd(&x).unwrap()) {
                *m += p / 100.0;
            }
        }
        // Unit-variance white noise: density 1 / (fs/2) on the one-sided axis.
        let level = 2.0 / fs;
        for p in &mean[5..=120] {
            assert!((p / level - 1.0).abs() < 0.2, "{}", p / level);
        }
    }

    #[test]
    fn feature_matrix_shapes_and_standardization() {
        let fs = 512.0;
        let data: Vec<Vec<f64>> = (0..128)
            .map(|c| sine(5.0 + c as f64 * 0.5, fs, 1500, 1.0 + c as f64 * 0.01))
            .collect();
        let m = build_feature_matrix(&window(data), fs, &PsdSpec::default()).unwrap();
        assert_eq!((m.n_channels, m.n_bins), (128, 128));
        assert_eq!(m.bin_freqs_hz.first(), Some(&1.0));
        assert_eq!(m.bin_freqs_hz.last(), Some(&128.0));
        let n = m.values.len() as f64;
        let mean = m.values.iter().sum::<f64>() / n;
        let sd = (m.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);

        let muse: Vec<Vec<f64>> = (0..4).map(|c| sine(12.0 + c as f64, fs, 1500, 1.0)).collect();
        let m = build_feature_matrix(&window(muse), fs, &PsdSpec::default()).unwrap();
        assert_eq!((m.n_channels, m.n_bins), (4, 128));
    }

    #[test]
    fn nyquist_guard() {
        let w = window(vec![vec![0.0; 600]]);
        assert!(matches!(
            build_feature_matrix(&w, 200.0, &PsdSpec::default()),
            Err(FeatureError::NyquistExceeded { .. })
        ));
    }

    #[test]
    fn feature_file_layout() {
        let rec = FeatureRecord {
            n_channels: 2,
            n_bins: 2,
            label_id: 7,
            values: vec![1.0, -2.0, 0.5, 3.25],
        };
        let mut bytes = Vec::new();
        rec.write(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"EEGF");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &7u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 16);
        assert_eq!(FeatureRecord::read(&bytes[..]).unwrap(), rec);
        assert!(FeatureRecord::read(&bytes[..30]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(FeatureRecord::read(&bad[..]).is_err());
    }
}
