//! Butterworth filter design, zero-phase filtering and per-channel z-scoring.
//!
//! Filters are designed from the analog Butterworth prototype
//! `|G(w)| = 1 / sqrt(1 + w^(2n))`, mapped to the requested response type in
//! the s-plane and discretized with a pre-warped bilinear transform. The
//! result is realized as a cascade of second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Variance floor below which a channel is treated as constant.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("filter edge {edge_hz} Hz outside (0, {nyquist_hz}) Hz")]
    EdgeOutOfRange { edge_hz: f64, nyquist_hz: f64 },
    #[error("invalid filter edges {0:?}: expected low < high")]
    InvalidEdges(Vec<f64>),
    #[error("filter order {0} outside [1, 12]")]
    InvalidOrder(u32),
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
}

/// Multichannel EEG time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub subject_id: String,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    /// `channels x n_samples`, microvolts.
    pub data: Vec<Vec<f64>>,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        sample_rate_hz: f64,
        channel_names: Vec<String>,
        data: Vec<Vec<f64>>,
    ) -> Result<Self, SignalError> {
        let rec = Recording {
            subject_id: subject_id.into(),
            sample_rate_hz,
            channel_names,
            data,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        let bad = |m: String| Err(SignalError::InvalidRecording(m));
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad(format!("sample rate {}", self.sample_rate_hz));
        }
        if self.data.len() != self.channel_names.len() {
            return bad(format!(
                "{} data rows for {} channel names",
                self.data.len(),
                self.channel_names.len()
            ));
        }
        let n = self.n_samples();
        if n == 0 {
            return bad("no samples".into());
        }
        for (name, row) in self.channel_names.iter().zip(&self.data) {
            if row.len() != n {
                return bad(format!("channel {name} has {} samples, expected {n}", row.len()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return bad(format!("channel {name} has non-finite samples"));
            }
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.data.len()
    }

    pub fn n_samples(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn map_channels(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Recording {
        Recording {
            subject_id: self.subject_id.clone(),
            sample_rate_hz: self.sample_rate_hz,
            channel_names: self.channel_names.clone(),
            data: self.data.iter().map(|row| f(row)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterKind {
    LowPass,
    HighPass,
    BandPass,
    BandStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: u32,
    pub edges_hz: Vec<f64>,
    /// May be left out of pipeline configs, which design at the data's rate.
    #[serde(default)]
    pub sample_rate_hz: f64,
}

impl FilterSpec {
    /// 48-52 Hz order-4 band-stop used to remove powerline interference.
    pub fn powerline_notch(sample_rate_hz: f64) -> Self {
        Self::notch_around(50.0, sample_rate_hz)
    }

    /// Same notch centered on a 60 Hz mains frequency.
    pub fn powerline_notch_60(sample_rate_hz: f64) -> Self {
        Self::notch_around(60.0, sample_rate_hz)
    }

    fn notch_around(center_hz: f64, sample_rate_hz: f64) -> Self {
        FilterSpec {
            kind: FilterKind::BandStop,
            order: 4,
            edges_hz: vec![center_hz - 2.0, center_hz + 2.0],
            sample_rate_hz,
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(1..=12).contains(&self.order) {
            return Err(SignalError::InvalidOrder(self.order));
        }
        let nyquist_hz = self.sample_rate_hz / 2.0;
        let expected = match self.kind {
            FilterKind::LowPass | FilterKind::HighPass => 1,
            FilterKind::BandPass | FilterKind::BandStop => 2,
        };
        if self.edges_hz.len() != expected {
            return Err(SignalError::InvalidEdges(self.edges_hz.clone()));
        }
        for &edge_hz in &self.edges_hz {
            if !(edge_hz > 0.0 && edge_hz < nyquist_hz) {
                return Err(SignalError::EdgeOutOfRange { edge_hz, nyquist_hz });
            }
        }
        if expected == 2 && self.edges_hz[0] >= self.edges_hz[1] {
            return Err(SignalError::InvalidEdges(self.edges_hz.clone()));
        }
        Ok(())
    }
}

/// Analog Butterworth low-pass prototype magnitude at normalized frequency `w`.
pub fn analog_butterworth_gain(order: u32, w: f64) -> f64 {
    1.0 / (1.0 + w.abs().powi(2 * order as i32)).sqrt()
}

/// One biquad: `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Section {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (1.0 + self.a[0] * z_inv + self.a[1] * z2)
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        quadratic_roots(self.a[0], self.a[1])
    }

    /// Transposed direct form II. `state` is the pair of delay registers.
    #[inline]
    fn step(&self, x: f64, state: &mut [f64; 2]) -> f64 {
        let y = self.b[0] * x + state[0];
        state[0] = self.b[1] * x - self.a[0] * y + state[1];
        state[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    /// Delay registers giving a steady-state response to a unit step.
    fn step_state(&self) -> [f64; 2] {
        let dc = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1]);
        let s1 = self.b[2] - self.a[1] * dc;
        let s0 = dc - self.b[0];
        [s0, s1]
    }
}

fn quadratic_roots(p: f64, q: f64) -> [Complex64; 2] {
    let disc = Complex64::new(p * p - 4.0 * q, 0.0).sqrt();
    [(-p + disc) / 2.0, (-p - disc) / 2.0]
}

/// Cascade of second-order sections. Filtering never mutates the realization;
/// delay registers are allocated per call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRealization {
    pub spec: FilterSpec,
    pub sections: Vec<Section>,
}

impl FilterRealization {
    /// Complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.spec.sample_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Causal single pass starting from rest.
    pub fn filter_causal(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for section in &self.sections {
            let mut state = [0.0; 2];
            for v in out.iter_mut() {
                *v = section.step(*v, &mut state);
            }
        }
        out
    }

    /// Zero-phase forward-backward filtering with odd-extension padding and
    /// steady-state initial conditions at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = self.pad_len().min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|k| 2.0 * x[0] - x[k]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|k| 2.0 * x[n - 1] - x[n - 1 - k]));

        self.run_with_steady_state(&mut ext);
        ext.reverse();
        self.run_with_steady_state(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }

    fn pad_len(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    fn run_with_steady_state(&self, buf: &mut [f64]) {
        let Some(&first) = buf.first() else { return };
        let mut x0 = first;
        for section in &self.sections {
            let zi = section.step_state();
            let mut state = [zi[0] * x0, zi[1] * x0];
            for v in buf.iter_mut() {
                *v = section.step(*v, &mut state);
            }
            x0 = buf[0];
        }
    }
}

/// Designs a digital Butterworth filter as cascaded second-order sections.
pub fn design_filter(spec: &FilterSpec) -> Result<FilterRealization, SignalError> {
    spec.validate()?;
    let fs = spec.sample_rate_hz;
    let n = spec.order as usize;
    let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    let bilinear = |s: Complex64| (2.0 * fs + s) / (2.0 * fs - s);

    let prototype: Vec<Complex64> = (0..n)
        .map(|k| {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect();

    let (analog_poles, digital_zeros, reference_z): (Vec<Complex64>, Vec<Complex64>, Complex64) = match spec.kind {
        FilterKind::LowPass => {
            let wc = warp(spec.edges_hz[0]);
            let poles = prototype.iter().map(|p| p * wc).collect();
            (poles, vec![Complex64::new(-1.0, 0.0); n], Complex64::new(1.0, 0.0))
        }
        FilterKind::HighPass => {
            let wc = warp(spec.edges_hz[0]);
            let poles = prototype.iter().map(|p| wc / p).collect();
            (poles, vec![Complex64::new(1.0, 0.0); n], Complex64::new(-1.0, 0.0))
        }
        FilterKind::BandPass | FilterKind::BandStop => {
            let (w1, w2) = (warp(spec.edges_hz[0]), warp(spec.edges_hz[1]));
            let bw = w2 - w1;
            let w0 = (w1 * w2).sqrt();
            let mut poles = Vec::with_capacity(2 * n);
            for p in &prototype {
                let scaled = if spec.kind == FilterKind::BandPass {
                    p * bw
                } else {
                    bw / p
                };
                let disc = (scaled * scaled - 4.0 * w0 * w0).sqrt();
                poles.push((scaled + disc) / 2.0);
                poles.push((scaled - disc) / 2.0);
            }
            let center = bilinear(Complex64::new(0.0, w0));
            if spec.kind == FilterKind::BandPass {
                let mut zeros = vec![Complex64::new(1.0, 0.0); n];
                zeros.extend(vec![Complex64::new(-1.0, 0.0); n]);
                (poles, zeros, center)
            } else {
                let mut zeros = Vec::with_capacity(2 * n);
                for _ in 0..n {
                    zeros.push(center);
                    zeros.push(center.conj());
                }
                (poles, zeros, Complex64::new(1.0, 0.0))
            }
        }
    };

    let digital_poles: Vec<Complex64> = analog_poles.iter().map(|&s| bilinear(s)).collect();
    let mut sections = pair_into_sections(&digital_poles, &digital_zeros);

    let z_inv = reference_z.inv();
    let gain: f64 = sections.iter().map(|s| s.response(z_inv)).product::<Complex64>().norm();
    for b in sections[0].b.iter_mut() {
        *b /= gain;
    }
    Ok(FilterRealization {
        spec: spec.clone(),
        sections,
    })
}

/// Groups roots into real quadratic factors: conjugate pairs first, then
/// leftover real roots two at a time.
fn quadratic_factors(roots: &[Complex64]) -> Vec<[f64; 2]> {
    const IMAG_TOL: f64 = 1e-10;
    let mut complex: Vec<Complex64> = roots.iter().copied().filter(|r| r.im > IMAG_TOL).collect();
    let mut real: Vec<f64> = roots.iter().filter(|r| r.im.abs() <= IMAG_TOL).map(|r| r.re).collect();
    // Poles nearest the unit circle last so early sections stay well damped.
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(|a, b| a.abs().total_cmp(&b.abs()));

    let mut factors: Vec<[f64; 2]> = complex.iter().map(|r| [-2.0 * r.re, r.norm_sqr()]).collect();
    for chunk in real.chunks(2) {
        match chunk {
            [r1, r2] => factors.push([-(r1 + r2), r1 * r2]),
            [r] => factors.push([-r, 0.0]),
            _ => unreachable!(),
        }
    }
    factors
}

fn pair_into_sections(poles: &[Complex64], zeros: &[Complex64]) -> Vec<Section> {
    let pole_factors = quadratic_factors(poles);
    let mut zero_factors = quadratic_factors(zeros);
    zero_factors.resize(pole_factors.len(), [0.0, 0.0]);
    pole_factors
        .iter()
        .zip(&zero_factors)
        .map(|(pf, zf)| {
            // A first-order pole factor keeps its numerator first order too.
            let b = if pf[1] == 0.0 && zf[1] == 0.0 {
                [1.0, zf[0], 0.0]
            } else {
                [1.0, zf[0], zf[1]]
            };
            Section { b, a: *pf }
        })
        .collect()
}

/// Filters each channel independently with forward-backward application.
pub fn apply_filter(realization: &FilterRealization, rec: &Recording) -> Recording {
    rec.map_channels(|row| realization.filtfilt(row))
}

/// Standard score of one channel using the population standard deviation.
/// Channels with `sigma < SIGMA_FLOOR` map to zeros.
pub fn zscore_channel(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma < SIGMA_FLOOR {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / sigma).collect()
}

pub fn zscore(rec: &Recording) -> Recording {
    rec.map_channels(zscore_channel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// Direct evaluation of the cascade transfer function, independent of
    /// `Section::response`.
    fn direct_response(sections: &[Section], freq: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq / fs;
        let mut num = Complex64::new(1.0, 0.0);
        let mut den = Complex64::new(1.0, 0.0);
        for s in sections {
            let e1 = Complex64::new((-w).cos(), (-w).sin());
            let e2 = Complex64::new((-2.0 * w).cos(), (-2.0 * w).sin());
            num *= s.b[0] + s.b[1] * e1 + s.b[2] * e2;
            den *= 1.0 + s.a[0] * e1 + s.a[1] * e2;
        }
        (num / den).norm()
    }

    fn lowpass(order: u32, edge: f64, fs: f64) -> FilterSpec {
        FilterSpec {
            kind: FilterKind::LowPass,
            order,
            edges_hz: vec![edge],
            sample_rate_hz: fs,
        }
    }

    #[test]
    fn analog_gain_values() {
        assert_eq!(analog_butterworth_gain(4, 0.0), 1.0);
        assert!((analog_butterworth_gain(4, 1.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((analog_butterworth_gain(2, 2.0) - 1.0 / 17f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn lowpass_cutoff_is_half_power() {
        let f = design_filter(&lowpass(4, 30.0, 256.0)).unwrap();
        assert!((f.magnitude(30.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert_eq!(f.sections.len(), 2);
        assert!(f.is_stable());
    }

    #[test]
    fn odd_order_lowpass_has_first_order_section() {
        let f = design_filter(&lowpass(5, 40.0, 256.0)).unwrap();
        assert_eq!(f.sections.len(), 3);
        assert!((f.magnitude(0.0) - 1.0).abs() < 1e-12);
        assert!((f.magnitude(40.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn notch_attenuates_50hz_in_direct_evaluation() {
        let f = design_filter(&FilterSpec::powerline_notch(512.0)).unwrap();
        let mag = direct_response(&f.sections, 50.0, 512.0);
        assert!(mag <= 10f64.powf(-30.0 / 20.0), "|H(50)| = {mag}");
        assert!(f.is_stable());
        assert_eq!(f.sections.len(), 4);
    }

    #[test]
    fn highpass_and_bandpass_match_prototype_at_edges() {
        let hp = design_filter(&FilterSpec {
            kind: FilterKind::HighPass,
            order: 3,
            edges_hz: vec![10.0],
            sample_rate_hz: 256.0,
        })
        .unwrap();
        assert!((hp.magnitude(10.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!((hp.magnitude(128.0) - 1.0).abs() < 1e-9);

        let bp = design_filter(&FilterSpec {
            kind: FilterKind::BandPass,
            order: 4,
            edges_hz: vec![8.0, 12.0],
            sample_rate_hz: 256.0,
        })
        .unwrap();
        for edge in [8.0, 12.0] {
            assert!((bp.magnitude(edge) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        }
        assert!(bp.magnitude(30.0) < 1e-3);
        assert!(bp.is_stable());
    }

    #[test]
    fn invalid_specs_rejected() {
        let bp = FilterSpec {
            kind: FilterKind::BandPass,
            order: 4,
            edges_hz: vec![130.0, 120.0],
            sample_rate_hz: 512.0,
        };
        assert!(matches!(design_filter(&bp), Err(SignalError::InvalidEdges(_))));
        assert!(matches!(
            design_filter(&lowpass(4, 128.0, 256.0)),
            Err(SignalError::EdgeOutOfRange { .. })
        ));
        assert_eq!(
            design_filter(&lowpass(13, 30.0, 256.0)),
            Err(SignalError::InvalidOrder(13))
        );
        assert_eq!(
            design_filter(&lowpass(0, 30.0, 256.0)),
            Err(SignalError::InvalidOrder(0))
        );
    }

    #[test]
    fn notch_tones() {
        let fs = 512.0;
        let f = design_filter(&FilterSpec::powerline_notch(fs)).unwrap();
        let zero = f.filtfilt(&vec![0.0; 1000]);
        assert!(zero.iter().all(|&v| v == 0.0));

        let hum = sine(50.0, fs, 5120);
        let out = f.filtfilt(&hum);
        assert!(rms(&out) <= 0.05 * rms(&hum), "ratio {}", rms(&out) / rms(&hum));

        let alpha = sine(10.0, fs, 5120);
        let out = f.filtfilt(&alpha);
        assert!((rms(&out) / rms(&alpha) - 1.0).abs() < 0.05);
    }

    #[test]
    fn filter_is_linear() {
        let f = design_filter(&FilterSpec::powerline_notch(512.0)).unwrap();
        let x: Vec<f64> = (0..700).map(|i| ((i * 37 % 101) as f64 - 50.0) / 7.0).collect();
        let y: Vec<f64> = (0..700).map(|i| (i as f64 * 0.3).cos() * 3.0).collect();
        let (a, b) = (2.5, -0.75);
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = f.filtfilt(&mixed);
        let (fx, fy) = (f.filtfilt(&x), f.filtfilt(&y));
        let scale = lhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..lhs.len() {
            let rhs = a * fx[i] + b * fy[i];
            assert!((lhs[i] - rhs).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn zscore_examples() {
        assert_eq!(zscore_channel(&[1.0, 1.0, 1.0, 1.0]), vec![0.0; 4]);
        assert_eq!(zscore_channel(&[0.0, 2.0]), vec![-1.0, 1.0]);
    }

    #[test]
    fn recording_validation() {
        let ok = Recording::new("s", 256.0, vec!["a".into()], vec![vec![1.0, 2.0]]);
        assert!(ok.is_ok());
        let ragged = Recording::new(
            "s",
            256.0,
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 2.0], vec![1.0]],
        );
        assert!(ragged.is_err());
        let names = Recording::new("s", 256.0, vec![], vec![vec![1.0]]);
        assert!(names.is_err());
        let nan = Recording::new("s", 256.0, vec!["a".into()], vec![vec![f64::NAN]]);
        assert!(nan.is_err());
    }
}
