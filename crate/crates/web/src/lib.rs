//! WebAssembly bindings behind `www/index.html`: filter responses, clean
//! versus noisy multiscale entropy, and PSD feature images.
//!
//! Each binding wraps a plain function that also runs natively, which is
//! what the tests exercise.

use affekt_core::dataset::{synth_subject, ClassSpec, LabelConfig, LabelTable, SynthSpec};
use affekt_core::entropy::{add_gaussian_noise, multiscale_entropy, EntropyParams, NoiseSpec};
use affekt_core::features::{feature_image, PsdSpec};
use affekt_core::pipeline::{design_filters, preprocess};
use affekt_core::signal::{design_filter, FilterKind, FilterSpec};
use wasm_bindgen::prelude::*;

fn parse_kind(kind: &str) -> Result<FilterKind, String> {
    match kind.to_ascii_lowercase().as_str() {
        "lowpass" => Ok(FilterKind::LowPass),
        "highpass" => Ok(FilterKind::HighPass),
        "bandpass" => Ok(FilterKind::BandPass),
        "bandstop" => Ok(FilterKind::BandStop),
        other => Err(format!("unknown filter kind {other:?}")),
    }
}

/// Magnitude in dB at `points` frequencies spread evenly over `[0, fs/2]`.
/// Single-edge kinds use `low_hz` only.
pub fn response_db(
    kind: &str,
    order: u32,
    low_hz: f64,
    high_hz: f64,
    fs: f64,
    points: usize,
) -> Result<Vec<f64>, String> {
    let kind = parse_kind(kind)?;
    let edges_hz = match kind {
        FilterKind::LowPass | FilterKind::HighPass => vec![low_hz],
        _ => vec![low_hz, high_hz],
    };
    let filter = design_filter(&FilterSpec {
        kind,
        order,
        edges_hz,
        sample_rate_hz: fs,
    })
    .map_err(|e| e.to_string())?;
    let step = fs / 2.0 / (points.max(2) - 1) as f64;
    Ok((0..points)
        .map(|i| 20.0 * filter.magnitude(i as f64 * step).max(1e-12).log10())
        .collect())
}

fn muse_subject(seed: u64, channels: usize) -> SynthSpec {
    SynthSpec {
        n_subjects: 1,
        channels,
        seed,
        ..SynthSpec::default()
    }
}

/// Preprocessed first event window of a one-subject synthetic recording,
/// or the first window of the named class.
fn demo_window(seed: u64, channels: usize, class: Option<&str>) -> Result<Vec<Vec<f64>>, String> {
    let spec = muse_subject(seed, channels);
    let (rec, events) = synth_subject(&spec, 0);
    let filters = design_filters(&[FilterSpec::powerline_notch(rec.sample_rate_hz)], rec.sample_rate_hz)
        .map_err(|e| e.to_string())?;
    let clean = preprocess(&rec, &filters);
    let mut table = LabelTable::default();
    let (windows, _) =
        affekt_core::dataset::extract_windows(&clean, &events, 1500, &LabelConfig::default(), &mut table)
            .map_err(|e| e.to_string())?;
    let pick = match class {
        None => windows.into_iter().next(),
        Some(name) => {
            let id = table.id(name).map_err(|e| e.to_string())?;
            windows.into_iter().find(|w| w.label.categorical == id)
        }
    };
    pick.map(|w| w.data)
        .ok_or_else(|| format!("no window for {class:?} with seed {seed}"))
}

/// SampEn per scale for one channel of a clean window and of the same window
/// with bounded noise: `[clean tau 1..10, noisy tau 1..10, ci clean, ci noisy]`.
/// Undefined scales are NaN.
pub fn entropy_pair(seed: u64, channel: usize, noise_max: f64) -> Result<Vec<f64>, String> {
    if noise_max.is_nan() || noise_max <= 0.0 {
        return Err("noise magnitude must be positive".into());
    }
    let window = demo_window(seed, 4, None)?;
    let row = window
        .get(channel)
        .ok_or_else(|| format!("channel {channel} out of range"))?;
    let noisy = add_gaussian_noise(
        std::slice::from_ref(row),
        &NoiseSpec {
            max_magnitude: noise_max,
            seed,
        },
    );
    let params = EntropyParams::default();
    let clean = multiscale_entropy(row, &params).map_err(|e| e.to_string())?;
    let noisy = multiscale_entropy(&noisy[0], &params).map_err(|e| e.to_string())?;
    let values = |p: &affekt_core::entropy::EntropyProfile| {
        p.per_scale
            .iter()
            .map(|s| s.sampen.unwrap_or(f64::NAN))
            .collect::<Vec<_>>()
    };
    let mut out = values(&clean);
    out.extend(values(&noisy));
    out.push(clean.complexity_index);
    out.push(noisy.complexity_index);
    Ok(out)
}

/// Row-major `channels x 128` log-power image of the first window of `class`.
pub fn psd_matrix(seed: u64, channels: usize, class: &str) -> Result<Vec<f64>, String> {
    if channels == 0 || channels > 128 {
        return Err(format!("channels must be in 1..=128, got {channels}"));
    }
    let window = demo_window(seed, channels, Some(class))?;
    let (values, _) = feature_image(&window, 512.0, &PsdSpec::default()).map_err(|e| e.to_string())?;
    Ok(values)
}

pub fn class_names() -> Vec<String> {
    ClassSpec::default().classes.into_iter().map(|c| c.name).collect()
}

#[wasm_bindgen(js_name = filterResponse)]
pub fn filter_response(
    kind: &str,
    order: u32,
    low_hz: f64,
    high_hz: f64,
    fs: f64,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    response_db(kind, order, low_hz, high_hz, fs, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = entropyProfiles)]
pub fn entropy_profiles(seed: u64, channel: usize, noise_max: f64) -> Result<Vec<f64>, JsError> {
    entropy_pair(seed, channel, noise_max).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = psdImage)]
pub fn psd_image(seed: u64, channels: usize, class: &str) -> Result<Vec<f64>, JsError> {
    psd_matrix(seed, channels, class).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = classNames)]
pub fn class_names_js() -> Vec<String> {
    class_names()
}
