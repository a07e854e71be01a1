//! Preprocessing: bandpass at the native rate, resample, peak-normalise, segment.

pub mod butterworth;
pub mod filter;
pub mod resample;
pub mod segment;

use serde::{Deserialize, Serialize};

pub use butterworth::{design_butterworth_bandpass, Biquad, FilterCoefficients};
pub use filter::{apply_filter, apply_filter_causal};
pub use resample::{resample, PolyphaseResampler};
pub use segment::{extract_event_segment, extract_record_segment, select_record_window, SegmentPolicy, Window};

use crate::error::Result;
use crate::ingest::AudioRecording;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub filter_order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    #[serde(flatten)]
    pub policy: SegmentPolicy,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            filter_order: 4,
            low_hz: 50.0,
            high_hz: 2000.0,
            policy: SegmentPolicy::default(),
        }
    }
}

/// Peak normalisation to unit maximum magnitude; an all-zero signal is returned unchanged.
pub fn normalize_amplitude(signal: &[f64]) -> Vec<f64> {
    let peak = signal.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak == 0.0 || !peak.is_finite() {
        return signal.to_vec();
    }
    signal.iter().map(|x| x / peak).collect()
}

/// Full-recording preprocessing: filter at the native rate, resample, normalise.
pub fn preprocess(recording: &AudioRecording, cfg: &DspConfig) -> Result<AudioRecording> {
    let fs = recording.sample_rate as f64;
    let band = design_butterworth_bandpass(cfg.filter_order, cfg.low_hz, cfg.high_hz, fs)?;
    let filtered = apply_filter(&band, &recording.samples);
    let resampled = resample(&filtered, recording.sample_rate, cfg.policy.target_rate);
    Ok(AudioRecording::new(
        recording.id.clone(),
        normalize_amplitude(&resampled),
        cfg.policy.target_rate,
    ))
}
