use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::morse::MorseParams;

/// Geometric scale grid, smallest scale first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid {
    pub scales: Vec<f64>,
    pub peak_freq: f64,
    pub voices_per_octave: u32,
}

impl ScaleGrid {
    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// Frequency in Hz at which the wavelet at `scale` peaks.
    pub fn frequency_hz(&self, scale: f64, fs: f64) -> f64 {
        self.peak_freq / scale * fs / (2.0 * PI)
    }

    /// Scale whose peak maps to `freq_hz`.
    pub fn scale_for_frequency(&self, freq_hz: f64, fs: f64) -> f64 {
        self.peak_freq / (2.0 * PI * freq_hz / fs)
    }
}

/// Choose scales from the Nyquist-mapped minimum up to the largest scale whose
/// time spread `s·√β/ω_p` is at most a quarter of the signal.
pub fn select_scales(params: &MorseParams, n_samples: usize) -> ScaleGrid {
    let wp = params.peak_frequency();
    let v = params.voices_per_octave.max(1);
    let s_min = wp / PI;
    let s_max = (n_samples as f64 / 4.0) * wp / params.beta().sqrt();
    let octaves = (s_max / s_min).log2().max(0.0);
    let count = (v as f64 * octaves + 1e-9).floor() as usize + 1;
    let scales = (0..count).map(|k| s_min * 2f64.powf(k as f64 / v as f64)).collect();
    ScaleGrid {
        scales,
        peak_freq: wp,
        voices_per_octave: v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_scale_maps_peak_to_nyquist() {
        let g = select_scales(&MorseParams::default(), 12000);
        assert!((g.scales[0] - 0.5991).abs() < 1e-4);
        assert!((g.scales[0] * PI - g.peak_freq).abs() < 1e-12);
        assert!((g.frequency_hz(g.scales[0], 4000.0) - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn ratio_is_one_voice() {
        let g = select_scales(&MorseParams::default(), 4096);
        let r = 2f64.powf(0.1);
        for w in g.scales.windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-12);
        }
        let p = MorseParams::default();
        let last = *g.scales.last().unwrap();
        assert!(last * p.beta().sqrt() / p.peak_frequency() <= 4096.0 / 4.0 + 1e-9);
        assert!(last * r * p.beta().sqrt() / p.peak_frequency() > 4096.0 / 4.0);
    }

    #[test]
    fn doubling_length_adds_one_octave() {
        let p = MorseParams::default();
        for n in [64usize, 100, 1000, 12000, 32864] {
            assert_eq!(select_scales(&p, 2 * n).len(), select_scales(&p, n).len() + 10, "n = {n}");
        }
    }
}
