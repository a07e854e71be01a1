//! Generalised Morse analytic wavelets, defined in the frequency domain.
//!
//! `Ψ(ω) = a·ω^β·exp(-ω^γ)` for `ω > 0` and zero otherwise, with
//! `a = 2·(e·γ/β)^(β/γ)` so that the peak value is exactly 2. The symmetry
//! parameter is `γ`; the time-bandwidth product is `P² = β·γ`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorseParams {
    pub gamma_sym: f64,
    pub time_bandwidth: f64,
    pub voices_per_octave: u32,
}

impl Default for MorseParams {
    fn default() -> Self {
        MorseParams {
            gamma_sym: 3.0,
            time_bandwidth: 60.0,
            voices_per_octave: 10,
        }
    }
}

impl MorseParams {
    pub fn beta(&self) -> f64 {
        self.time_bandwidth / self.gamma_sym
    }

    /// Peak radian frequency `(β/γ)^(1/γ)` of the unscaled wavelet.
    pub fn peak_frequency(&self) -> f64 {
        (self.beta() / self.gamma_sym).powf(1.0 / self.gamma_sym)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.gamma_sym > 0.0) || !(self.beta() > 0.0) || self.voices_per_octave == 0 {
            return Err(crate::Error::Config(format!("invalid Morse parameters {self:?}")));
        }
        Ok(())
    }

    fn log_norm(&self) -> f64 {
        let (b, g) = (self.beta(), self.gamma_sym);
        2f64.ln() + (b / g) * (std::f64::consts::E * g / b).ln()
    }

    /// Wavelet value at one radian frequency.
    pub fn value(&self, omega: f64) -> f64 {
        if omega <= 0.0 {
            return 0.0;
        }
        let (b, g) = (self.beta(), self.gamma_sym);
        (self.log_norm() + b * omega.ln() - omega.powf(g)).exp()
    }
}

/// Evaluate the wavelet over a grid of radian frequencies.
pub fn morse_wavelet_freq(params: &MorseParams, omega: &[f64]) -> Vec<f64> {
    omega.iter().map(|&w| params.value(w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn vanishes_for_nonpositive_frequency() {
        let p = MorseParams::default();
        assert_eq!(morse_wavelet_freq(&p, &[-1.0, -0.1, 0.0]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn peak_location_and_height() {
        let p = MorseParams::default();
        assert_eq!(p.beta(), 20.0);
        let wp = p.peak_frequency();
        // d/dω log Ψ = β/ω - γ ω^(γ-1) = 0  =>  ω = (β/γ)^(1/γ)
        let expected = (20.0f64 / 3.0).cbrt();
        assert!((wp - expected).abs() < 1e-12);
        assert!((wp - 1.8821).abs() < 1e-4);
        assert!((p.value(wp) - 2.0).abs() < 1e-12);
        // Dense grid argmax agrees.
        let grid: Vec<f64> = (1..=200_000).map(|i| PI * i as f64 / 200_000.0).collect();
        let vals = morse_wavelet_freq(&p, &grid);
        let (imax, _) = vals.iter().enumerate().fold((0, 0.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        assert!((grid[imax] - expected).abs() < 2e-5);
    }
}
