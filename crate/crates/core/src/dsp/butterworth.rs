//! Digital Butterworth bandpass design as a cascade of second-order sections.
//!
//! The analog lowpass prototype of order `n` is shifted to a bandpass around
//! the prewarped band edges and mapped through the bilinear transform. The
//! resulting filter has order `2n` and is realised as `n` biquads, each with
//! one zero at DC and one at Nyquist.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// `y = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2) x`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b0 + self.b1 * z_inv + self.b2 * z2;
        let den = 1.0 + self.a1 * z_inv + self.a2 * z2;
        num / den
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCoefficients {
    pub sections: Vec<Biquad>,
    /// Order of the analog lowpass prototype (the nominal "4th-order" design).
    pub prototype_order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub fs: f64,
}

impl FilterCoefficients {
    /// Order of the realised digital filter: two per section.
    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.fs;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }
}

/// Design a Butterworth bandpass with an analog prototype of order `order`.
pub fn design_butterworth_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<FilterCoefficients> {
    if order == 0 {
        return Err(Error::InvalidBand("order must be positive".into()));
    }
    if !(low_hz > 0.0 && low_hz < high_hz) {
        return Err(Error::InvalidBand(format!("need 0 < low ({low_hz}) < high ({high_hz})")));
    }
    if high_hz >= fs / 2.0 {
        return Err(Error::InvalidBand(format!(
            "high cutoff {high_hz} Hz must be below Nyquist ({} Hz); filter at the native rate before resampling",
            fs / 2.0
        )));
    }
    let fs2 = 2.0 * fs;
    let w1 = fs2 * (PI * low_hz / fs).tan();
    let w2 = fs2 * (PI * high_hz / fs).tan();
    let bw = w2 - w1;
    let w0_sq = w1 * w2;

    // Prototype poles on the left half of the unit circle, then lowpass -> bandpass.
    let mut poles = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta) * (bw / 2.0);
        let root = (p * p - w0_sq).sqrt();
        poles.push(p + root);
        poles.push(p - root);
    }
    // Bilinear transform.
    let zpoles: Vec<Complex64> = poles.iter().map(|&p| (fs2 + p) / (fs2 - p)).collect();

    let mut pairs: Vec<(Complex64, Complex64)> = Vec::new();
    let mut reals: Vec<f64> = Vec::new();
    for &p in &zpoles {
        if p.im > 1e-12 {
            pairs.push((p, p.conj()));
        } else if p.im.abs() <= 1e-12 {
            reals.push(p.re);
        }
    }
    reals.sort_by(f64::total_cmp);
    for r in reals.chunks(2) {
        let b = if r.len() == 2 { r[1] } else { 0.0 };
        pairs.push((Complex64::new(r[0], 0.0), Complex64::new(b, 0.0)));
    }
    // Sections ordered by pole radius, sharpest resonance last.
    pairs.sort_by(|a, b| a.0.norm().total_cmp(&b.0.norm()));

    let mut sections: Vec<Biquad> = pairs
        .iter()
        .map(|(p, q)| {
            let a1 = -(p + q).re;
            let a2 = (p * q).re;
            Biquad {
                b0: 1.0,
                b1: 0.0,
                b2: -1.0,
                a1,
                a2,
            }
        })
        .collect();
    debug_assert_eq!(sections.len(), order);

    // Unit gain at the band centre, where the analog response is exactly 1.
    let w0 = w0_sq.sqrt();
    let center_hz = fs / PI * (w0 / fs2).atan();
    let mut filt = FilterCoefficients {
        sections: sections.clone(),
        prototype_order: order,
        low_hz,
        high_hz,
        fs,
    };
    let g = (1.0 / filt.magnitude(center_hz)).powf(1.0 / order as f64);
    for s in &mut sections {
        s.b0 *= g;
        s.b1 *= g;
        s.b2 *= g;
    }
    filt.sections = sections;
    Ok(filt)
}
