//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc kernel.
//!
//! For a ratio `to/from = L/M` (reduced), output sample `n` sits at input
//! position `n*M/L`; its fractional part selects one of `L` precomputed phases.
//! The kernel cutoff is the lower of the two Nyquist rates and the kernel spans
//! `TAPS_PER_PHASE` samples at the lower rate, so downsampling widens the
//! kernel in input samples. Each phase is normalised to unit DC gain.

use std::f64::consts::PI;

pub const KAISER_BETA: f64 = 8.6;
pub const TAPS_PER_PHASE: usize = 32;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(x: f64, beta: f64) -> f64 {
    if x.abs() >= 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - x * x).sqrt()) / bessel_i0(beta)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

#[derive(Debug, Clone)]
pub struct PolyphaseResampler {
    up: u64,
    down: u64,
    reach: i64,
    phases: Vec<Vec<f64>>,
}

impl PolyphaseResampler {
    pub fn new(from_fs: u32, to_fs: u32) -> Self {
        assert!(from_fs > 0 && to_fs > 0, "sample rates must be positive");
        let g = gcd(from_fs as u64, to_fs as u64);
        let up = to_fs as u64 / g;
        let down = from_fs as u64 / g;
        let ratio = up as f64 / down as f64;
        // Cutoff in cycles per input sample, half-width in input samples.
        let fc = 0.5 * ratio.min(1.0);
        let half = (TAPS_PER_PHASE as f64 / 2.0) * (1.0 / ratio).max(1.0);
        let reach = half.ceil() as i64 + 1;
        let phases = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                let mut taps: Vec<f64> = (-reach..=reach)
                    .map(|k| {
                        let t = k as f64 - frac;
                        2.0 * fc * sinc(2.0 * fc * t) * kaiser(t / half, KAISER_BETA)
                    })
                    .collect();
                let s: f64 = taps.iter().sum();
                taps.iter_mut().for_each(|v| *v /= s);
                taps
            })
            .collect();
        PolyphaseResampler {
            up,
            down,
            reach,
            phases,
        }
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len as f64) * self.up as f64 / self.down as f64).round() as usize
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let n_out = self.output_len(x.len());
        let len = x.len() as i64;
        (0..n_out as u64)
            .map(|n| {
                let pos = n * self.down;
                let base = (pos / self.up) as i64;
                let taps = &self.phases[(pos % self.up) as usize];
                let mut acc = 0.0;
                for (j, &h) in taps.iter().enumerate() {
                    let idx = base - self.reach + j as i64;
                    if idx >= 0 && idx < len {
                        acc += h * x[idx as usize];
                    }
                }
                acc
            })
            .collect()
    }
}

/// Resample `signal` from `from_fs` to `to_fs`. Equal rates return the input unchanged.
pub fn resample(signal: &[f64], from_fs: u32, to_fs: u32) -> Vec<f64> {
    if from_fs == to_fs {
        return signal.to_vec();
    }
    PolyphaseResampler::new(from_fs, to_fs).process(signal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    fn dft_mag(x: &[f64], k: usize) -> f64 {
        let n = x.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let w = 2.0 * PI * k as f64 * i as f64 / n;
            re += v * w.cos();
            im -= v * w.sin();
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn identity_for_equal_rates() {
        let x = vec![0.1, -0.2, 0.3];
        assert_eq!(resample(&x, 8000, 8000), x);
    }

    #[test]
    fn halving_keeps_tone_frequency() {
        let x = tone(100.0, 8000.0, 8000);
        let y = resample(&x, 8000, 4000);
        assert_eq!(y.len(), 4000);
        // 1 s at 4 kHz: bin k is k Hz. Periodogram peak over 0..=2000 Hz.
        let peak = (0..=2000).max_by(|&a, &b| dft_mag(&y, a).total_cmp(&dft_mag(&y, b))).unwrap();
        assert!((peak as i64 - 100).abs() <= 1, "peak bin {peak}");
    }

    #[test]
    fn impulse_centroid_maps_to_half_index() {
        let mut x = vec![0.0; 8000];
        x[4000] = 1.0;
        let y = resample(&x, 8000, 4000);
        let e: f64 = y.iter().map(|v| v * v).sum();
        let c: f64 = y.iter().enumerate().map(|(i, v)| i as f64 * v * v).sum::<f64>() / e;
        assert!((c - 2000.0).abs() <= 1.0, "centroid {c}");
    }

    #[test]
    fn passband_within_half_db() {
        for (from, to) in [(8000u32, 4000u32), (44100, 4000), (4000, 8000), (16000, 4000)] {
            let lim = 0.45 * from.min(to) as f64 / 2.0;
            for f in [50.0, 300.0, lim] {
                let n = from as usize * 2;
                let x = tone(f, from as f64, n);
                let y = resample(&x, from, to);
                let mid = &y[y.len() / 4..3 * y.len() / 4];
                let rms = (mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt();
                let db = 20.0 * (rms * 2f64.sqrt()).log10();
                assert!(db.abs() < 0.5, "{from}->{to} at {f} Hz: {db} dB");
            }
        }
    }

    #[test]
    fn output_length_rounds() {
        assert_eq!(resample(&vec![0.0; 44100], 44100, 4000).len(), 4000);
        assert_eq!(resample(&vec![0.0; 1001], 8000, 4000).len(), 501);
    }

    proptest::proptest! {
        #[test]
        fn linear(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..100) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let r = PolyphaseResampler::new(8000, 3000);
            let (rx, ry, rm) = (r.process(&x), r.process(&y), r.process(&mix));
            for i in 0..rm.len() {
                let expect = a * rx[i] + b * ry[i];
                proptest::prop_assert!((rm[i] - expect).abs() <= 1e-6 * (1.0 + expect.abs()));
            }
        }
    }
}
