use super::butterworth::{Biquad, FilterCoefficients};

/// Edge extension used before forward-backward filtering.
pub const FILTFILT_PAD: usize = 512;

fn run_sections(sections: &[Biquad], x: &mut [f64], init: Option<&[[f64; 2]]>) {
    for (k, s) in sections.iter().enumerate() {
        let [mut z1, mut z2] = init.map(|z| z[k]).unwrap_or([0.0, 0.0]);
        for v in x.iter_mut() {
            let xin = *v;
            let y = s.b0 * xin + z1;
            z1 = s.b1 * xin - s.a1 * y + z2;
            z2 = s.b2 * xin - s.a2 * y;
            *v = y;
        }
    }
}

/// Per-section steady-state for a unit step, chained through the cascade.
fn step_state(sections: &[Biquad]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sections
        .iter()
        .map(|s| {
            let g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
            let z2 = s.b2 - s.a2 * g;
            let z1 = s.b1 - s.a1 * g + z2;
            let out = [scale * z1, scale * z2];
            scale *= g;
            out
        })
        .collect()
}

/// Single causal pass through the cascade from rest.
pub fn apply_filter_causal(coeffs: &FilterCoefficients, signal: &[f64]) -> Vec<f64> {
    let mut y = signal.to_vec();
    run_sections(&coeffs.sections, &mut y, None);
    y
}

/// Zero-phase filtering: forward pass, reverse, forward again, reverse.
///
/// The signal is extended at both ends by odd reflection (up to
/// [`FILTFILT_PAD`] samples) and each pass starts from the step steady state
/// scaled to the first sample; the extension is trimmed afterwards. Output
/// length equals input length.
pub fn apply_filter(coeffs: &FilterCoefficients, signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = FILTFILT_PAD.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let (first, last) = (signal[0], signal[n - 1]);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

    let zi = step_state(&coeffs.sections);
    let scaled = |z: &[[f64; 2]], x0: f64| -> Vec<[f64; 2]> { z.iter().map(|s| [s[0] * x0, s[1] * x0]).collect() };

    let init = scaled(&zi, ext[0]);
    run_sections(&coeffs.sections, &mut ext, Some(&init));
    ext.reverse();
    let init = scaled(&zi, ext[0]);
    run_sections(&coeffs.sections, &mut ext, Some(&init));
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::butterworth::design_butterworth_bandpass;
    use std::f64::consts::PI;

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    fn band() -> FilterCoefficients {
        design_butterworth_bandpass(4, 50.0, 2000.0, 8000.0).unwrap()
    }

    #[test]
    fn zero_in_zero_out() {
        let y = apply_filter(&band(), &vec![0.0; 1000]);
        assert!(y.iter().all(|&v| v == 0.0));
        assert_eq!(y.len(), 1000);
    }

    #[test]
    fn passband_sine_keeps_amplitude_and_phase() {
        let fs = 8000.0;
        let x = sine(316.0, fs, 16000);
        let y = apply_filter(&band(), &x);
        let mid = &y[4000..12000];
        let peak = mid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 0.02, "amplitude {peak}");
        // Cross-correlation over lags -20..=20 peaks at 0.
        let xc = |lag: i64| -> f64 {
            (4000..12000)
                .map(|i| x[i] * y[(i as i64 + lag) as usize])
                .sum()
        };
        let best = (-20..=20).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn stopband_sine_is_removed() {
        let x = sine(10.0, 8000.0, 16000);
        let y = apply_filter(&band(), &x);
        let peak = y[4000..12000].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak < 0.01, "10 Hz residual {peak}");
    }

    #[test]
    fn symmetric_input_gives_symmetric_output() {
        let n = 16001;
        let c = (n / 2) as f64;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = (i as f64 - c) / 8000.0;
                (-(t / 0.01).powi(2)).exp() * (2.0 * PI * 400.0 * t).cos()
            })
            .collect();
        let y = apply_filter(&band(), &x);
        let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let asym = (0..n).map(|i| (y[i] - y[n - 1 - i]).abs()).fold(0.0, f64::max);
        assert!(asym < 1e-6 * peak, "asymmetry {asym} vs peak {peak}");
    }

    #[test]
    fn short_signals_work() {
        let y = apply_filter(&band(), &[1.0]);
        assert_eq!(y.len(), 1);
        let y = apply_filter(&band(), &[0.5, -0.5, 0.25]);
        assert_eq!(y.len(), 3);
        assert!(y.iter().all(|v| v.is_finite()));
    }
}
