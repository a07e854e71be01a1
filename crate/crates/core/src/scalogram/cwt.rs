use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::morse::MorseParams;
use super::scales::ScaleGrid;

/// Complex CWT coefficients, one row per scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalogramMatrix {
    pub coefficients: Vec<Complex64>,
    pub n_scales: usize,
    pub n_samples: usize,
    pub grid: ScaleGrid,
    pub sample_rate: f64,
}

impl ScalogramMatrix {
    pub fn row(&self, scale: usize) -> &[Complex64] {
        &self.coefficients[scale * self.n_samples..(scale + 1) * self.n_samples]
    }

    pub fn at(&self, scale: usize, t: usize) -> Complex64 {
        self.coefficients[scale * self.n_samples + t]
    }
}

/// Real matrix stored row-major (`rows` scales by `cols` samples).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMatrix {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl PowerMatrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Radian frequency of DFT bin `k` for a length-`n` transform, in `(-π, π]`.
fn bin_omega(k: usize, n: usize) -> f64 {
    let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    2.0 * PI * kk / n as f64
}

/// Continuous wavelet transform via the FFT, circular boundary.
pub fn cwt(signal: &[f64], params: &MorseParams, grid: &ScaleGrid, sample_rate: f64) -> ScalogramMatrix {
    let n = signal.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut spectrum: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fwd.process(&mut spectrum);
    let omegas: Vec<f64> = (0..n).map(|k| bin_omega(k, n)).collect();

    let mut coefficients = Vec::with_capacity(n * grid.len());
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); inv.get_inplace_scratch_len()];
    let inv_n = 1.0 / n as f64;
    for &a in &grid.scales {
        let gain = a.sqrt() * inv_n;
        for ((b, x), &w) in buf.iter_mut().zip(&spectrum).zip(&omegas) {
            *b = *x * (params.value(a * w) * gain);
        }
        inv.process_with_scratch(&mut buf, &mut scratch);
        coefficients.extend_from_slice(&buf);
    }
    ScalogramMatrix {
        coefficients,
        n_scales: grid.len(),
        n_samples: n,
        grid: grid.clone(),
        sample_rate,
    }
}

/// Elementwise squared magnitude.
pub fn power_scalogram(m: &ScalogramMatrix) -> PowerMatrix {
    PowerMatrix {
        data: m.coefficients.iter().map(|z| z.norm_sqr()).collect(),
        rows: m.n_scales,
        cols: m.n_samples,
    }
}
