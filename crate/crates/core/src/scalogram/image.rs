use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

use super::cwt::PowerMatrix;

pub const LOG_FLOOR: f64 = 1e-12;

/// Image tensor in height-width-channel order, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalogramImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
}

impl ScalogramImage {
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn channels_equal(&self) -> bool {
        self.pixels
            .chunks_exact(self.channels)
            .all(|px| px.iter().all(|&v| v.to_bits() == px[0].to_bits()))
    }

    /// 8-bit PNG, grayscale for one channel and RGB for three.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            c => return Err(Error::Format(format!("cannot write {c}-channel PNG"))),
        };
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let bytes: Vec<u8> = self.pixels.iter().map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8).collect();
        let mut w = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        w.write_image_data(&bytes).map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }
}

/// Optional lookup table mapping a gray level to RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Colormap {
    pub lut: Vec<[f32; 3]>,
}

impl Colormap {
    /// Whitespace-separated `r g b` rows in `[0, 1]`, at least two.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lut = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f32> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("colormap line {}: {e}", i + 1)))?;
            if vals.len() != 3 || vals.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Format(format!("colormap line {}: expected three values in [0, 1]", i + 1)));
            }
            lut.push([vals[0], vals[1], vals[2]]);
        }
        if lut.len() < 2 {
            return Err(Error::Format("colormap needs at least two entries".into()));
        }
        Ok(Colormap { lut })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn map(&self, v: f32) -> [f32; 3] {
        let idx = (v.clamp(0.0, 1.0) * (self.lut.len() - 1) as f32).round() as usize;
        self.lut[idx]
    }
}

fn log_minmax(power: &PowerMatrix) -> Vec<f64> {
    let logged: Vec<f64> = power.data.iter().map(|&p| (p.max(0.0) + LOG_FLOOR).log10()).collect();
    let lo = logged.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logged.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; logged.len()];
    }
    logged.iter().map(|v| (v - lo) / span).collect()
}

/// Triangle-filter taps for one axis: first source index and normalised weights per output index.
///
/// The kernel widens by the shrink factor; upsampling reduces to half-pixel bilinear.
fn axis_taps(dst: usize, src: usize) -> Vec<(usize, Vec<f64>)> {
    let ratio = src as f64 / dst as f64;
    let support = ratio.max(1.0);
    (0..dst)
        .map(|i| {
            let centre = (i as f64 + 0.5) * ratio;
            let lo = ((centre - support).floor().max(0.0)) as usize;
            let hi = ((centre + support).ceil() as usize).min(src);
            let mut w: Vec<f64> = (lo..hi)
                .map(|k| (1.0 - ((k as f64 + 0.5 - centre) / support).abs()).max(0.0))
                .collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            (lo, w)
        })
        .collect()
}

fn bilinear(src: &[f64], rows: usize, cols: usize, height: usize, width: usize) -> Vec<f64> {
    let xt = axis_taps(width, cols);
    let yt = axis_taps(height, rows);
    let mut wide = vec![0.0; rows * width];
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        for (x, (lo, w)) in xt.iter().enumerate() {
            wide[r * width + x] = w.iter().zip(&row[*lo..]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; height * width];
    for (y, (lo, w)) in yt.iter().enumerate() {
        for (k, &wk) in w.iter().enumerate() {
            let src_row = &wide[(lo + k) * width..(lo + k + 1) * width];
            for (o, &v) in out[y * width..(y + 1) * width].iter_mut().zip(src_row) {
                *o += wk * v;
            }
        }
    }
    out
}

/// Log-compress, min-max normalise and resize a power matrix to an image.
///
/// Row 0 is the smallest scale, so the largest scale lands on the bottom row.
pub fn render_image(power: &PowerMatrix, height: usize, width: usize) -> ScalogramImage {
    render_image_with(power, height, width, None)
}

pub fn render_image_with(power: &PowerMatrix, height: usize, width: usize, colormap: Option<&Colormap>) -> ScalogramImage {
    assert!(power.rows > 0 && power.cols > 0, "empty power matrix");
    let norm = log_minmax(power);
    let gray = bilinear(&norm, power.rows, power.cols, height, width);
    let mut pixels = Vec::with_capacity(height * width * 3);
    for v in gray {
        let v = (v as f32).clamp(0.0, 1.0);
        match colormap {
            Some(cm) => pixels.extend_from_slice(&cm.map(v)),
            None => pixels.extend_from_slice(&[v, v, v]),
        }
    }
    ScalogramImage {
        height,
        width,
        channels: 3,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> PowerMatrix {
        let data = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
        PowerMatrix { data, rows, cols }
    }

    #[test]
    fn constant_power_gives_black_image() {
        let img = render_image(&matrix(10, 30, |_, _| 4.2), 224, 224);
        assert!(img.pixels.iter().all(|&v| v == 0.0));
        assert_eq!(img.pixels.len(), 224 * 224 * 3);
    }

    #[test]
    fn same_size_resize_is_identity() {
        let p = matrix(224, 224, |r, c| ((r * 7 + c * 3) % 50) as f64 + 1.0);
        let img = render_image(&p, 224, 224);
        let logged: Vec<f64> = p.data.iter().map(|v| (v + LOG_FLOOR).log10()).collect();
        let lo = logged.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = logged.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (i, l) in logged.iter().enumerate() {
            let expect = ((l - lo) / (hi - lo)) as f32;
            assert_eq!(img.pixels[i * 3], expect);
        }
        assert!(img.channels_equal());
    }

    #[test]
    fn bilinear_matches_half_pixel_oracle() {
        // 2x2 upsampled to 4x4: output pixel centres sit at -0.25, 0.25, 0.75, 1.25 in source units.
        let src = [0.0, 1.0, 2.0, 3.0];
        let out = bilinear(&src, 2, 2, 4, 4);
        let w = [0.0, 0.25, 0.75, 1.0];
        for y in 0..4 {
            for x in 0..4 {
                let expect = 2.0 * w[y] + w[x];
                assert!((out[y * 4 + x] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shrinking_averages_every_sample() {
        // A single bright column must survive a 100x horizontal shrink.
        let mut src = vec![0.0; 1000];
        src[437] = 1.0;
        let out = bilinear(&src, 1, 1000, 1, 10);
        let total: f64 = out.iter().sum();
        assert!(out[4] > 0.0 && (total - 0.01).abs() < 2e-3, "{out:?}");
        let flat = bilinear(&[0.3; 600], 2, 300, 2, 7);
        assert!(flat.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn colormap_round_trip() {
        let cm = Colormap::parse("0 0 0\n1 0.5 0\n").unwrap();
        assert_eq!(cm.map(0.1), [0.0, 0.0, 0.0]);
        assert_eq!(cm.map(0.9), [1.0, 0.5, 0.0]);
        assert!(Colormap::parse("0 0 0\n").is_err());
        assert!(Colormap::parse("0 0 2\n1 1 1\n").is_err());
        let img = render_image_with(&matrix(2, 2, |r, _| r as f64 + 1.0), 2, 2, Some(&cm));
        assert_eq!(img.get(1, 0, 1), 0.5);
    }

    #[test]
    fn png_values_are_rounded() {
        let dir = tempfile::tempdir().unwrap();
        let img = ScalogramImage {
            height: 1,
            width: 2,
            channels: 3,
            pixels: vec![0.0, 0.0, 0.0, 0.5, 0.5, 0.5],
        };
        let path = dir.path().join("x.png");
        img.write_png(&path).unwrap();
        let dec = png::Decoder::new(std::io::BufReader::new(File::open(&path).unwrap()));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        reader.next_frame(&mut buf).unwrap();
        assert_eq!(&buf[..6], &[0, 0, 0, 128, 128, 128]);
    }
}
