use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A mono sampled signal with its rate and identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioRecording {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioRecording {
    pub fn new(id: impl Into<String>, samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        AudioRecording {
            id: id.into(),
            samples,
            sample_rate,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(msg) => Error::CorruptHeader(msg.to_string()),
        hound::Error::Unsupported => Error::UnsupportedFormat("codec not supported".into()),
        other => Error::CorruptHeader(other.to_string()),
    }
}

/// Read the sample rate and frame count from a WAV header without decoding samples.
pub fn wav_info(path: &Path) -> Result<(u32, usize)> {
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    Ok((spec.sample_rate, reader.duration() as usize))
}

/// Load a mono PCM WAV (16-bit integer or 32-bit float) as amplitudes in [-1, 1].
pub fn load_wav(path: &Path) -> Result<AudioRecording> {
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels (only mono is supported)",
            spec.channels
        )));
    }
    if spec.sample_rate == 0 {
        return Err(Error::CorruptHeader("sample rate is zero".into()));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| (v as f64).clamp(-1.0, 1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{bits}-bit {fmt:?} samples"
            )))
        }
    };
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(AudioRecording::new(id, samples, spec.sample_rate))
}

/// Write a recording as 16-bit mono PCM. Amplitudes are clipped to [-1, 1].
pub fn write_wav(path: &Path, recording: &AudioRecording) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: recording.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &x in &recording.samples {
        let v = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

/// Write a recording as 32-bit float mono.
pub fn write_wav_f32(path: &Path, recording: &AudioRecording) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: recording.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &x in &recording.samples {
        writer
            .write_sample(x as f32)
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(16384i16).unwrap();
        w.write_sample(-32768i16).unwrap();
        w.finalize().unwrap();
        let rec = load_wav(&path).unwrap();
        assert_eq!(rec.samples, vec![0.5, -1.0]);
        assert_eq!(rec.id, "half");
    }

    #[test]
    fn silent_file_duration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zeros.wav");
        write_wav(&path, &AudioRecording::new("z", vec![0.0; 8000], 8000)).unwrap();
        let rec = load_wav(&path).unwrap();
        assert_eq!(rec.duration(), 1.0);
        assert!(rec.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sine_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.wav");
        let fs = 8000.0;
        let sine: Vec<f64> = (0..8000)
            .map(|n| 0.9 * (2.0 * std::f64::consts::PI * 100.0 * n as f64 / fs).sin())
            .collect();
        write_wav(&path, &AudioRecording::new("s", sine.clone(), 8000)).unwrap();
        let rec = load_wav(&path).unwrap();
        let err = sine
            .iter()
            .zip(&rec.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 2.0 / 32768.0, "round-trip error {err}");
    }

    #[test]
    fn float_wav_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        write_wav_f32(&path, &AudioRecording::new("f", vec![0.25, -0.75], 4000)).unwrap();
        let rec = load_wav(&path).unwrap();
        assert_eq!(rec.samples, vec![0.25, -0.75]);
        assert_eq!(rec.sample_rate, 4000);
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&path), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn garbage_header_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"RIFF\x04\x00\x00\x00WAVEjunkjunkjunk").unwrap();
        assert!(matches!(
            load_wav(&path),
            Err(Error::CorruptHeader(_)) | Err(Error::Io { .. })
        ));
    }
}
