//! Labeled synthetic lung-sound recordings for desk-scale runs.
//!
//! A recording is band-limited breath noise plus optional tonal components
//! (continuous adventitious sounds: sustained, slowly frequency-modulated
//! tones) and burst components (discontinuous sounds: trains of short
//! Gaussian-windowed oscillations). Annotations mark the time spans of the
//! inserted components.
//!
//! Class presets (`preset_event`, `preset_record`) fix the component
//! parameters per class; the seed only jitters timing and frequencies:
//!
//! | class            | tones (Hz)        | bursts                        |
//! |------------------|-------------------|-------------------------------|
//! | Normal           | none              | none                          |
//! | Rhonchi          | 110–170, +harmonic| none                          |
//! | Wheeze           | 350–500           | none                          |
//! | Stridor          | 800–950, loud     | none                          |
//! | Coarse Crackle   | none              | 5/s, 16 ms, 200–260 Hz, loud  |
//! | Fine Crackle     | none              | 12/s, 6 ms, 650–800 Hz, loud  |
//! | Wheeze & Crackle | 350–500           | 10/s, 6 ms, 650–800 Hz, loud  |

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::annotation::EventAnnotation;
use super::labels::{AnyLabel, EventLabel, RecordLabel};
use super::wav::AudioRecording;
use crate::dsp::{apply_filter_causal, design_butterworth_bandpass};

pub const DEFAULT_SYNTH_RATE: u32 = 8000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneComponent {
    pub center_hz: f64,
    pub fm_depth_hz: f64,
    pub fm_rate_hz: f64,
    pub amplitude: f64,
    /// Relative amplitude of the second harmonic.
    pub harmonic: f64,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstComponent {
    pub rate_hz: f64,
    pub width_ms: f64,
    pub osc_hz: f64,
    pub amplitude: f64,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub class: AnyLabel,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub base_noise_level: f64,
    pub tones: Vec<ToneComponent>,
    pub bursts: Vec<BurstComponent>,
    /// Extra annotated spans carrying no adventitious component (normal breath cycles).
    pub cycle_spans: Vec<(f64, f64)>,
    /// Impulsive artefacts per second (poor-quality recordings).
    pub artefact_rate_hz: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn noise_only(class: AnyLabel, duration_s: f64, seed: u64) -> Self {
        assert!(duration_s > 0.0);
        SyntheticSpec {
            class,
            duration_s,
            sample_rate: DEFAULT_SYNTH_RATE,
            base_noise_level: 0.05,
            tones: vec![],
            bursts: vec![],
            cycle_spans: vec![],
            artefact_rate_hz: 0.0,
            seed,
        }
    }

    /// Class preset with one annotated event placed at a seeded position.
    pub fn preset_event(label: EventLabel, duration_s: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000_0000);
        let mut spec = Self::noise_only(AnyLabel::Event(label), duration_s, seed);
        let max_len = (duration_s - 0.4).max(0.2);
        let len = rng.random_range(1.2..2.4f64).min(max_len);
        let start = rng.random_range(0.1..(duration_s - len - 0.1).max(0.11));
        let span = (start, start + len);
        add_components(&mut spec, label, span, &mut rng);
        spec
    }

    /// Record-level preset: a few breath cycles, some carrying adventitious components.
    pub fn preset_record(label: RecordLabel, duration_s: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ec0_0000_0000_0000);
        let mut spec = Self::noise_only(AnyLabel::Record(label), duration_s, seed);
        if label == RecordLabel::PoorQuality {
            spec.base_noise_level = 0.25;
            spec.artefact_rate_hz = 3.0;
            return spec;
        }
        let cycle = 2.5;
        let n_cycles = ((duration_s - 0.5) / cycle).floor().max(1.0) as usize;
        for k in 0..n_cycles {
            let start = 0.25 + k as f64 * cycle + rng.random_range(0.0..0.3);
            let end = (start + rng.random_range(1.4..2.0)).min(duration_s - 0.05);
            if end <= start {
                continue;
            }
            let adventitious = k % 2 == 1 || n_cycles == 1;
            let ev = match (label, adventitious) {
                (RecordLabel::Cas, true) => EventLabel::Wheeze,
                (RecordLabel::Das, true) => EventLabel::FineCrackle,
                (RecordLabel::CasAndDas, true) => EventLabel::WheezeAndCrackle,
                _ => EventLabel::Normal,
            };
            add_components(&mut spec, ev, (start, end), &mut rng);
        }
        spec
    }
}

fn add_components(spec: &mut SyntheticSpec, label: EventLabel, span: (f64, f64), rng: &mut ChaCha8Rng) {
    let (start_s, end_s) = span;
    let tone = |center: f64, amplitude: f64, harmonic: f64| ToneComponent {
        center_hz: center,
        fm_depth_hz: 8.0,
        fm_rate_hz: 2.0,
        amplitude,
        harmonic,
        start_s,
        end_s,
    };
    let bursts = |rate: f64, width: f64, osc: f64, amplitude: f64| BurstComponent {
        rate_hz: rate,
        width_ms: width,
        osc_hz: osc,
        amplitude,
        start_s,
        end_s,
    };
    match label {
        EventLabel::Normal => spec.cycle_spans.push(span),
        EventLabel::Rhonchi => spec.tones.push(tone(rng.random_range(110.0..170.0), 0.35, 0.5)),
        EventLabel::Wheeze => spec.tones.push(tone(rng.random_range(350.0..500.0), 0.3, 0.0)),
        EventLabel::Stridor => spec.tones.push(tone(rng.random_range(800.0..950.0), 0.45, 0.2)),
        EventLabel::CoarseCrackle => {
            spec.bursts.push(bursts(5.0, 16.0, rng.random_range(200.0..260.0), 1.0))
        }
        EventLabel::FineCrackle => {
            spec.bursts.push(bursts(12.0, 6.0, rng.random_range(650.0..800.0), 1.2))
        }
        EventLabel::WheezeAndCrackle => {
            spec.tones.push(tone(rng.random_range(350.0..500.0), 0.3, 0.0));
            spec.bursts.push(bursts(10.0, 6.0, rng.random_range(650.0..800.0), 1.2));
        }
    }
}

fn ramp(t: f64, start: f64, end: f64) -> f64 {
    const RISE: f64 = 0.03;
    if t < start || t >= end {
        return 0.0;
    }
    let a = ((t - start) / RISE).min(1.0);
    let b = ((end - t) / RISE).min(1.0);
    let x = a.min(b);
    0.5 - 0.5 * (PI * x).cos()
}

fn merge_spans(mut spans: Vec<(f64, f64, u8)>) -> Vec<(f64, f64, u8)> {
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64, u8)> = Vec::new();
    for s in spans {
        match out.last_mut() {
            Some(last) if s.0 < last.1 => {
                last.1 = last.1.max(s.1);
                last.2 |= s.2;
            }
            _ => out.push(s),
        }
    }
    out
}

/// Render a spec into audio plus its labels. Deterministic in the spec (including its seed).
pub fn synthesize_recording(spec: &SyntheticSpec) -> (AudioRecording, RecordLabel, Vec<EventAnnotation>) {
    let fs = spec.sample_rate as f64;
    let n = (spec.duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Breath noise: white noise through a 2nd-order 80-1000 Hz bandpass,
    // slowly modulated by a breathing envelope, scaled to the requested RMS.
    let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let band = design_butterworth_bandpass(2, 80.0, 1000.0_f64.min(0.45 * fs), fs)
        .expect("breath-noise band is valid for synthesis rates");
    let mut noise = apply_filter_causal(&band, &white);
    let breath_period = rng.random_range(2.2..3.2);
    let phase0 = rng.random_range(0.0..2.0 * PI);
    for (i, x) in noise.iter_mut().enumerate() {
        let t = i as f64 / fs;
        *x *= 0.6 + 0.4 * (2.0 * PI * t / breath_period + phase0).sin();
    }
    let rms = (noise.iter().map(|x| x * x).sum::<f64>() / n.max(1) as f64).sqrt();
    let mut signal: Vec<f64> = if rms > 0.0 {
        noise.iter().map(|x| x * spec.base_noise_level / rms).collect()
    } else {
        vec![0.0; n]
    };

    for tone in &spec.tones {
        let mut phase = rng.random_range(0.0..2.0 * PI);
        let fm_phase = rng.random_range(0.0..2.0 * PI);
        for (i, x) in signal.iter_mut().enumerate() {
            let t = i as f64 / fs;
            let f = tone.center_hz + tone.fm_depth_hz * (2.0 * PI * tone.fm_rate_hz * t + fm_phase).sin();
            phase += 2.0 * PI * f / fs;
            let env = ramp(t, tone.start_s, tone.end_s);
            if env > 0.0 {
                *x += tone.amplitude * env * (phase.sin() + tone.harmonic * (2.0 * phase).sin());
            }
        }
    }

    for burst in &spec.bursts {
        let span = (burst.end_s - burst.start_s).max(0.0);
        let count = (burst.rate_hz * span).round().max(1.0) as usize;
        let sigma = burst.width_ms / 1000.0 / 4.0;
        for _ in 0..count {
            let lo = burst.start_s + 2.0 * sigma;
            let hi = (burst.end_s - 2.0 * sigma).max(lo + 1e-6);
            let center = rng.random_range(lo..hi);
            let amp = burst.amplitude * rng.random_range(0.7..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let i0 = ((center - 4.0 * sigma) * fs).floor().max(0.0) as usize;
            let i1 = (((center + 4.0 * sigma) * fs).ceil() as usize).min(n);
            for (i, x) in signal.iter_mut().enumerate().take(i1).skip(i0) {
                let dt = i as f64 / fs - center;
                *x += amp * (-0.5 * (dt / sigma).powi(2)).exp() * (2.0 * PI * burst.osc_hz * dt).sin();
            }
        }
    }

    if spec.artefact_rate_hz > 0.0 {
        let count = (spec.artefact_rate_hz * spec.duration_s).round() as usize;
        for _ in 0..count {
            let at = rng.random_range(0..n.max(1));
            let len = rng.random_range(20..200usize);
            let amp = rng.random_range(0.5..1.0);
            for x in signal.iter_mut().skip(at).take(len) {
                *x += amp * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            }
        }
    }

    let peak = signal.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.95 {
        let g = 0.95 / peak;
        signal.iter_mut().for_each(|x| *x *= g);
    }

    const TONE: u8 = 1;
    const BURST: u8 = 2;
    let mut spans: Vec<(f64, f64, u8)> = Vec::new();
    spans.extend(spec.tones.iter().map(|t| (t.start_s, t.end_s, TONE)));
    spans.extend(spec.bursts.iter().map(|b| (b.start_s, b.end_s, BURST)));
    spans.extend(spec.cycle_spans.iter().map(|&(a, b)| (a, b, 0)));
    let record = match spec.class {
        AnyLabel::Event(l) => l.record_family(),
        AnyLabel::Record(r) => r,
    };
    let events = if record == RecordLabel::PoorQuality {
        vec![]
    } else {
        merge_spans(spans)
            .into_iter()
            .filter_map(|(a, b, kind)| {
                let label = match spec.class {
                    AnyLabel::Event(l) => l,
                    AnyLabel::Record(_) => match kind {
                        0 => EventLabel::Normal,
                        TONE => EventLabel::Wheeze,
                        BURST => EventLabel::FineCrackle,
                        _ => EventLabel::WheezeAndCrackle,
                    },
                };
                let start = (a.max(0.0) * 1000.0).round();
                let end = (b.min(spec.duration_s) * 1000.0).round();
                EventAnnotation::new(start, end, label).ok()
            })
            .collect()
    };
    let id = format!("synth_{}_{}", spec.seed, match spec.class {
        AnyLabel::Event(l) => l.slug(),
        AnyLabel::Record(r) => match r {
            RecordLabel::Normal => "rec_normal",
            RecordLabel::Cas => "rec_cas",
            RecordLabel::Das => "rec_das",
            RecordLabel::CasAndDas => "rec_cas_das",
            RecordLabel::PoorQuality => "rec_pq",
        },
    });
    (AudioRecording::new(id, signal, spec.sample_rate), record, events)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct DFT magnitude at one frequency; independent of any FFT code path.
    fn dft_power(x: &[f64], fs: f64, f: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, v) in x.iter().enumerate() {
            let w = 2.0 * PI * f * n as f64 / fs;
            re += v * w.cos();
            im -= v * w.sin();
        }
        re * re + im * im
    }

    #[test]
    fn noise_only_is_normal_without_events() {
        let spec = SyntheticSpec::noise_only(AnyLabel::Event(EventLabel::Normal), 2.0, 3);
        let (rec, label, events) = synthesize_recording(&spec);
        assert_eq!(label, RecordLabel::Normal);
        assert!(events.is_empty());
        assert_eq!(rec.len(), 16000);
        assert!(rec.samples.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn single_tone_gives_single_wheeze_event() {
        let mut spec = SyntheticSpec::noise_only(AnyLabel::Event(EventLabel::Wheeze), 4.0, 1);
        spec.tones.push(ToneComponent {
            center_hz: 400.0,
            fm_depth_hz: 0.0,
            fm_rate_hz: 0.0,
            amplitude: 0.3,
            harmonic: 0.0,
            start_s: 1.0,
            end_s: 3.0,
        });
        let (_, label, events) = synthesize_recording(&spec);
        assert_eq!(label, RecordLabel::Cas);
        assert_eq!(events, vec![EventAnnotation::new(1000.0, 3000.0, EventLabel::Wheeze).unwrap()]);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SyntheticSpec::preset_event(EventLabel::FineCrackle, 3.0, 42);
        let a = synthesize_recording(&spec);
        let b = synthesize_recording(&spec);
        assert_eq!(a, b);
        let c = synthesize_recording(&SyntheticSpec::preset_event(EventLabel::FineCrackle, 3.0, 43));
        assert_ne!(a.0.samples, c.0.samples);
    }

    #[test]
    fn wheeze_spectral_peak_matches_center() {
        for seed in [1u64, 2, 3] {
            let spec = SyntheticSpec::preset_event(EventLabel::Wheeze, 4.0, seed);
            let tone = spec.tones[0].clone();
            let (rec, _, events) = synthesize_recording(&spec);
            let fs = rec.sample_rate as f64;
            let ev = events[0];
            let a = (ev.start_ms / 1000.0 * fs) as usize;
            let b = (ev.end_ms / 1000.0 * fs) as usize;
            let seg = &rec.samples[a..b];
            let mut best = (0.0, 0.0);
            let mut f = 100.0;
            while f <= 1000.0 {
                let p = dft_power(seg, fs, f);
                if p > best.1 {
                    best = (f, p);
                }
                f += 0.5;
            }
            assert!((best.0 - tone.center_hz).abs() <= 10.0, "peak {} vs {}", best.0, tone.center_hz);
        }
    }

    #[test]
    fn every_event_preset_annotates_one_event_of_its_class() {
        for l in EventLabel::ALL {
            let (rec, record, events) = synthesize_recording(&SyntheticSpec::preset_event(l, 3.5, 9));
            assert_eq!(record, l.record_family());
            assert_eq!(events.len(), 1, "{l}");
            assert_eq!(events[0].label, l);
            assert!(events[0].end_ms <= rec.duration() * 1000.0 + 1.0);
            assert!(rec.samples.iter().all(|x| x.abs() <= 1.0));
        }
    }

    #[test]
    fn poor_quality_record_has_no_events() {
        let (_, record, events) = synthesize_recording(&SyntheticSpec::preset_record(RecordLabel::PoorQuality, 9.216, 5));
        assert_eq!(record, RecordLabel::PoorQuality);
        assert!(events.is_empty());
        let (_, record, events) = synthesize_recording(&SyntheticSpec::preset_record(RecordLabel::CasAndDas, 9.216, 5));
        assert_eq!(record, RecordLabel::CasAndDas);
        assert!(events.iter().any(|e| e.label == EventLabel::WheezeAndCrackle));
    }
}
