use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AudioRecording, EventAnnotation};

/// Duration tolerance when classifying recordings by length.
pub const DURATION_TOLERANCE_S: f64 = 0.001;
/// Recordings of this length choose between a leading and a trailing window.
pub const LONG_RECORDING_S: f64 = 15.216;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentPolicy {
    pub record_window_s: f64,
    pub head_trim_s: f64,
    pub event_length_s: f64,
    pub target_rate: u32,
}

impl Default for SegmentPolicy {
    fn default() -> Self {
        SegmentPolicy {
            record_window_s: 8.216,
            head_trim_s: 1.0,
            event_length_s: 3.0,
            target_rate: 4000,
        }
    }
}

impl SegmentPolicy {
    pub fn record_window_samples(&self) -> usize {
        (self.record_window_s * self.target_rate as f64).round() as usize
    }

    pub fn event_samples(&self) -> usize {
        (self.event_length_s * self.target_rate as f64).round() as usize
    }

    pub fn min_record_duration_s(&self) -> f64 {
        self.record_window_s + self.head_trim_s
    }
}

/// Which window of a recording was kept, in seconds from the recording start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start_s: f64,
    pub end_s: f64,
}

fn slice_padded(samples: &[f64], start: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    if start < samples.len() {
        let avail = (samples.len() - start).min(len);
        out[..avail].copy_from_slice(&samples[start..start + avail]);
    }
    out
}

fn midpoints_in(events: &[EventAnnotation], w: Window) -> usize {
    events
        .iter()
        .filter(|e| {
            let m = e.midpoint_s();
            m >= w.start_s && m <= w.end_s
        })
        .count()
}

/// Pick the analysis window for a whole recording.
///
/// Long (15.216 s) recordings keep whichever of the leading `[0, W]` or
/// trailing `[d - W, d]` window holds more event midpoints, the leading one on
/// ties. Everything else keeps `[head_trim, head_trim + W]`.
pub fn select_record_window(duration_s: f64, events: &[EventAnnotation], policy: &SegmentPolicy) -> Result<Window> {
    let required = policy.min_record_duration_s();
    if duration_s + DURATION_TOLERANCE_S < required {
        return Err(Error::TooShort {
            duration_s,
            required_s: required,
        });
    }
    let w = policy.record_window_s;
    if (duration_s - LONG_RECORDING_S).abs() <= DURATION_TOLERANCE_S {
        let lead = Window { start_s: 0.0, end_s: w };
        let trail = Window {
            start_s: duration_s - w,
            end_s: duration_s,
        };
        if midpoints_in(events, trail) > midpoints_in(events, lead) {
            return Ok(trail);
        }
        return Ok(lead);
    }
    Ok(Window {
        start_s: policy.head_trim_s,
        end_s: policy.head_trim_s + w,
    })
}

/// Cut the record-level analysis window; output has exactly `record_window_s * rate` samples.
pub fn extract_record_segment(
    recording: &AudioRecording,
    events: &[EventAnnotation],
    policy: &SegmentPolicy,
) -> Result<AudioRecording> {
    let window = select_record_window(recording.duration(), events, policy)?;
    let fs = recording.sample_rate as f64;
    let start = (window.start_s * fs).round() as usize;
    let len = (policy.record_window_s * fs).round() as usize;
    Ok(AudioRecording::new(
        format!("{}@rec{:.3}", recording.id, window.start_s),
        slice_padded(&recording.samples, start, len),
        recording.sample_rate,
    ))
}

/// Cut one event into a fixed-length segment.
///
/// The event is placed at the start and the tail zero-padded; events longer
/// than the segment are centre-cropped.
pub fn extract_event_segment(recording: &AudioRecording, event: &EventAnnotation, policy: &SegmentPolicy) -> AudioRecording {
    let fs = recording.sample_rate as f64;
    let target = (policy.event_length_s * fs).round() as usize;
    let a = ((event.start_ms / 1000.0 * fs).round() as usize).min(recording.len());
    let b = ((event.end_ms / 1000.0 * fs).round() as usize).clamp(a, recording.len());
    let len = b - a;
    let samples = if len > target {
        let off = (len - target) / 2;
        recording.samples[a + off..a + off + target].to_vec()
    } else {
        slice_padded(&recording.samples[..b], a, target)
    };
    AudioRecording::new(
        format!("{}@ev{:.0}-{:.0}", recording.id, event.start_ms, event.end_ms),
        samples,
        recording.sample_rate,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::EventLabel;

    fn rec(secs: f64, fs: u32) -> AudioRecording {
        let n = (secs * fs as f64).round() as usize;
        AudioRecording::new("r", (0..n).map(|i| i as f64).collect(), fs)
    }

    fn ev(a: f64, b: f64) -> EventAnnotation {
        EventAnnotation::new(a, b, EventLabel::Normal).unwrap()
    }

    #[test]
    fn short_recording_drops_head() {
        let p = SegmentPolicy::default();
        let w = select_record_window(9.216, &[], &p).unwrap();
        assert_eq!((w.start_s, w.end_s), (1.0, 9.216));
        let r = rec(9.216, 4000);
        let seg = extract_record_segment(&r, &[], &p).unwrap();
        assert_eq!(seg.len(), 32864);
        assert_eq!(seg.samples[0], 4000.0);
        assert_eq!(*seg.samples.last().unwrap(), 36863.0);
    }

    #[test]
    fn long_recording_majority_and_ties() {
        let p = SegmentPolicy::default();
        let lead3 = [ev(500.0, 1500.0), ev(2000.0, 3000.0), ev(4000.0, 5000.0), ev(12000.0, 13000.0)];
        let w = select_record_window(15.216, &lead3, &p).unwrap();
        assert_eq!(w.start_s, 0.0);
        let tie = [ev(500.0, 1500.0), ev(2000.0, 3000.0), ev(12000.0, 13000.0), ev(14000.0, 15000.0)];
        assert_eq!(select_record_window(15.216, &tie, &p).unwrap().start_s, 0.0);
        let trail = [ev(500.0, 1500.0), ev(12000.0, 13000.0), ev(14000.0, 15000.0)];
        let w = select_record_window(15.216, &trail, &p).unwrap();
        assert!((w.start_s - 7.0).abs() < 1e-9 && (w.end_s - 15.216).abs() < 1e-9);
    }

    #[test]
    fn too_short_is_an_error() {
        let p = SegmentPolicy::default();
        assert!(matches!(select_record_window(9.0, &[], &p), Err(Error::TooShort { .. })));
        assert!(select_record_window(9.2155, &[], &p).is_ok());
    }

    #[test]
    fn other_durations_use_leading_window() {
        let p = SegmentPolicy::default();
        let w = select_record_window(12.0, &[ev(11000.0, 11900.0)], &p).unwrap();
        assert_eq!(w.start_s, 1.0);
    }

    #[test]
    fn short_event_is_tail_padded() {
        let p = SegmentPolicy::default();
        let r = rec(5.0, 4000);
        let s = extract_event_segment(&r, &ev(1000.0, 2200.0), &p);
        assert_eq!(s.len(), 12000);
        assert_eq!(s.samples[0], 4000.0);
        assert_eq!(s.samples[4799], 8799.0);
        assert!(s.samples[4800..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn exact_event_fills_segment() {
        let p = SegmentPolicy::default();
        let r = rec(5.0, 4000);
        let s = extract_event_segment(&r, &ev(1000.0, 4000.0), &p);
        assert_eq!(s.samples, (4000..16000).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn long_event_is_center_cropped() {
        let p = SegmentPolicy::default();
        let r = rec(6.0, 4000);
        let s = extract_event_segment(&r, &ev(1000.0, 5000.0), &p);
        assert_eq!(s.len(), 12000);
        assert_eq!(s.samples[0], 6000.0);
        assert_eq!(*s.samples.last().unwrap(), 17999.0);
    }

    proptest::proptest! {
        #[test]
        fn event_segment_length_is_fixed(a in 0.0f64..5000.0, len in 1.0f64..6000.0) {
            let p = SegmentPolicy::default();
            let r = rec(6.0, 4000);
            let s = extract_event_segment(&r, &ev(a, a + len), &p);
            proptest::prop_assert_eq!(s.len(), p.event_samples());
        }
    }
}
