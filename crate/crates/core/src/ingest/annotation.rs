//! Annotation documents: one record-level label and a list of timed events.
//!
//! Accepted JSON shape (extra keys are ignored):
//!
//! ```json
//! { "record_annotation": "Normal",
//!   "event_annotation": [ { "start": 1180, "end": "2650", "type": "Fine Crackle" } ] }
//! ```
//!
//! `label` and `events` are accepted as aliases; `start`/`end` are milliseconds
//! given either as numbers or numeric strings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::labels::{EventLabel, RecordLabel};
use crate::error::{Error, Result};

/// Tolerance for events that run past the end of their recording.
pub const EVENT_END_TOLERANCE_MS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventAnnotation {
    pub start_ms: f64,
    pub end_ms: f64,
    pub label: EventLabel,
}

impl EventAnnotation {
    pub fn new(start_ms: f64, end_ms: f64, label: EventLabel) -> Result<Self> {
        if !(start_ms >= 0.0) || !(end_ms > start_ms) {
            return Err(Error::NonMonotoneEvent { start_ms, end_ms });
        }
        Ok(EventAnnotation {
            start_ms,
            end_ms,
            label,
        })
    }

    pub fn duration_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }

    pub fn midpoint_s(&self) -> f64 {
        0.5 * (self.start_ms + self.end_ms) / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    pub record: RecordLabel,
    pub events: Vec<EventAnnotation>,
}

impl Annotations {
    /// Check every event against a recording duration (seconds).
    pub fn check_duration(&self, duration_s: f64) -> Result<()> {
        let duration_ms = duration_s * 1000.0;
        for ev in &self.events {
            if ev.end_ms > duration_ms + EVENT_END_TOLERANCE_MS {
                return Err(Error::EventBeyondRecording {
                    end_ms: ev.end_ms,
                    duration_ms,
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let events: Vec<Value> = self
            .events
            .iter()
            .map(|e| {
                serde_json::json!({
                    "start": e.start_ms,
                    "end": e.end_ms,
                    "type": e.label.name(),
                })
            })
            .collect();
        let doc = serde_json::json!({
            "record_annotation": self.record.name(),
            "event_annotation": events,
        });
        serde_json::to_string_pretty(&doc).expect("annotation JSON is always serializable")
    }
}

fn millis(v: &Value, key: &str) -> Result<f64> {
    let x = match v.get(key) {
        Some(Value::Number(n)) => n.as_f64(),
        Some(Value::String(s)) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    x.filter(|x| x.is_finite())
        .ok_or_else(|| Error::MalformedAnnotation(format!("event field {key:?} missing or not numeric")))
}

/// Parse an annotation document held in memory.
pub fn parse_annotation_str(text: &str) -> Result<Annotations> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| Error::MalformedAnnotation(e.to_string()))?;
    let label = doc
        .get("record_annotation")
        .or_else(|| doc.get("label"))
        .and_then(Value::as_str)
        .ok_or_else(|| Error::MalformedAnnotation("missing record label".into()))?;
    let record = RecordLabel::parse(label)?;

    let mut events = Vec::new();
    let list = doc.get("event_annotation").or_else(|| doc.get("events"));
    match list {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            for item in items {
                let start = millis(item, "start")?;
                let end = millis(item, "end")?;
                let ty = item
                    .get("type")
                    .and_then(Value::as_str)
                    .ok_or_else(|| Error::MalformedAnnotation("event without type".into()))?;
                events.push(EventAnnotation::new(start, end, EventLabel::parse(ty)?)?);
            }
        }
        Some(_) => return Err(Error::MalformedAnnotation("event list is not an array".into())),
    }
    events.sort_by(|a, b| a.start_ms.total_cmp(&b.start_ms).then(a.end_ms.total_cmp(&b.end_ms)));
    Ok(Annotations { record, events })
}

/// Parse an annotation file. Events come back sorted by start time.
pub fn parse_annotations(path: &Path) -> Result<Annotations> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotation_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_without_events() {
        let a = parse_annotation_str(r#"{"record_annotation": "Normal", "event_annotation": []}"#)
            .unwrap();
        assert_eq!(a.record, RecordLabel::Normal);
        assert!(a.events.is_empty());
    }

    #[test]
    fn fine_crackle_event() {
        let a = parse_annotation_str(
            r#"{"label": "DAS", "events": [{"start": 1000, "end": 2500, "type": "Fine Crackle"}], "extra": 1}"#,
        )
        .unwrap();
        assert_eq!(a.record, RecordLabel::Das);
        assert_eq!(
            a.events,
            vec![EventAnnotation::new(1000.0, 2500.0, EventLabel::FineCrackle).unwrap()]
        );
    }

    #[test]
    fn string_times_and_sorting() {
        let a = parse_annotation_str(
            r#"{"record_annotation": "CAS", "event_annotation": [
                {"start": "3000", "end": "4000", "type": "Wheeze"},
                {"start": "100", "end": "900", "type": "Normal"}]}"#,
        )
        .unwrap();
        assert_eq!(a.events[0].start_ms, 100.0);
        assert_eq!(a.events[1].label, EventLabel::Wheeze);
    }

    #[test]
    fn rejects_reversed_event() {
        let r = parse_annotation_str(
            r#"{"record_annotation": "Normal", "event_annotation": [{"start": 10, "end": 10, "type": "Normal"}]}"#,
        );
        assert!(matches!(r, Err(Error::NonMonotoneEvent { .. })));
    }

    #[test]
    fn rejects_unknown_label() {
        let r = parse_annotation_str(r#"{"record_annotation": "Bad"}"#);
        assert!(matches!(r, Err(Error::UnknownLabelString(_))));
    }

    #[test]
    fn duration_check_has_one_ms_slack() {
        let a = Annotations {
            record: RecordLabel::Normal,
            events: vec![EventAnnotation::new(0.0, 1000.9, EventLabel::Normal).unwrap()],
        };
        assert!(a.check_duration(1.0).is_ok());
        let b = Annotations {
            record: RecordLabel::Normal,
            events: vec![EventAnnotation::new(0.0, 1001.5, EventLabel::Normal).unwrap()],
        };
        assert!(b.check_duration(1.0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let a = Annotations {
            record: RecordLabel::CasAndDas,
            events: vec![
                EventAnnotation::new(10.0, 20.0, EventLabel::WheezeAndCrackle).unwrap(),
                EventAnnotation::new(30.0, 45.5, EventLabel::Stridor).unwrap(),
            ],
        };
        assert_eq!(parse_annotation_str(&a.to_json()).unwrap(), a);
    }
}
