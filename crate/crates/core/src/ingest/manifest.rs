//! Dataset manifests: paired audio/annotation files with per-level class counts.
//!
//! On disk a manifest is a line-delimited text file. The first line is the
//! header `#pedilung-manifest v1`; every following line is
//! `audio_path<TAB>annotation_path<TAB>record_label<TAB>split`. Event
//! annotations are not duplicated in the file: they are re-read from the
//! annotation documents when the manifest is loaded.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::annotation::{parse_annotations, EventAnnotation};
use super::labels::{EventLabel, RecordLabel};
use super::wav::wav_info;
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "#pedilung-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        })
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(SplitTag::Train),
            "val" | "valid" | "validation" => Ok(SplitTag::Val),
            "test" | "testing" => Ok(SplitTag::Test),
            other => Err(Error::Format(format!("unknown split tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub audio: PathBuf,
    pub annotation: PathBuf,
    pub record_label: RecordLabel,
    pub events: Vec<EventAnnotation>,
}

impl ManifestEntry {
    /// Identity of the recording: the audio file stem.
    pub fn id(&self) -> String {
        self.audio
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub event: [usize; 7],
    pub record: [usize; 5],
}

impl ClassCounts {
    pub fn from_entries(entries: &[ManifestEntry]) -> Self {
        let mut c = ClassCounts::default();
        for e in entries {
            c.record[e.record_label.code()] += 1;
            for ev in &e.events {
                c.event[ev.label.code()] += 1;
            }
        }
        c
    }

    pub fn event_total(&self) -> usize {
        self.event.iter().sum()
    }

    pub fn record_total(&self) -> usize {
        self.record.iter().sum()
    }

    pub fn event_count(&self, label: EventLabel) -> usize {
        self.event[label.code()]
    }

    pub fn record_count(&self, label: RecordLabel) -> usize {
        self.record[label.code()]
    }

    /// Named view, handy for logs and run reports.
    pub fn named(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for l in EventLabel::ALL {
            m.insert(format!("event/{}", l.name()), self.event_count(l));
        }
        for l in RecordLabel::ALL {
            m.insert(format!("record/{}", l.name()), self.record_count(l));
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_counts: ClassCounts,
    pub split: SplitTag,
}

/// A file that could not be paired or parsed while scanning a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

impl DatasetManifest {
    pub fn new(mut entries: Vec<ManifestEntry>, split: SplitTag) -> Self {
        entries.sort_by(|a, b| a.audio.cmp(&b.audio));
        let class_counts = ClassCounts::from_entries(&entries);
        DatasetManifest {
            entries,
            class_counts,
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.audio.display(),
                e.annotation.display(),
                e.record_label.name(),
                self.split
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Parse manifest text; event annotations are reloaded from each annotation file.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
            _ => {
                return Err(Error::MalformedManifest {
                    line: 1,
                    reason: format!("expected header {MANIFEST_HEADER:?}"),
                })
            }
        }
        let mut entries = Vec::new();
        let mut split = None;
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| Error::MalformedManifest {
                line: i + 1,
                reason,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 tab-separated fields, got {}", fields.len())));
            }
            let record_label = RecordLabel::parse(fields[2]).map_err(|e| bad(e.to_string()))?;
            let tag: SplitTag = fields[3].parse().map_err(|e: Error| bad(e.to_string()))?;
            match split {
                None => split = Some(tag),
                Some(s) if s != tag => return Err(bad("mixed split tags".into())),
                _ => {}
            }
            let annotation = PathBuf::from(fields[1]);
            let ann = parse_annotations(&annotation)?;
            if ann.record != record_label {
                return Err(bad(format!(
                    "record label {} disagrees with annotation file ({})",
                    record_label, ann.record
                )));
            }
            entries.push(ManifestEntry {
                audio: PathBuf::from(fields[0]),
                annotation,
                record_label,
                events: ann.events,
            });
        }
        Ok(DatasetManifest::new(entries, split.unwrap_or(SplitTag::Train)))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for item in rd {
        let item = item.map_err(|e| Error::io(dir, e))?;
        let path = item.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn has_ext(p: &Path, ext: &str) -> bool {
    p.extension()
        .map(|e| e.to_string_lossy().eq_ignore_ascii_case(ext))
        .unwrap_or(false)
}

/// Scan `root` recursively for `<stem>.wav` / `<stem>.json` pairs.
///
/// Pairing is by file stem, so audio and annotations may live in sibling directories.
///
/// Unpaired or unparsable files are returned in the skip list rather than
/// failing the whole scan.
pub fn build_manifest(root: &Path, split: SplitTag) -> Result<(DatasetManifest, Vec<SkippedFile>)> {
    let mut files = Vec::new();
    collect_files(root, &mut files)?;
    files.sort();

    let mut audio: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut annot: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut skipped = Vec::new();
    for f in files {
        let table = if has_ext(&f, "wav") {
            &mut audio
        } else if has_ext(&f, "json") {
            &mut annot
        } else {
            continue;
        };
        let key = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(first) = table.get(&key) {
            skipped.push(SkippedFile {
                path: f.clone(),
                reason: format!("duplicate stem (already paired from {})", first.display()),
            });
            continue;
        }
        table.insert(key, f);
    }

    let mut entries = Vec::new();
    for (key, wav) in &audio {
        let Some(json) = annot.get(key) else {
            skipped.push(SkippedFile {
                path: wav.clone(),
                reason: "orphan audio (no annotation)".into(),
            });
            continue;
        };
        let checked = parse_annotations(json).and_then(|ann| {
            let (rate, frames) = wav_info(wav)?;
            ann.check_duration(frames as f64 / rate as f64)?;
            Ok(ann)
        });
        match checked {
            Ok(ann) => entries.push(ManifestEntry {
                audio: wav.clone(),
                annotation: json.clone(),
                record_label: ann.record,
                events: ann.events,
            }),
            Err(e) => skipped.push(SkippedFile {
                path: wav.clone(),
                reason: e.to_string(),
            }),
        }
    }
    for (key, json) in &annot {
        if !audio.contains_key(key) {
            skipped.push(SkippedFile {
                path: json.clone(),
                reason: "orphan annotation (no audio)".into(),
            });
        }
    }
    for s in &skipped {
        log::warn!("skipping {}: {}", s.path.display(), s.reason);
    }
    Ok((DatasetManifest::new(entries, split), skipped))
}
