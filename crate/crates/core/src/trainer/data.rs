use serde::Serialize;

use crate::autodiff::Tensor;
use crate::dsp::{extract_event_segment, extract_record_segment, preprocess, select_record_window, DspConfig};
use crate::error::{Error, Result};
use crate::eval::{map_labels, Level, TaskId};
use crate::ingest::{load_wav, synthesize_recording, wav_info, AnyLabel, DatasetManifest, EventLabel, ManifestEntry, SyntheticSpec};
use crate::scalogram::{content_key, scalogram_image, ScalogramCache, ScalogramConfig, ScalogramImage};

/// Everything that determines a scalogram's pixels.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FeatureSpec {
    pub dsp: DspConfig,
    pub scalogram: ScalogramConfig,
}

impl FeatureSpec {
    pub fn params_json(&self) -> String {
        serde_json::to_string(self).expect("feature spec serializes")
    }
}

/// One classifiable segment of a manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRef {
    pub id: String,
    pub entry: usize,
    pub event: Option<usize>,
    pub window: (f64, f64),
    pub label: AnyLabel,
}

impl SegmentRef {
    pub fn cache_key(&self, spec: &FeatureSpec) -> String {
        content_key(&self.id, self.window, &spec.params_json())
    }
}

/// Segments of one entry: every event, or the single record window.
///
/// Recordings too short for a record window yield nothing.
pub fn entry_segments(entry: &ManifestEntry, index: usize, level: Level, dsp: &DspConfig) -> Result<Vec<SegmentRef>> {
    let id = entry.id();
    match level {
        Level::Event => Ok(entry
            .events
            .iter()
            .enumerate()
            .map(|(k, e)| SegmentRef {
                id: format!("{id}#e{k}"),
                entry: index,
                event: Some(k),
                window: (e.start_ms / 1000.0, e.end_ms / 1000.0),
                label: AnyLabel::Event(e.label),
            })
            .collect()),
        Level::Record => {
            let (rate, frames) = wav_info(&entry.audio)?;
            let duration = frames as f64 / rate as f64;
            match select_record_window(duration, &entry.events, &dsp.policy) {
                Ok(w) => Ok(vec![SegmentRef {
                    id: format!("{id}#r"),
                    entry: index,
                    event: None,
                    window: (w.start_s, w.end_s),
                    label: AnyLabel::Record(entry.record_label),
                }]),
                Err(Error::TooShort { .. }) => {
                    log::warn!("{}: too short for a record window, skipped", entry.audio.display());
                    Ok(Vec::new())
                }
                Err(e) => Err(e),
            }
        }
    }
}

pub fn manifest_segments(manifest: &DatasetManifest, level: Level, dsp: &DspConfig) -> Result<Vec<SegmentRef>> {
    let mut out = Vec::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        out.extend(entry_segments(e, i, level, dsp)?);
    }
    Ok(out)
}

/// Preprocess one recording and render the scalograms of the given segments.
pub fn render_entry(entry: &ManifestEntry, segments: &[SegmentRef], spec: &FeatureSpec) -> Result<Vec<ScalogramImage>> {
    if segments.is_empty() {
        return Ok(Vec::new());
    }
    let rec = preprocess(&load_wav(&entry.audio)?, &spec.dsp)?;
    let fs = rec.sample_rate as f64;
    segments
        .iter()
        .map(|s| {
            let seg = match s.event {
                Some(k) => extract_event_segment(&rec, &entry.events[k], &spec.dsp.policy),
                None => extract_record_segment(&rec, &entry.events, &spec.dsp.policy)?,
            };
            scalogram_image(&seg.samples, fs, &spec.scalogram)
        })
        .collect()
}

/// Images for one entry, read from `cache` where present and computed (then stored) otherwise.
pub fn cached_entry_images(
    entry: &ManifestEntry,
    segments: &[SegmentRef],
    spec: &FeatureSpec,
    cache: &ScalogramCache,
) -> Result<Vec<ScalogramImage>> {
    let keys: Vec<String> = segments.iter().map(|s| s.cache_key(spec)).collect();
    if keys.iter().all(|k| cache.contains(k)) {
        return keys.iter().map(|k| cache.load(k)).collect();
    }
    log::warn!("{}: scalogram cache miss, computing", entry.audio.display());
    let images = render_entry(entry, segments, spec)?;
    for (k, img) in keys.iter().zip(&images) {
        cache.store(k, img)?;
    }
    Ok(images)
}

/// Labelled images held contiguously as `[N, H, W, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub image_shape: [usize; 3],
    pub pixels: Vec<f32>,
}

impl Dataset {
    pub fn from_images(ids: Vec<String>, labels: Vec<usize>, images: &[ScalogramImage]) -> Result<Self> {
        if ids.len() != labels.len() || ids.len() != images.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids, {} labels, {} images",
                ids.len(),
                labels.len(),
                images.len()
            )));
        }
        let shape = images.first().map_or([0, 0, 0], |im| [im.height, im.width, im.channels]);
        let mut pixels = Vec::with_capacity(images.len() * shape.iter().product::<usize>());
        for im in images {
            if [im.height, im.width, im.channels] != shape {
                return Err(Error::ShapeMismatch("images of different sizes in one dataset".into()));
            }
            pixels.extend_from_slice(&im.pixels);
        }
        Ok(Dataset { ids, labels, image_shape: shape, pixels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn stride(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let s = self.stride();
        &self.pixels[i * s..(i + 1) * s]
    }

    /// `[len(indices), H, W, C]` batch in the given order.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let mut data = Vec::with_capacity(indices.len() * self.stride());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let [h, w, c] = self.image_shape;
        Tensor { shape: vec![indices.len(), h, w, c], data, requires_grad: false }
    }

    pub fn all(&self) -> Tensor<f32> {
        let [h, w, c] = self.image_shape;
        Tensor { shape: vec![self.len(), h, w, c], data: self.pixels.clone(), requires_grad: false }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            image_shape: self.image_shape,
            pixels: self.batch(indices).data,
        }
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut c = vec![0; classes];
        for &l in &self.labels {
            if l < classes {
                c[l] += 1;
            }
        }
        c
    }
}

/// Load every segment of `manifest` for `task`, filling the cache as needed.
pub fn load_dataset(manifest: &DatasetManifest, task: TaskId, spec: &FeatureSpec, cache: &ScalogramCache) -> Result<Dataset> {
    if manifest.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let segments = manifest_segments(manifest, task.level(), &spec.dsp)?;
    let mut ids = Vec::with_capacity(segments.len());
    let mut labels = Vec::with_capacity(segments.len());
    let mut images = Vec::with_capacity(segments.len());
    let mut start = 0;
    while start < segments.len() {
        let entry = segments[start].entry;
        let end = start + segments[start..].iter().take_while(|s| s.entry == entry).count();
        let group = &segments[start..end];
        images.extend(cached_entry_images(&manifest.entries[entry], group, spec, cache)?);
        for s in group {
            ids.push(s.id.clone());
            labels.push(map_labels(task, s.label)?);
        }
        start = end;
    }
    if images.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Dataset::from_images(ids, labels, &images)
}

/// Seconds of audio generated around each synthetic event.
pub const SYNTH_EVENT_RECORDING_S: f64 = 4.0;

/// One synthetic event per label, rendered through the full preprocessing and scalogram path.
///
/// Sample `i` is generated from seed `seed * 1_000_003 + i`.
pub fn synthetic_event_dataset(labels: &[EventLabel], task: TaskId, seed: u64, spec: &FeatureSpec) -> Result<Dataset> {
    let mut ids = Vec::with_capacity(labels.len());
    let mut classes = Vec::with_capacity(labels.len());
    let mut images = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        let s = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let (mut rec, _, events) = synthesize_recording(&SyntheticSpec::preset_event(label, SYNTH_EVENT_RECORDING_S, s));
        rec.id = format!("synth{seed}_{i:05}");
        let event = events
            .iter()
            .find(|e| e.label == label)
            .ok_or_else(|| Error::MalformedAnnotation(format!("synthetic {} recording without its event", label.name())))?;
        let pre = preprocess(&rec, &spec.dsp)?;
        let seg = extract_event_segment(&pre, event, &spec.dsp.policy);
        images.push(scalogram_image(&seg.samples, pre.sample_rate as f64, &spec.scalogram)?);
        ids.push(rec.id);
        classes.push(map_labels(task, AnyLabel::Event(label))?);
    }
    Dataset::from_images(ids, classes, &images)
}
