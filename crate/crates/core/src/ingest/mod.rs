//! Recordings, annotations, manifests, stratified splits and synthetic data.

pub mod annotation;
pub mod labels;
pub mod manifest;
pub mod split;
pub mod synth;
pub mod wav;

pub use annotation::{parse_annotation_str, parse_annotations, Annotations, EventAnnotation};
pub use labels::{AnyLabel, EventLabel, RecordLabel};
pub use manifest::{build_manifest, ClassCounts, DatasetManifest, ManifestEntry, SkippedFile, SplitTag};
pub use split::{stratified_split, stratified_split_by, train_share};
pub use synth::{synthesize_recording, BurstComponent, SyntheticSpec, ToneComponent};
pub use wav::{load_wav, wav_info, write_wav, write_wav_f32, AudioRecording};
