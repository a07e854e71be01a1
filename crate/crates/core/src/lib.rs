//! Pediatric lung-sound classification: audio ingestion, band-pass and resampling,
//! Morse-wavelet scalograms, a CNN-Transformer classifier trained with focal loss,
//! and challenge scoring.

pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod objective;
pub mod scalogram;
pub mod trainer;

pub use autodiff::{Graph, ParamStore, Rng, Tensor};
pub use dsp::{preprocess, DspConfig, SegmentPolicy};
pub use error::{Error, Result};
pub use eval::{challenge_scores, confusion, ConfusionMatrix, ReportFormat, ScoreReport, TaskId};
pub use ingest::{
    build_manifest, AnyLabel, AudioRecording, DatasetManifest, EventAnnotation, EventLabel, ManifestEntry, RecordLabel,
    SplitTag, SyntheticSpec,
};
pub use model::{build_model, Model, ModelConfig};
pub use objective::FocalParams;
pub use scalogram::{scalogram_image, ScalogramCache, ScalogramConfig, ScalogramImage};
pub use trainer::{Checkpoint, Dataset, FeatureSpec, TrainConfig, TrainHistory, Trainer};
