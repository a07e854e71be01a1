//! Convolutional feature extractor, transformer encoder and MLP classifier.

pub mod config;
pub mod embeddings;
pub mod network;

pub use config::{make_divisible, ArchitectureSummary, ModelConfig, NormOrder, StageSpec, MOBILENET_V2_STAGES};
pub use embeddings::{embeddings_to_csv, stack_images};
pub use network::{argmax_rows, build_model, Emphasized, Forward, Model};
