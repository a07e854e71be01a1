//! Run configuration: one TOML document, every key optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pedilung::{DspConfig, ModelConfig, ScalogramConfig, TaskId, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Corpus directory scanned by `ingest`.
    pub root: Option<PathBuf>,
    /// Manifest used when a command gets no `--manifest`.
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub task: Option<TaskId>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub dsp: DspConfig,
    pub scalogram: ScalogramConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

pub const DATASET_KEYS: &[&str] = &["dataset.root", "dataset.manifest"];
pub const DSP_KEYS: &[&str] = &[
    "dsp.filter_order",
    "dsp.low_hz",
    "dsp.high_hz",
    "dsp.record_window_s",
    "dsp.head_trim_s",
    "dsp.event_length_s",
    "dsp.target_rate",
];
pub const SCALOGRAM_KEYS: &[&str] = &[
    "scalogram.gamma_sym",
    "scalogram.time_bandwidth",
    "scalogram.voices_per_octave",
    "scalogram.height",
    "scalogram.width",
    "scalogram.colormap",
];
pub const MODEL_KEYS: &[&str] = &[
    "model.input_height",
    "model.input_width",
    "model.input_channels",
    "model.stem_filters",
    "model.stage_spec",
    "model.width_multiplier",
    "model.embed_dim",
    "model.n_heads",
    "model.ffn_dim",
    "model.n_transformer_blocks",
    "model.mlp_dims",
    "model.dropout_p",
    "model.n_classes",
    "model.norm_order",
    "model.bn_momentum",
];
pub const TRAIN_KEYS: &[&str] = &[
    "train.batch_size",
    "train.learning_rate",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_eps",
    "train.epochs",
    "train.seed",
    "train.task",
    "train.gamma",
    "train.checkpoint_dir",
    "train.class_weighting",
    "train.class_weight_clip",
    "train.lr_decay",
    "train.early_stopping_patience",
    "train.eval_batch_size",
];
pub const EVAL_KEYS: &[&str] = &["eval.task", "eval.gamma"];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| crate::UsageError(format!("{}: {e}", path.display())).into())
    }

    /// `--config` when given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Task precedence: flag, then `eval.task`, then `train.task`.
    pub fn task(&self, flag: Option<TaskId>) -> TaskId {
        flag.or(self.eval.task).unwrap_or(self.train.task)
    }

    /// Gamma precedence: flag, `eval.gamma`, `train.gamma`, task default.
    pub fn gamma(&self, flag: Option<f64>) -> Option<f64> {
        flag.or(self.eval.gamma).or(self.train.gamma)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Help footer naming the config keys a command reads.
pub fn keys_help(sections: &[&[&str]]) -> String {
    let mut out = String::from("Config keys read (flags override the --config file):\n");
    for keys in sections {
        out.push_str("  ");
        out.push_str(&keys.join(", "));
        out.push('\n');
    }
    out
}
