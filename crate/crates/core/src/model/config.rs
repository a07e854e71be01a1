use serde::{Deserialize, Serialize};

use crate::autodiff::same_padding;
use crate::error::{Error, Result};

/// One inverted-residual stage: expansion `t`, output channels `c`, repeats `n`, first stride `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub t: usize,
    pub c: usize,
    pub n: usize,
    pub s: usize,
}

pub const MOBILENET_V2_STAGES: [StageSpec; 7] = [
    StageSpec { t: 1, c: 16, n: 1, s: 1 },
    StageSpec { t: 6, c: 24, n: 2, s: 2 },
    StageSpec { t: 6, c: 32, n: 3, s: 2 },
    StageSpec { t: 6, c: 64, n: 4, s: 2 },
    StageSpec { t: 6, c: 96, n: 3, s: 1 },
    StageSpec { t: 6, c: 160, n: 3, s: 2 },
    StageSpec { t: 6, c: 320, n: 1, s: 1 },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormOrder {
    /// sublayer, residual add, then normalise
    #[default]
    Post,
    /// normalise, sublayer, then residual add
    Pre,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub stem_filters: usize,
    pub stage_spec: Vec<StageSpec>,
    pub width_multiplier: f64,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub n_transformer_blocks: usize,
    pub mlp_dims: Vec<usize>,
    pub dropout_p: f64,
    pub n_classes: usize,
    pub norm_order: NormOrder,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full(7)
    }
}

/// Round a channel count to a multiple of 8, never dropping more than 10%.
pub fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut out = ((v + d / 2.0) / d).floor() as usize * divisor;
    out = out.max(divisor);
    if (out as f64) < 0.9 * v {
        out += divisor;
    }
    out
}

/// Static shapes implied by a configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchitectureSummary {
    pub feature_map: [usize; 3],
    pub tokens: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub transformer_blocks: usize,
    pub mlp_dims: Vec<usize>,
    pub n_classes: usize,
    pub parameters: usize,
}

impl ModelConfig {
    /// Full-size network.
    pub fn full(n_classes: usize) -> Self {
        ModelConfig {
            input_height: 224,
            input_width: 224,
            input_channels: 3,
            stem_filters: 32,
            stage_spec: MOBILENET_V2_STAGES.to_vec(),
            width_multiplier: 1.0,
            embed_dim: 1280,
            n_heads: 8,
            ffn_dim: 2048,
            n_transformer_blocks: 4,
            mlp_dims: vec![512, 256],
            dropout_p: 0.3,
            n_classes,
            norm_order: NormOrder::Post,
            bn_momentum: 0.9,
        }
    }

    /// Reduced network that trains on a single CPU core.
    pub fn toy(n_classes: usize) -> Self {
        ModelConfig {
            input_height: 64,
            input_width: 64,
            width_multiplier: 0.25,
            embed_dim: 64,
            ffn_dim: 128,
            n_transformer_blocks: 1,
            mlp_dims: vec![128, 64],
            ..Self::full(n_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.input_height == 0 || self.input_width == 0 || self.input_channels == 0 {
            return bad("input extents must be positive");
        }
        if self.stem_filters == 0 || self.stage_spec.is_empty() {
            return bad("stem filters and stage list must be non-empty");
        }
        if self.stage_spec.iter().any(|s| s.t == 0 || s.c == 0 || s.n == 0 || s.s == 0) {
            return bad("stage entries must be positive");
        }
        if !(self.width_multiplier > 0.0) {
            return bad("width_multiplier must be positive");
        }
        if self.embed_dim == 0 || self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return bad("embed_dim must be a positive multiple of n_heads");
        }
        if self.ffn_dim == 0 || self.mlp_dims.contains(&0) {
            return bad("hidden sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if self.n_classes < 2 {
            return bad("need at least two classes");
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("bn_momentum must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn channels(&self, c: usize) -> usize {
        make_divisible(c as f64 * self.width_multiplier, 8)
    }

    pub fn stem_channels(&self) -> usize {
        self.channels(self.stem_filters)
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    /// `[h, w, c]` of the extractor output.
    pub fn feature_map_shape(&self) -> [usize; 3] {
        let (mut h, mut w) = (self.input_height, self.input_width);
        let step = |h: &mut usize, w: &mut usize, s: usize| {
            *h = same_padding(*h, 3, s).0;
            *w = same_padding(*w, 3, s).0;
        };
        step(&mut h, &mut w, 2);
        for st in &self.stage_spec {
            step(&mut h, &mut w, st.s);
        }
        [h, w, self.embed_dim]
    }

    pub fn tokens(&self) -> usize {
        let [h, w, _] = self.feature_map_shape();
        h * w
    }

    /// Closed-form parameter count, including batch-norm running statistics.
    pub fn parameter_count(&self) -> usize {
        let bn = |c: usize| 4 * c;
        let stem = self.stem_channels();
        let mut n = 3 * 3 * self.input_channels * stem + bn(stem);
        let mut cin = stem;
        for st in &self.stage_spec {
            let cout = self.channels(st.c);
            for _ in 0..st.n {
                let hidden = cin * st.t;
                if st.t != 1 {
                    n += cin * hidden + bn(hidden);
                }
                n += 9 * hidden + bn(hidden);
                n += hidden * cout + bn(cout);
                cin = cout;
            }
        }
        let d = self.embed_dim;
        n += cin * d + bn(d);
        n += d * d + d + self.tokens() * d;
        let block = 4 * (d * d + d) + 2 * (2 * d) + (d * self.ffn_dim + self.ffn_dim) + (self.ffn_dim * d + d);
        n += self.n_transformer_blocks * block;
        let mut prev = d;
        for &m in self.mlp_dims.iter().chain(std::iter::once(&self.n_classes)) {
            n += prev * m + m;
            prev = m;
        }
        n
    }

    pub fn summary(&self) -> ArchitectureSummary {
        ArchitectureSummary {
            feature_map: self.feature_map_shape(),
            tokens: self.tokens(),
            heads: self.n_heads,
            head_dim: self.head_dim(),
            ffn_dim: self.ffn_dim,
            transformer_blocks: self.n_transformer_blocks,
            mlp_dims: self.mlp_dims.clone(),
            n_classes: self.n_classes,
            parameters: self.parameter_count(),
        }
    }
}
