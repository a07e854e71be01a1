use crate::autodiff::{Graph, ParamId, ParamStore, Rng, Scalar, Tensor, Var};
use crate::error::{Error, Result};

use super::config::{ModelConfig, NormOrder};

const INIT_DOMAIN: u64 = 0x696e6974;
const CLASSIFIER_DROPOUT: u64 = 1;
const ENCODER_DROPOUT_BASE: u64 = 100;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Bn {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct InvertedResidual {
    expand: Option<(ParamId, Bn)>,
    depthwise: ParamId,
    dw_bn: Bn,
    project: ParamId,
    project_bn: Bn,
    stride: usize,
    residual: bool,
}

#[derive(Debug, Clone)]
struct Encoder {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    ln1: (ParamId, ParamId),
    ff1: Dense,
    ff2: Dense,
    ln2: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
struct Layout {
    stem: ParamId,
    stem_bn: Bn,
    blocks: Vec<InvertedResidual>,
    head: ParamId,
    head_bn: Bn,
    token_proj: Dense,
    pos: ParamId,
    encoders: Vec<Encoder>,
    hidden: Vec<Dense>,
    out: Dense,
}

/// CNN feature extractor, transformer encoder and MLP head over one parameter store.
#[derive(Debug, Clone)]
pub struct Model<T = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    layout: Layout,
}

/// Nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub features: Var,
    pub tokens: Var,
    pub embedding: Var,
    pub attention: Vec<Var>,
    pub logits: Var,
    pub probs: Var,
}

/// Encoder output: per-token states, their mean, and each block's attention weights.
#[derive(Debug, Clone)]
pub struct Emphasized {
    pub tokens: Var,
    pub pooled: Var,
    pub attention: Vec<Var>,
}

struct Builder {
    store: ParamStore<f32>,
    seed: u64,
}

impl Builder {
    fn he(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let mut rng = Rng::keyed(self.seed, &[INIT_DOMAIN, self.store.len() as u64]);
        let limit = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.range(-limit, limit) as f32).collect();
        self.store.add(name, Tensor { shape: shape.to_vec(), data, requires_grad: true }, true)
    }

    fn constant(&mut self, name: String, shape: &[usize], v: f32, trainable: bool) -> ParamId {
        self.store.add(name, Tensor::filled(shape, v), trainable)
    }

    fn bn(&mut self, name: &str, c: usize) -> Bn {
        Bn {
            gamma: self.constant(format!("{name}.gamma"), &[c], 1.0, true),
            beta: self.constant(format!("{name}.beta"), &[c], 0.0, true),
            mean: self.constant(format!("{name}.running_mean"), &[c], 0.0, false),
            var: self.constant(format!("{name}.running_var"), &[c], 1.0, false),
        }
    }

    fn dense(&mut self, name: &str, i: usize, o: usize) -> Dense {
        Dense {
            w: self.he(format!("{name}.w"), &[i, o], i),
            b: self.constant(format!("{name}.b"), &[o], 0.0, true),
        }
    }

    fn ln(&mut self, name: &str, d: usize) -> (ParamId, ParamId) {
        (
            self.constant(format!("{name}.gamma"), &[d], 1.0, true),
            self.constant(format!("{name}.beta"), &[d], 0.0, true),
        )
    }
}

/// Allocate and initialise every parameter; the same `(config, seed)` always gives the same weights.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model<f32>> {
    config.validate()?;
    let mut b = Builder { store: ParamStore::new(), seed };
    let cin0 = config.input_channels;
    let stem_c = config.stem_channels();
    let stem = b.he("stem.conv".into(), &[3, 3, cin0, stem_c], 9 * cin0);
    let stem_bn = b.bn("stem.bn", stem_c);
    let mut blocks = Vec::new();
    let mut cin = stem_c;
    for (si, st) in config.stage_spec.iter().enumerate() {
        let cout = config.channels(st.c);
        for r in 0..st.n {
            let name = format!("stage{si}.block{r}");
            let hidden = cin * st.t;
            let expand = (st.t != 1).then(|| {
                let w = b.he(format!("{name}.expand"), &[1, 1, cin, hidden], cin);
                (w, b.bn(&format!("{name}.expand_bn"), hidden))
            });
            let depthwise = b.he(format!("{name}.depthwise"), &[3, 3, hidden], 9);
            let dw_bn = b.bn(&format!("{name}.depthwise_bn"), hidden);
            let project = b.he(format!("{name}.project"), &[1, 1, hidden, cout], hidden);
            let project_bn = b.bn(&format!("{name}.project_bn"), cout);
            let stride = if r == 0 { st.s } else { 1 };
            blocks.push(InvertedResidual {
                expand,
                depthwise,
                dw_bn,
                project,
                project_bn,
                stride,
                residual: stride == 1 && cin == cout,
            });
            cin = cout;
        }
    }
    let d = config.embed_dim;
    let head = b.he("head.conv".into(), &[1, 1, cin, d], cin);
    let head_bn = b.bn("head.bn", d);
    let token_proj = b.dense("tokens.proj", d, d);
    let pos = b.constant("tokens.position".into(), &[config.tokens(), d], 0.0, true);
    let encoders = (0..config.n_transformer_blocks)
        .map(|i| {
            let n = format!("encoder{i}");
            Encoder {
                q: b.dense(&format!("{n}.q"), d, d),
                k: b.dense(&format!("{n}.k"), d, d),
                v: b.dense(&format!("{n}.v"), d, d),
                o: b.dense(&format!("{n}.o"), d, d),
                ln1: b.ln(&format!("{n}.ln1"), d),
                ff1: b.dense(&format!("{n}.ff1"), d, config.ffn_dim),
                ff2: b.dense(&format!("{n}.ff2"), config.ffn_dim, d),
                ln2: b.ln(&format!("{n}.ln2"), d),
            }
        })
        .collect();
    let mut prev = d;
    let mut hidden = Vec::new();
    for (i, &m) in config.mlp_dims.iter().enumerate() {
        hidden.push(b.dense(&format!("mlp{i}"), prev, m));
        prev = m;
    }
    let out = b.dense("classifier", prev, config.n_classes);
    Ok(Model {
        config: config.clone(),
        params: b.store,
        layout: Layout {
            stem,
            stem_bn,
            blocks,
            head,
            head_bn,
            token_proj,
            pos,
            encoders,
            hidden,
            out,
        },
    })
}

impl<T: Scalar> Model<T> {
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.total_count()
    }

    /// The same architecture over another store with identical names and shapes.
    pub fn with_params(&self, params: ParamStore<T>) -> Result<Model<T>> {
        let same = params.len() == self.params.len()
            && (0..params.len()).all(|i| params.name(i) == self.params.name(i) && params.get(i).shape == self.params.get(i).shape);
        if !same {
            return Err(Error::ShapeMismatch("parameter store does not match the model layout".into()));
        }
        Ok(Model { config: self.config.clone(), params, layout: self.layout.clone() })
    }

    #[cfg(test)]
    pub(crate) fn blocks(&self) -> &[InvertedResidual] {
        &self.layout.blocks
    }

    fn bn(&self, g: &mut Graph<T>, x: Var, bn: Bn) -> Result<Var> {
        g.batch_norm(&self.params, x, bn.gamma, bn.beta, bn.mean, bn.var)
    }

    fn dense(&self, g: &mut Graph<T>, x: Var, d: Dense) -> Result<Var> {
        let w = g.param(&self.params, d.w);
        let b = g.param(&self.params, d.b);
        g.linear(x, w, Some(b))
    }

    fn ln(&self, g: &mut Graph<T>, x: Var, (gamma, beta): (ParamId, ParamId)) -> Result<Var> {
        let gv = g.param(&self.params, gamma);
        let bv = g.param(&self.params, beta);
        g.layer_norm(x, gv, bv)
    }

    pub(crate) fn inverted_residual(&self, g: &mut Graph<T>, x: Var, blk: &InvertedResidual) -> Result<Var> {
        let mut h = x;
        if let Some((w, bn)) = blk.expand {
            let wv = g.param(&self.params, w);
            h = g.conv2d(h, wv, 1)?;
            h = self.bn(g, h, bn)?;
            h = g.relu6(h);
        }
        let dw = g.param(&self.params, blk.depthwise);
        h = g.depthwise_conv2d(h, dw, blk.stride)?;
        h = self.bn(g, h, blk.dw_bn)?;
        h = g.relu6(h);
        let pw = g.param(&self.params, blk.project);
        h = g.conv2d(h, pw, 1)?;
        h = self.bn(g, h, blk.project_bn)?;
        if blk.residual {
            h = g.add(h, x)?;
        }
        Ok(h)
    }

    /// `[B, H, W, C]` images to the `[B, h, w, embed_dim]` feature map.
    pub fn extract_features(&self, g: &mut Graph<T>, images: Var) -> Result<Var> {
        let c = &self.config;
        let want = [c.input_height, c.input_width, c.input_channels];
        let shape = g.shape(images);
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::ShapeMismatch(format!("model expects [B, {want:?}], got {shape:?}")));
        }
        let l = &self.layout;
        let w = g.param(&self.params, l.stem);
        let mut h = g.conv2d(images, w, 2)?;
        h = self.bn(g, h, l.stem_bn)?;
        h = g.relu6(h);
        for blk in &l.blocks {
            h = self.inverted_residual(g, h, blk)?;
        }
        let w = g.param(&self.params, l.head);
        h = g.conv2d(h, w, 1)?;
        h = self.bn(g, h, l.head_bn)?;
        Ok(g.relu6(h))
    }

    fn attention(&self, g: &mut Graph<T>, x: Var, e: &Encoder) -> Result<(Var, Var)> {
        let s = g.shape(x).to_vec();
        let (b, t, d) = (s[0], s[1], s[2]);
        let heads = self.config.n_heads;
        let dk = d / heads;
        let split = |g: &mut Graph<T>, p: Dense| -> Result<Var> {
            let y = self.dense(g, x, p)?;
            let y = g.reshape(y, &[b, t, heads, dk])?;
            g.permute(y, &[0, 2, 1, 3])
        };
        let q = split(g, e.q)?;
        let k = split(g, e.k)?;
        let v = split(g, e.v)?;
        let scores = g.matmul(q, k, false, true)?;
        let scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
        let attn = g.softmax(scores)?;
        let ctx = g.matmul(attn, v, false, false)?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, t, d])?;
        Ok((self.dense(g, ctx, e.o)?, attn))
    }

    fn encoder(&self, g: &mut Graph<T>, x: Var, e: &Encoder, index: usize) -> Result<(Var, Var)> {
        let p = self.config.dropout_p;
        let layer = ENCODER_DROPOUT_BASE + 2 * index as u64;
        let ffn = |g: &mut Graph<T>, h: Var| -> Result<Var> {
            let f = self.dense(g, h, e.ff1)?;
            let f = g.relu(f);
            self.dense(g, f, e.ff2)
        };
        match self.config.norm_order {
            NormOrder::Post => {
                let (a, attn) = self.attention(g, x, e)?;
                let a = g.dropout(a, p, layer);
                let h = g.add(x, a)?;
                let h = self.ln(g, h, e.ln1)?;
                let f = ffn(g, h)?;
                let f = g.dropout(f, p, layer + 1);
                let y = g.add(h, f)?;
                Ok((self.ln(g, y, e.ln2)?, attn))
            }
            NormOrder::Pre => {
                let n = self.ln(g, x, e.ln1)?;
                let (a, attn) = self.attention(g, n, e)?;
                let a = g.dropout(a, p, layer);
                let h = g.add(x, a)?;
                let n = self.ln(g, h, e.ln2)?;
                let f = ffn(g, n)?;
                let f = g.dropout(f, p, layer + 1);
                Ok((g.add(h, f)?, attn))
            }
        }
    }

    /// Flatten the feature map into tokens, project, add positions and run the encoder stack.
    pub fn emphasize_features(&self, g: &mut Graph<T>, features: Var) -> Result<Emphasized> {
        let s = g.shape(features).to_vec();
        let (t, d) = (self.config.tokens(), self.config.embed_dim);
        if s.len() != 4 || s[1] * s[2] != t || s[3] != d {
            return Err(Error::ShapeMismatch(format!("feature map {s:?} for {t} tokens of width {d}")));
        }
        let l = &self.layout;
        let x = g.reshape(features, &[s[0], t, d])?;
        let x = self.dense(g, x, l.token_proj)?;
        let pos = g.param(&self.params, l.pos);
        let mut x = g.add_broadcast(x, pos)?;
        let mut attention = Vec::with_capacity(l.encoders.len());
        for (i, e) in l.encoders.iter().enumerate() {
            let (y, a) = self.encoder(g, x, e, i)?;
            x = y;
            attention.push(a);
        }
        let pooled = g.mean_pool(x)?;
        Ok(Emphasized { tokens: x, pooled, attention })
    }

    /// `[B, embed_dim]` to `[B, n_classes]` logits.
    pub fn classify(&self, g: &mut Graph<T>, embedding: Var) -> Result<Var> {
        let mut h = embedding;
        for (i, d) in self.layout.hidden.iter().enumerate() {
            h = self.dense(g, h, *d)?;
            h = g.relu(h);
            if i == 0 {
                h = g.dropout(h, self.config.dropout_p, CLASSIFIER_DROPOUT);
            }
        }
        self.dense(g, h, self.layout.out)
    }

    pub fn forward(&self, g: &mut Graph<T>, images: Var) -> Result<Forward> {
        let features = self.extract_features(g, images)?;
        let e = self.emphasize_features(g, features)?;
        let logits = self.classify(g, e.pooled)?;
        let probs = g.softmax(logits)?;
        Ok(Forward {
            features,
            tokens: e.tokens,
            embedding: e.pooled,
            attention: e.attention,
            logits,
            probs,
        })
    }

    fn infer<F>(&self, images: &Tensor<T>, batch: usize, pick: F) -> Result<Vec<Vec<f64>>>
    where
        F: Fn(&Forward) -> Var,
    {
        if images.rank() != 4 {
            return Err(Error::ShapeMismatch(format!("expected a [B, H, W, C] batch, got {:?}", images.shape)));
        }
        let n = images.shape[0];
        let per: usize = images.shape[1..].iter().product();
        let batch = batch.max(1);
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(batch) {
            let end = (start + batch).min(n);
            let mut shape = images.shape.clone();
            shape[0] = end - start;
            let chunk = Tensor::new(shape, images.data[start * per..end * per].to_vec())?;
            let mut g = Graph::new(false, 0, 0);
            let x = g.input(chunk);
            let f = self.forward(&mut g, x)?;
            let v = g.value(pick(&f));
            let w = v.shape[1];
            out.extend(v.to_f64().chunks(w).map(|r| r.to_vec()));
        }
        Ok(out)
    }

    /// Class probabilities in inference mode, `batch` images at a time.
    pub fn predict_proba(&self, images: &Tensor<T>, batch: usize) -> Result<Vec<Vec<f64>>> {
        self.infer(images, batch, |f| f.probs)
    }

    /// Pooled encoder embeddings in inference mode.
    pub fn embed(&self, images: &Tensor<T>, batch: usize) -> Result<Vec<Vec<f64>>> {
        self.infer(images, batch, |f| f.embedding)
    }
}

/// Index of the largest entry in each row.
pub fn argmax_rows(rows: &[Vec<f64>]) -> Vec<usize> {
    rows.iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}
