//! Per-voxel cross-attention expert fusing the previous map state with the
//! current 3-D and 2-D features, plus the frame fusion pipeline built on it.

mod pipeline;

pub use pipeline::{
    fuse_frame, majority_labels, FrameDiagnostics, FrameForward, Model, ModelConfig, Source2d,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::layers::{output_norm, Affine, Norm};
use crate::encoders::AuxHead;
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::scene_map::FeatureBlock;

/// How attention logits turn into source weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    /// `softmax(q·k / sqrt(d))`.
    Softmax,
    /// The unnormalized dot products used directly as weights.
    RawLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub attention: AttentionKind,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            layers: 5,
            hidden: 128,
            heads: 1,
            attention: AttentionKind::Softmax,
        }
    }
}

/// The three inputs of every voxel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Global,
    ThreeD,
    TwoD,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Global, Source::ThreeD, Source::TwoD];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug)]
pub struct ExpertLayer {
    pub q: Affine,
    /// Key weights. A key bias would add the same `q·b` to every logit, which
    /// softmax ignores, so there is none.
    pub k: ParamId,
    pub v: Affine,
    pub attn_norm: Norm,
    pub ffn_in: Affine,
    pub ffn_out: Affine,
    pub ffn_norm: Norm,
}

/// Per-layer source weights, `[N, 3]` each, columns ordered global, 3-D, 2-D.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionTrace {
    pub layers: Vec<Tensor>,
}

impl AttentionTrace {
    /// Mean weight of each source in layer `l`.
    pub fn mean_weights(&self, l: usize) -> [f64; 3] {
        let t = &self.layers[l];
        let mut m = [0.0; 3];
        if t.rows() == 0 {
            return m;
        }
        for i in 0..t.rows() {
            for (k, w) in t.row(i).iter().enumerate() {
                m[k] += w;
            }
        }
        m.map(|v| v / t.rows() as f64)
    }

    /// Largest deviation from the probability simplex over all rows.
    pub fn simplex_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for t in &self.layers {
            for i in 0..t.rows() {
                let r = t.row(i);
                worst = worst.max((r.iter().sum::<f64>() - 1.0).abs());
                for w in r {
                    worst = worst.max(-w);
                }
            }
        }
        worst
    }
}

/// Expert output recorded on a graph.
#[derive(Clone, Debug)]
pub struct ExpertOutput {
    pub features: Var,
    pub logits: Var,
    pub weights: Vec<Var>,
}

pub struct Expert {
    pub layers: Vec<ExpertLayer>,
    pub encodings: [ParamId; 3],
    pub head: AuxHead,
    pub feature_dim: usize,
    pub config: ExpertConfig,
}

impl Expert {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        cfg: &ExpertConfig,
        feature_dim: usize,
        head_hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.layers == 0 {
            return Err(Error::Config("the expert needs at least one layer".into()));
        }
        if cfg.heads == 0 || feature_dim % cfg.heads != 0 {
            return Err(Error::Config(format!(
                "feature size {feature_dim} is not divisible into {} heads",
                cfg.heads
            )));
        }
        let d = feature_dim;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("expert.layer{l}");
            layers.push(ExpertLayer {
                q: Affine::with_gain(store, &format!("{p}.q"), d, d, 1.0, rng)?,
                k: store.add_weight(format!("{p}.k.w"), d, d, 1.0, rng)?,
                v: Affine::with_gain(store, &format!("{p}.v"), d, d, 1.0, rng)?,
                attn_norm: Norm::new(store, &format!("{p}.attn_norm"), d)?,
                ffn_in: Affine::new(store, &format!("{p}.ffn_in"), d, cfg.hidden, rng)?,
                ffn_out: Affine::with_gain(store, &format!("{p}.ffn_out"), cfg.hidden, d, 1.0, rng)?,
                ffn_norm: Norm::new(store, &format!("{p}.ffn_norm"), d)?,
            });
        }
        let encodings = [
            store.add_normal("expert.enc_global", &[d], 0.5, rng)?,
            store.add_normal("expert.enc_3d", &[d], 0.5, rng)?,
            store.add_normal("expert.enc_2d", &[d], 0.5, rng)?,
        ];
        Ok(Self {
            layers,
            encodings,
            head: AuxHead::new(store, "expert.head", d, head_hidden, classes, rng)?,
            feature_dim: d,
            config: cfg.clone(),
        })
    }

    /// `x + e_source` row-wise.
    pub fn encode_source(&self, g: &mut Graph, store: &ParamStore, x: Var, source: Source) -> Result<Var> {
        let e = g.param(store, self.encodings[source.index()]);
        g.add_row(x, e)
    }

    /// One cross-attention layer: the query attends over the three encoded
    /// source tokens. Returns the new query and the `[N, 3]` weights.
    pub fn layer_forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        l: usize,
        query: Var,
        tokens: [Var; 3],
    ) -> Result<(Var, Var)> {
        let layer = &self.layers[l];
        let q = layer.q.forward(g, store, query)?;
        let kw = g.param(store, layer.k);
        let mut ks = [q; 3];
        let mut vs = [q; 3];
        for s in 0..3 {
            ks[s] = g.linear(tokens[s], kw, None)?;
            vs[s] = layer.v.forward(g, store, tokens[s])?;
        }
        let heads = self.config.heads;
        let dh = self.feature_dim / heads;
        let mut fused_heads = Vec::with_capacity(heads);
        let mut weight_heads = Vec::with_capacity(heads);
        for h in 0..heads {
            let part = |g: &mut Graph, v: Var| -> Result<Var> {
                if heads == 1 {
                    Ok(v)
                } else {
                    g.slice_cols(v, h * dh, dh)
                }
            };
            let qh = part(g, q)?;
            let mut logits = Vec::with_capacity(3);
            let mut values = Vec::with_capacity(3);
            for s in 0..3 {
                let kh = part(g, ks[s])?;
                logits.push(g.row_dot(qh, kh)?);
                values.push(part(g, vs[s])?);
            }
            let logits = g.concat_cols(&logits)?;
            let w = match self.config.attention {
                AttentionKind::Softmax => {
                    let scaled = g.scale(logits, 1.0 / (dh as f64).sqrt());
                    g.softmax_rows(scaled)?
                }
                AttentionKind::RawLinear => logits,
            };
            let mut terms = Vec::with_capacity(3);
            for (s, v) in values.into_iter().enumerate() {
                terms.push((g.scale_rows(v, w, s)?, 1.0));
            }
            fused_heads.push(g.weighted_sum(&terms)?);
            weight_heads.push((w, 1.0 / heads as f64));
        }
        let fused = if heads == 1 { fused_heads[0] } else { g.concat_cols(&fused_heads)? };
        let weights = if heads == 1 { weight_heads[0].0 } else { g.weighted_sum(&weight_heads)? };
        let h = g.add(query, fused)?;
        let h = layer.attn_norm.forward(g, store, h)?;
        let f = layer.ffn_in.forward(g, store, h)?;
        let f = g.relu(f);
        let f = layer.ffn_out.forward(g, store, f)?;
        let out = g.add(h, f)?;
        let out = layer.ffn_norm.forward(g, store, out)?;
        if !g.value(out).is_finite() {
            return Err(Error::Numeric(format!("non-finite activations in expert layer {l}")));
        }
        Ok((out, weights))
    }

    /// Full expert over `[N, D]` previous, 3-D and 2-D features.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, prev: Var, x3: Var, x2: Var) -> Result<ExpertOutput> {
        for v in [prev, x3, x2] {
            if g.value(v).cols() != self.feature_dim {
                return Err(Error::Shape(format!(
                    "expert expects {} features, got {}",
                    self.feature_dim,
                    g.value(v).cols()
                )));
            }
        }
        let n = g.value(prev).rows();
        if g.value(x3).rows() != n || g.value(x2).rows() != n {
            return Err(Error::Misaligned("expert inputs have different row counts".into()));
        }
        let tokens = [
            self.encode_source(g, store, prev, Source::Global)?,
            self.encode_source(g, store, x3, Source::ThreeD)?,
            self.encode_source(g, store, x2, Source::TwoD)?,
        ];
        let mut query = tokens[0];
        let mut weights = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let (q, w) = self.layer_forward(g, store, l, query, tokens)?;
            query = q;
            weights.push(w);
        }
        let features = output_norm(g, query)?;
        let logits = self.head.forward(g, store, features)?;
        Ok(ExpertOutput { features, logits, weights })
    }
}

/// `x + e_source` for a single vector.
pub fn source_encode(x: &[f64], source: Source, expert: &Expert, store: &ParamStore) -> Result<Vec<f64>> {
    let e = store.value(expert.encodings[source.index()]).data();
    if x.len() != e.len() {
        return Err(Error::Shape(format!("{} features, encoding has {}", x.len(), e.len())));
    }
    Ok(x.iter().zip(e).map(|(a, b)| a + b).collect())
}

/// Applies layer `l` to a single query against already-encoded tokens.
pub fn cross_attention_layer(
    query: &[f64],
    tokens: [&[f64]; 3],
    l: usize,
    expert: &Expert,
    store: &ParamStore,
) -> Result<(Vec<f64>, [f64; 3])> {
    if l >= expert.layers.len() {
        return Err(Error::Config(format!("expert has no layer {l}")));
    }
    let d = expert.feature_dim;
    let row = |v: &[f64]| -> Result<Tensor> {
        if v.len() != d {
            return Err(Error::Shape(format!("expected {d} features, got {}", v.len())));
        }
        Tensor::matrix(1, d, v.to_vec())
    };
    let mut g = Graph::new();
    let q = g.constant(row(query)?);
    let t = [g.constant(row(tokens[0])?), g.constant(row(tokens[1])?), g.constant(row(tokens[2])?)];
    let (out, w) = expert.layer_forward(&mut g, store, l, q, t)?;
    let wv = g.value(w).row(0);
    Ok((g.value(out).row(0).to_vec(), [wv[0], wv[1], wv[2]]))
}

/// Runs the expert on three aligned blocks. Returns the new block (counts
/// and novelty copied from `prev`), the auxiliary logits and the trace.
pub fn expert_forward(
    prev: &FeatureBlock,
    f3: &FeatureBlock,
    f2: &FeatureBlock,
    expert: &Expert,
    store: &ParamStore,
) -> Result<(FeatureBlock, Tensor, AttentionTrace)> {
    if prev.keys != f3.keys || prev.keys != f2.keys {
        return Err(Error::Misaligned("expert blocks do not share the same key order".into()));
    }
    let d = expert.feature_dim;
    if prev.is_empty() {
        let trace = AttentionTrace {
            layers: vec![Tensor::zeros(&[0, 3]); expert.layers.len()],
        };
        let mut out = prev.clone();
        out.features = Tensor::zeros(&[0, d]);
        return Ok((out, Tensor::zeros(&[0, expert.head.classes]), trace));
    }
    let mut g = Graph::new();
    let p = g.constant(prev.features.clone());
    let x3 = g.constant(f3.features.clone());
    let x2 = g.constant(f2.features.clone());
    let out = expert.forward(&mut g, store, p, x3, x2)?;
    let trace = AttentionTrace {
        layers: out.weights.iter().map(|w| g.value(*w).clone()).collect(),
    };
    let block = FeatureBlock {
        keys: prev.keys.clone(),
        features: g.value(out.features).clone(),
        counts: prev.counts.clone(),
        novel: prev.novel.clone(),
    };
    Ok((block, g.value(out.logits).clone(), trace))
}

#[cfg(test)]
mod tests;
