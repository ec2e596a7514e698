use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::frame::{Frame, INPUT_CHANNELS};
use super::head::AuxHead;
use super::layers::{norm_relu, output_norm, Affine, ConvLayer, Norm};
use super::EncoderOutput;
use crate::error::{Error, Result};
use crate::numerics::{ConvPlan, Graph, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Encoder2dConfig {
    /// Channels of the full-resolution convolutions.
    pub width: usize,
    /// Channels of the half-resolution context branch.
    pub context_width: usize,
}

impl Default for Encoder2dConfig {
    fn default() -> Self {
        Self {
            width: 16,
            context_width: 32,
        }
    }
}

struct ImagePlans {
    size: (usize, usize),
    full: Arc<ConvPlan>,
    down: Arc<ConvPlan>,
    half: Arc<ConvPlan>,
    up: Arc<ConvPlan>,
}

/// Reference 2-D network: four 3×3 convolutions with normalization and
/// ReLU, one stride-2 / up-2 context pair with a skip connection, and a 1×1
/// projection to the shared feature size.
pub struct Encoder2d {
    conv1: ConvLayer,
    norm1: Norm,
    conv2: ConvLayer,
    norm2: Norm,
    down: ConvLayer,
    norm_down: Norm,
    conv3: ConvLayer,
    norm3: Norm,
    up: ConvLayer,
    conv4: ConvLayer,
    norm4: Norm,
    proj: Affine,
    pub head: AuxHead,
    pub feature_dim: usize,
    plans: Mutex<Option<Arc<ImagePlans>>>,
}

impl Encoder2d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        cfg: &Encoder2dConfig,
        feature_dim: usize,
        head_hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (c, cc) = (cfg.width, cfg.context_width);
        Ok(Self {
            conv1: ConvLayer::new(store, "enc2d.conv1", 9, INPUT_CHANNELS, c, rng)?,
            norm1: Norm::new(store, "enc2d.norm1", c)?,
            conv2: ConvLayer::new(store, "enc2d.conv2", 9, c, c, rng)?,
            norm2: Norm::new(store, "enc2d.norm2", c)?,
            down: ConvLayer::new(store, "enc2d.down", 9, c, cc, rng)?,
            norm_down: Norm::new(store, "enc2d.norm_down", cc)?,
            conv3: ConvLayer::new(store, "enc2d.conv3", 9, cc, cc, rng)?,
            norm3: Norm::new(store, "enc2d.norm3", cc)?,
            up: ConvLayer::new(store, "enc2d.up", 4, cc, c, rng)?,
            conv4: ConvLayer::new(store, "enc2d.conv4", 9, c, c, rng)?,
            norm4: Norm::new(store, "enc2d.norm4", c)?,
            proj: Affine::with_gain(store, "enc2d.proj", c, feature_dim, 1.0, rng)?,
            head: AuxHead::new(store, "enc2d.head", feature_dim, head_hidden, classes, rng)?,
            feature_dim,
            plans: Mutex::new(None),
        })
    }

    fn plans(&self, h: usize, w: usize) -> Arc<ImagePlans> {
        let mut cached = self.plans.lock().expect("plan cache poisoned");
        if let Some(p) = cached.as_ref() {
            if p.size == (h, w) {
                return p.clone();
            }
        }
        let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
        let p = Arc::new(ImagePlans {
            size: (h, w),
            full: Arc::new(ConvPlan::image_3x3(h, w)),
            down: Arc::new(ConvPlan::image_3x3_stride2(h, w)),
            half: Arc::new(ConvPlan::image_3x3(h2, w2)),
            up: Arc::new(ConvPlan::image_up2(h, w)),
        });
        *cached = Some(p.clone());
        p
    }

    /// Records the network on `g` for an `[H·W, 7]` input.
    pub fn forward_input(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: Var,
        height: usize,
        width: usize,
    ) -> Result<EncoderOutput> {
        let xv = g.value(input);
        if xv.cols() != INPUT_CHANNELS || xv.rows() != height * width {
            return Err(Error::Shape(format!(
                "2-D encoder expects [{}, {INPUT_CHANNELS}] input, got {:?}",
                height * width,
                xv.shape()
            )));
        }
        let p = self.plans(height, width);
        let a = self.conv1.forward(g, store, input, &p.full)?;
        let a = norm_relu(g, store, &self.norm1, a)?;
        let a = self.conv2.forward(g, store, a, &p.full)?;
        let skip = norm_relu(g, store, &self.norm2, a)?;
        let d = self.down.forward(g, store, skip, &p.down)?;
        let d = norm_relu(g, store, &self.norm_down, d)?;
        let d = self.conv3.forward(g, store, d, &p.half)?;
        let d = norm_relu(g, store, &self.norm3, d)?;
        let u = self.up.forward(g, store, d, &p.up)?;
        let u = g.add(u, skip)?;
        let u = self.conv4.forward(g, store, u, &p.full)?;
        let u = norm_relu(g, store, &self.norm4, u)?;
        let f = self.proj.forward(g, store, u)?;
        let features = output_norm(g, f)?;
        let logits = self.head.forward(g, store, features)?;
        Ok(EncoderOutput { features, logits })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, frame: &Frame) -> Result<EncoderOutput> {
        let input = g.constant(frame.input_tensor());
        self.forward_input(g, store, input, frame.intrinsics.height, frame.intrinsics.width)
    }
}

/// Per-pixel features `[H·W, D]` and auxiliary logits `[H·W, C]`.
pub fn encode_2d(frame: &Frame, enc: &Encoder2d, store: &ParamStore) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let out = enc.forward(&mut g, store, frame)?;
    Ok((g.value(out.features).clone(), g.value(out.logits).clone()))
}
