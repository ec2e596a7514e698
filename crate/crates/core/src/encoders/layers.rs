//! Small parameterized building blocks shared by the networks.

use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::numerics::{ConvPlan, Graph, ParamId, ParamStore, Var};

/// Epsilon of the learned (affine) normalization layers.
pub const NORM_EPS: f64 = 1e-5;
/// Epsilon of the final non-affine normalization applied to every feature
/// that leaves a sub-network.
pub const OUTPUT_NORM_EPS: f64 = 1e-10;

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Debug)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

impl Affine {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<Self> {
        Self::with_gain(store, name, fan_in, fan_out, RELU_GAIN, rng)
    }

    pub fn with_gain<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add_weight(format!("{name}.w"), fan_in, fan_out, gain, rng)?,
            b: store.add_constant(format!("{name}.b"), &[fan_out], 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        g.linear(x, w, Some(b))
    }
}

/// Layer normalization with learned gain and bias.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add_constant(format!("{name}.gain"), &[dim], 1.0)?,
            bias: store.add_constant(format!("{name}.bias"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (gain, bias) = (g.param(store, self.gain), g.param(store, self.bias));
        g.layer_norm(x, Some((gain, bias)), NORM_EPS)
    }
}

/// Convolution weights for a kernel of `taps` positions.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub w: ParamId,
    pub b: ParamId,
}

impl ConvLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        taps: usize,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let std = RELU_GAIN / ((taps * cin) as f64).sqrt();
        Ok(Self {
            w: store.add_normal(format!("{name}.w"), &[taps * cin, cout], std, rng)?,
            b: store.add_constant(format!("{name}.b"), &[cout], 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, plan: &Arc<ConvPlan>) -> Result<Var> {
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        g.conv(x, w, Some(b), plan.clone())
    }
}

/// `relu(norm(x))`.
pub fn norm_relu(g: &mut Graph, store: &ParamStore, norm: &Norm, x: Var) -> Result<Var> {
    let h = norm.forward(g, store, x)?;
    Ok(g.relu(h))
}

/// The drift guard: non-affine layer normalization of every output row.
pub fn output_norm(g: &mut Graph, x: Var) -> Result<Var> {
    g.layer_norm(x, None, OUTPUT_NORM_EPS)
}
