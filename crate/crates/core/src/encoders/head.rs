use rand::Rng;

use super::layers::{norm_relu, Affine, Norm};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Auxiliary classifier: affine → layer norm → ReLU → affine. The same
/// architecture follows the 2-D encoder, the 3-D encoder and the expert.
#[derive(Clone, Debug)]
pub struct AuxHead {
    pub hidden: Affine,
    pub norm: Norm,
    pub out: Affine,
    pub input_dim: usize,
    pub classes: usize,
}

impl AuxHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Affine::new(store, &format!("{name}.fc1"), input_dim, hidden, rng)?,
            norm: Norm::new(store, &format!("{name}.norm"), hidden)?,
            out: Affine::with_gain(store, &format!("{name}.fc2"), hidden, classes, 1.0, rng)?,
            input_dim,
            classes,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        if g.value(x).cols() != self.input_dim {
            return Err(Error::Shape(format!(
                "head expects {} inputs, got {}",
                self.input_dim,
                g.value(x).cols()
            )));
        }
        let h = self.hidden.forward(g, store, x)?;
        let h = norm_relu(g, store, &self.norm, h)?;
        self.out.forward(g, store, h)
    }

    /// Logits for a batch of feature rows without recording gradients.
    pub fn logits(&self, store: &ParamStore, features: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(features.clone());
        let y = self.forward(&mut g, store, x)?;
        Ok(g.value(y).clone())
    }
}
