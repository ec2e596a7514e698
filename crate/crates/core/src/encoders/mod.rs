//! 2-D and 3-D feature extractors with auxiliary classification heads.

pub mod encoder2d;
pub mod encoder3d;
pub mod frame;
pub mod head;
pub mod layers;
pub mod precomputed;
pub mod sparse;

pub use encoder2d::{encode_2d, Encoder2d, Encoder2dConfig};
pub use encoder3d::{encode_3d, Encoder3d, Encoder3dConfig, SparseLevels};
pub use frame::{Frame, INPUT_CHANNELS};
pub use head::AuxHead;
pub use precomputed::PrecomputedFeatures;

use crate::numerics::Var;

/// Features and auxiliary logits recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub features: Var,
    pub logits: Var,
}
