//! Dense tensors, reverse-mode differentiation, Adam and the one-cycle
//! schedule.

pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod schedule;
pub mod tensor;

pub use conv::{ConvPlan, Segments};
pub use graph::{focal_term, Graph, Var, PROB_FLOOR};
pub use params::{AdamConfig, Gradients, Param, ParamId, ParamStore};
pub use schedule::{onecycle_lr, ScheduleConfig};
pub use tensor::{argmax, layer_norm, softmax, Tensor};
