//! Synthetic scenes, rendering and the on-disk sequence format.

pub mod config;
pub mod mesh;
pub mod render;
pub mod sequence;
pub mod shapes;
pub mod synth;

pub use config::{DataConfig, RunConfig};
pub use mesh::LabeledMesh;
pub use render::{render_frame, render_sequence_frame};
pub use sequence::{write_synthetic, Sequence};
pub use shapes::Shape;
pub use synth::{generate_scene, Primitive, SceneSpec, SyntheticScene, CLASS_NAMES, NUM_CLASSES};
