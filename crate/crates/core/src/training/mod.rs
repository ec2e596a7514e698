//! Losses and the sequential training protocol.

pub mod gradsuite;
pub mod labels;
pub mod loss;
pub mod plan;
pub mod trainer;

pub use gradsuite::{gradient_suite, SuiteCase};
pub use labels::VoxelLabeler;
pub use loss::{composite_loss, focal_loss, frame_loss, BranchStats, LossConfig, IGNORE_LABEL};
pub use plan::{steps_per_epoch, EpochPlan, TrainConfig, Visit};
pub use trainer::{StepMetrics, TrainScene, Trainer};
