//! Segmentation metrics and per-branch evaluation.

pub mod branches;
pub mod metrics;

pub use branches::{evaluate_branches, BranchReport, BranchResult, BranchVotes, BRANCH_NAMES};
pub use metrics::{ConfusionMatrix, Summary};
