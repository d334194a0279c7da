//! Additive scoring models over sparse binary Likes, top-quantile targeting,
//! and minimal cloaking sets: the fewest Likes a user has to hide so that a
//! model stops targeting them.
//!
//! The crate is organized bottom-up:
//!
//! - [`corpus`] loads and synthesizes user x item incidence data and task labels.
//! - [`models`] trains logistic regression (raw Likes or SVD components) and
//!   Bernoulli naive Bayes, and exposes each as an [`models::AdditiveScoreModel`].
//! - [`cloaking`] computes targeting cutoffs, greedy cloak sets, trajectories
//!   and effort summaries.
//! - [`experiments`] runs the effort, randomization, true/false-positive and
//!   model-comparison studies and renders their reports.

pub mod cloaking;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod models;
pub mod stats;

pub use cloaking::{
    cloak_trajectory, cloak_user, compute_targeting, effort_summary, CloakResult, CloakStatus,
    EffortSummary, TargetingRule, TrajectoryPoint,
};
pub use corpus::{
    dataset_summary, generate_synthetic, load_dataset, SparseBinaryDataset, SynthSpec,
    SyntheticCorpus, TaskSpec,
};
pub use error::{Error, Result};
pub use models::{train, AdditiveScoreModel, ModelFamily, TrainConfig};

/// Derives an independent stream seed from a base seed and a salt (splitmix64 finalizer).
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
