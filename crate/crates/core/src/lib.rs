//! Adaptive exploration policy optimization on a synthetic GUI-grounding task.
//!
//! A policy proposes an ordered set of candidate click points for an
//! instruction. Rewards favour sets that contain the target early and stay
//! small, penalise failure less as more candidates are tried, and reject
//! degenerate (collinear) sets. Training uses the REINFORCE leave-one-out
//! estimator.
//!
//! Module map:
//! - [`geometry`]: points, boxes, hit tests, collinearity
//! - [`protocol`]: response grammar and format reward
//! - [`reward`]: adaptive exploration reward and total reward
//! - [`env`]: synthetic task generation and difficulty labels
//! - [`policy`]: multi-answer policy, log-probabilities and gradients
//! - [`trainer`]: RLOO training loop, data filter, naive baseline
//! - [`metrics`]: accuracy, exploration success, pass@k, reports

pub mod env;
pub mod geometry;
pub mod metrics;
pub mod policy;
pub mod protocol;
pub mod reward;
pub mod rng;
pub mod trainer;

pub use env::{Difficulty, DifficultyLabel, EnvConfig, Task};
pub use geometry::{BBox, Point};
pub use policy::{PolicyInit, PolicyParams, Rollout};
pub use protocol::{CandidateSet, Response};
pub use reward::{RewardBreakdown, RewardConfig};
pub use trainer::{TrainConfig, TrainMode, TrainingLog};
