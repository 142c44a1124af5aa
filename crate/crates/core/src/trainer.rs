//! RLOO policy-gradient training.
//!
//! Each task in a batch gets a group of `G` rollouts. Rewards come from the
//! shared reward path, advantages from the leave-one-out baseline
//!
//! ```text
//! A_i = R_i - 1/(G-1) * Σ_{j≠i} R_j
//! ```
//!
//! and the update is plain gradient ascent
//! `θ += lr * mean_groups( 1/G * Σ_i A_i ∇ log π(rollout_i) )`.
//!
//! Groups are sampled in parallel, each from its own random stream, and
//! gradients are reduced in batch order, so a run is bit-reproducible from its
//! seed regardless of the thread count.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

use crate::env::Task;
use crate::policy::{
    grad_log_prob, sample_first_element, sample_rollout_with, CountMode, FirstPick, PolicyError,
    PolicyParams, Rollout,
};
use crate::protocol::format_reward;
use crate::reward::{naive_reward, score_response, AccuracyRule, RewardConfig};
use crate::rng::{derive_seed, stream_rng, LabRng};

/// Rollouts per task in the pre-training difficulty filter.
pub const FILTER_ROLLOUTS: usize = 8;

const TAG_FILTER: u64 = 0x4649_4c54;
const TAG_SHUFFLE: u64 = 0x5348_5546;
const TAG_STEP: u64 = 0x5354_4550;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("leave-one-out baseline needs at least 2 rollouts per group, got {0}")]
    GroupTooSmall(usize),
    #[error("non-finite gradient from the group for task {task}")]
    NonFiniteGradient { task: usize },
    #[error("every task was filtered out as too easy")]
    EmptyAfterFilter,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Multi-answer rollouts scored by the adaptive exploration reward.
    #[default]
    Aepo,
    /// Single-answer rollouts scored `R_format ± 1`.
    Naive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Rollouts per task (`G`).
    pub group_size: usize,
    /// Tasks per update.
    pub batch_size: usize,
    pub epochs: usize,
    pub temperature: f64,
    pub n_max: usize,
    pub eps_rel: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub accuracy_rule: AccuracyRule,
    pub collinear_penalty: bool,
    /// Rescale the update to at most this L2 norm. Off by default.
    pub grad_clip: Option<f64>,
    /// Drop tasks the base policy already solves in all filter rollouts.
    pub filter: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            group_size: 8,
            batch_size: 32,
            epochs: 3,
            temperature: 1.0,
            n_max: crate::protocol::DEFAULT_N_MAX,
            eps_rel: crate::geometry::DEFAULT_EPS_REL,
            seed: 0,
            mode: TrainMode::Aepo,
            accuracy_rule: AccuracyRule::Aer,
            collinear_penalty: true,
            grad_clip: None,
            filter: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.group_size < 2 {
            return Err(TrainError::GroupTooSmall(self.group_size));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be positive");
        }
        if self.n_max == 0 {
            return fail("n_max must be >= 1");
        }
        if self.eps_rel.is_nan() || self.eps_rel <= 0.0 {
            return fail("eps_rel must be positive");
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return fail("grad_clip must be positive");
            }
        }
        Ok(())
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            n_max: self.n_max,
            eps_rel: self.eps_rel,
            accuracy_rule: self.accuracy_rule,
            collinear_penalty: self.collinear_penalty,
        }
    }

    fn count_mode(&self) -> CountMode {
        match self.mode {
            TrainMode::Aepo => CountMode::Sampled,
            TrainMode::Naive => CountMode::Fixed(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RolloutGroup<'a> {
    pub task_index: usize,
    pub task: &'a Task,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Whether any candidate of each rollout hit the target.
    pub successes: Vec<bool>,
}

pub fn rloo_advantages(rewards: &[f64]) -> Result<Vec<f64>, TrainError> {
    let g = rewards.len();
    if g < 2 {
        return Err(TrainError::GroupTooSmall(g));
    }
    let total: f64 = rewards.iter().sum();
    let others = (g - 1) as f64;
    Ok(rewards.iter().map(|&r| r - (total - r) / others).collect())
}

/// Samples `G` rollouts for one task and scores them.
pub fn evaluate_group<'a>(
    policy: &PolicyParams,
    task: &'a Task,
    task_index: usize,
    cfg: &TrainConfig,
    rng: &mut LabRng,
) -> Result<RolloutGroup<'a>, TrainError> {
    let reward_cfg = cfg.reward_config();
    let target = task.target_bbox();
    let mut rollouts = Vec::with_capacity(cfg.group_size);
    let mut rewards = Vec::with_capacity(cfg.group_size);
    let mut successes = Vec::with_capacity(cfg.group_size);
    for _ in 0..cfg.group_size {
        let r = sample_rollout_with(
            policy,
            task,
            cfg.temperature,
            cfg.count_mode(),
            FirstPick::Sampled,
            rng,
        )?;
        let (reward, success) = match cfg.mode {
            TrainMode::Aepo => {
                let b = score_response(&r.response, target, &reward_cfg);
                (b.total, b.success)
            }
            TrainMode::Naive => {
                let format = f64::from(format_reward(&r.response, cfg.n_max));
                let hit = naive_reward(r.candidates.first(), target);
                let total = if format > 0.0 { format + hit } else { 0.0 };
                (total, hit > 0.0)
            }
        };
        rollouts.push(r);
        rewards.push(reward);
        successes.push(success);
    }
    let advantages = rloo_advantages(&rewards)?;
    let scale = rewards.iter().fold(1.0f64, |m, r| m.max(r.abs()));
    assert!(
        advantages.iter().sum::<f64>().abs() <= 1e-12 * scale * cfg.group_size as f64,
        "advantages do not sum to zero"
    );
    Ok(RolloutGroup {
        task_index,
        task,
        rollouts,
        rewards,
        advantages,
        successes,
    })
}

/// `(1/G) Σ_i A_i ∇ log π(rollout_i)` for one group.
pub fn group_gradient(
    policy: &PolicyParams,
    group: &RolloutGroup<'_>,
) -> Result<PolicyParams, TrainError> {
    let mut grad = policy.zeros_like();
    let g = group.rollouts.len() as f64;
    for (r, &a) in group.rollouts.iter().zip(&group.advantages) {
        if a == 0.0 {
            continue;
        }
        grad.add_scaled(&grad_log_prob(policy, group.task, r)?, a / g);
    }
    if !grad.is_finite() {
        return Err(TrainError::NonFiniteGradient {
            task: group.task_index,
        });
    }
    Ok(grad)
}

/// Mean of the per-group RLOO gradients, reduced in group order.
pub fn batch_gradient(
    policy: &PolicyParams,
    groups: &[RolloutGroup<'_>],
) -> Result<PolicyParams, TrainError> {
    let grads: Vec<PolicyParams> = groups
        .par_iter()
        .map(|g| group_gradient(policy, g))
        .collect::<Result<_, _>>()?;
    let mut total = policy.zeros_like();
    if grads.is_empty() {
        return Ok(total);
    }
    for g in &grads {
        total.add_scaled(g, 1.0 / grads.len() as f64);
    }
    Ok(total)
}

/// One ascent step on the expected reward.
pub fn policy_gradient_step(
    policy: &PolicyParams,
    groups: &[RolloutGroup<'_>],
    lr: f64,
    grad_clip: Option<f64>,
) -> Result<PolicyParams, TrainError> {
    let mut grad = batch_gradient(policy, groups)?;
    if let Some(c) = grad_clip {
        let norm = grad.norm();
        if norm > c {
            grad = grad.from_flat_like(
                &grad
                    .to_flat()
                    .iter()
                    .map(|x| x * c / norm)
                    .collect::<Vec<_>>(),
            );
        }
    }
    let mut next = policy.clone();
    next.add_scaled(&grad, lr);
    if !next.is_finite() {
        let task = groups.first().map_or(0, |g| g.task_index);
        return Err(TrainError::NonFiniteGradient { task });
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    /// Indices of tasks kept for training, ascending.
    pub kept: Vec<usize>,
    /// Hits out of [`FILTER_ROLLOUTS`] first answers, per task.
    pub hits: Vec<usize>,
}

/// Drops tasks whose first answers hit the target in all filter rollouts.
pub fn filter_dataset(
    tasks: &[Task],
    base: &PolicyParams,
    temperature: f64,
    seed: u64,
) -> Result<FilterReport, TrainError> {
    let filter_seed = derive_seed(seed, TAG_FILTER);
    let hits: Vec<usize> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = stream_rng(filter_seed, i as u64);
            let target = t.target_bbox();
            let mut hits = 0;
            for _ in 0..FILTER_ROLLOUTS {
                let j = sample_first_element(base, t, temperature, &mut rng)?;
                if target.contains(t.elements[j].bbox.center()) {
                    hits += 1;
                }
            }
            Ok(hits)
        })
        .collect::<Result<_, TrainError>>()?;
    let kept = (0..tasks.len())
        .filter(|&i| hits[i] < FILTER_ROLLOUTS)
        .collect();
    Ok(FilterReport { kept, hits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub mean_reward: f64,
    pub mean_abs_adv: f64,
    /// Fraction of rollouts with any hit; only recorded in multi-answer mode.
    pub expl_success: Option<f64>,
    pub mean_n: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepLog>,
}

impl TrainingLog {
    pub const CSV_HEADER: &'static str = "step,epoch,mean_reward,mean_abs_adv,expl_success,mean_n";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for s in &self.steps {
            let expl = s.expl_success.map(|e| e.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.step, s.epoch, s.mean_reward, s.mean_abs_adv, expl, s.mean_n
            );
        }
        out
    }

    /// Mean of `mean_reward` over the steps of one epoch.
    pub fn epoch_mean_reward(&self, epoch: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| s.epoch == epoch)
            .map(|s| s.mean_reward)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: TrainingLog,
    pub filter: Option<FilterReport>,
}

fn step_log(step: usize, epoch: usize, mode: TrainMode, groups: &[RolloutGroup<'_>]) -> StepLog {
    let count: usize = groups.iter().map(|g| g.rewards.len()).sum();
    let c = count as f64;
    let sum = |f: &dyn Fn(&RolloutGroup<'_>) -> f64| groups.iter().map(f).sum::<f64>() / c;
    StepLog {
        step,
        epoch,
        mean_reward: sum(&|g| g.rewards.iter().sum()),
        mean_abs_adv: sum(&|g| g.advantages.iter().map(|a| a.abs()).sum()),
        expl_success: (mode == TrainMode::Aepo)
            .then(|| sum(&|g| g.successes.iter().filter(|&&s| s).count() as f64)),
        mean_n: sum(&|g| g.rollouts.iter().map(|r| r.n as f64).sum()),
    }
}

/// Filters the dataset with the initial policy once, then runs `epochs`
/// passes over shuffled batches.
pub fn train(
    cfg: &TrainConfig,
    dataset: &[Task],
    init: &PolicyParams,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    init.validate()?;
    if init.n_max() != cfg.n_max {
        return Err(TrainError::Config(format!(
            "policy count head covers {} answers but n_max is {}",
            init.n_max(),
            cfg.n_max
        )));
    }
    if dataset.is_empty() {
        return Err(TrainError::EmptyAfterFilter);
    }
    let (mut order, filter) = if cfg.filter {
        let report = filter_dataset(dataset, init, cfg.temperature, cfg.seed)?;
        (report.kept.clone(), Some(report))
    } else {
        ((0..dataset.len()).collect(), None)
    };
    if order.is_empty() {
        return Err(TrainError::EmptyAfterFilter);
    }

    let mut params = init.clone();
    let mut log = TrainingLog::default();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream_rng(
            derive_seed(cfg.seed, TAG_SHUFFLE),
            epoch as u64,
        ));
        for batch in order.chunks(cfg.batch_size) {
            let step_seed = derive_seed(derive_seed(cfg.seed, TAG_STEP), step as u64);
            let groups: Vec<RolloutGroup<'_>> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| {
                    evaluate_group(
                        &params,
                        &dataset[i],
                        i,
                        cfg,
                        &mut stream_rng(step_seed, slot as u64),
                    )
                })
                .collect::<Result<_, _>>()?;
            log.steps.push(step_log(step, epoch, cfg.mode, &groups));
            params = policy_gradient_step(&params, &groups, cfg.learning_rate, cfg.grad_clip)?;
            step += 1;
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        filter,
    })
}
