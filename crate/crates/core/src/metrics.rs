//! Evaluation metrics: top-1 accuracy, exploration success, pass@k,
//! difficulty breakdown and multi-run spread.
//!
//! Every stochastic metric draws task `i` from stream `i` of its seed, so
//! results are independent of thread count and evaluation order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

use crate::env::{Difficulty, DifficultyLabel, Task};
use crate::policy::{
    greedy_first_answer, sample_first_element, sample_rollout_with, CountMode, FirstPick,
    PolicyError, PolicyParams,
};
use crate::reward::find_first_correct_rank;
use crate::rng::stream_rng;

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("need at least 2 runs for a spread estimate, got {0}")]
    TooFewRuns(usize),
    #[error("need at least 2 datasets, got {0}")]
    TooFewDatasets(usize),
    #[error("{tasks} tasks but {labels} difficulty labels")]
    LabelMismatch { tasks: usize, labels: usize },
    #[error("pass@k needs k >= 1")]
    ZeroK,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

fn non_empty(tasks: &[Task]) -> Result<(), MetricsError> {
    if tasks.is_empty() {
        Err(MetricsError::EmptyDataset)
    } else {
        Ok(())
    }
}

fn greedy_hit(policy: &PolicyParams, task: &Task) -> Result<bool, PolicyError> {
    Ok(task
        .target_bbox()
        .contains(greedy_first_answer(policy, task)?))
}

/// Fraction of tasks whose greedy first answer lands in the target box.
pub fn accuracy(policy: &PolicyParams, tasks: &[Task]) -> Result<f64, MetricsError> {
    non_empty(tasks)?;
    let hits: usize = tasks
        .par_iter()
        .map(|t| greedy_hit(policy, t).map(usize::from))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .sum();
    Ok(hits as f64 / tasks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationStats {
    /// Fraction of tasks where some candidate hit the target.
    pub success: f64,
    /// Fraction of tasks where the first candidate hit the target.
    pub first_hit: f64,
    pub avg_n: f64,
}

/// One stochastic multi-answer rollout per task.
pub fn exploration_success_rate(
    policy: &PolicyParams,
    tasks: &[Task],
    temperature: f64,
    seed: u64,
) -> Result<ExplorationStats, MetricsError> {
    exploration_success_with(
        policy,
        tasks,
        temperature,
        CountMode::Sampled,
        FirstPick::Sampled,
        seed,
    )
}

pub fn exploration_success_with(
    policy: &PolicyParams,
    tasks: &[Task],
    temperature: f64,
    count_mode: CountMode,
    first: FirstPick,
    seed: u64,
) -> Result<ExplorationStats, MetricsError> {
    non_empty(tasks)?;
    let per_task: Vec<(bool, bool, usize)> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = stream_rng(seed, i as u64);
            let r = sample_rollout_with(policy, t, temperature, count_mode, first, &mut rng)?;
            let rank = find_first_correct_rank(&r.candidates, t.target_bbox());
            Ok((rank.is_some(), rank == Some(1), r.n))
        })
        .collect::<Result<_, PolicyError>>()?;
    let n = tasks.len() as f64;
    Ok(ExplorationStats {
        success: per_task.iter().filter(|x| x.0).count() as f64 / n,
        first_hit: per_task.iter().filter(|x| x.1).count() as f64 / n,
        avg_n: per_task.iter().map(|x| x.2 as f64).sum::<f64>() / n,
    })
}

/// Per-task hit flags for `k` independent single-answer attempts, drawn
/// sequentially from the task's stream. The first `k` attempts are shared by
/// every larger `k`, so pass@k is exactly monotone in `k`.
fn attempt_hits(
    policy: &PolicyParams,
    task: &Task,
    k: usize,
    temperature: f64,
    seed: u64,
    index: usize,
) -> Result<Vec<bool>, PolicyError> {
    let mut rng = stream_rng(seed, index as u64);
    let target = task.target_bbox();
    (0..k)
        .map(|_| {
            let j = sample_first_element(policy, task, temperature, &mut rng)?;
            Ok(target.contains(task.elements[j].bbox.center()))
        })
        .collect()
}

/// Fraction of tasks where any of `k` single-answer attempts hits the target.
pub fn pass_at_k(
    policy: &PolicyParams,
    tasks: &[Task],
    k: usize,
    temperature: f64,
    seed: u64,
) -> Result<f64, MetricsError> {
    Ok(pass_at_ks(policy, tasks, &[k], temperature, seed)?[&k])
}

/// pass@k for several `k` from one set of attempts.
pub fn pass_at_ks(
    policy: &PolicyParams,
    tasks: &[Task],
    ks: &[usize],
    temperature: f64,
    seed: u64,
) -> Result<BTreeMap<usize, f64>, MetricsError> {
    non_empty(tasks)?;
    if ks.contains(&0) {
        return Err(MetricsError::ZeroK);
    }
    let k_max = ks.iter().copied().max().unwrap_or(1);
    let first_hit: Vec<Option<usize>> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(attempt_hits(policy, t, k_max, temperature, seed, i)?
                .iter()
                .position(|&h| h))
        })
        .collect::<Result<_, PolicyError>>()?;
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = first_hit
                .iter()
                .filter(|h| h.is_some_and(|p| p < k))
                .count();
            (k, hits as f64 / tasks.len() as f64)
        })
        .collect())
}

/// Greedy accuracy per difficulty subset. Empty subsets are absent.
pub fn difficulty_breakdown(
    policy: &PolicyParams,
    tasks: &[Task],
    labels: &[DifficultyLabel],
) -> Result<BTreeMap<Difficulty, f64>, MetricsError> {
    if tasks.len() != labels.len() {
        return Err(MetricsError::LabelMismatch {
            tasks: tasks.len(),
            labels: labels.len(),
        });
    }
    let mut counts: BTreeMap<Difficulty, (usize, usize)> = BTreeMap::new();
    for (t, l) in tasks.iter().zip(labels) {
        let e = counts.entry(l.label).or_default();
        e.0 += 1;
        e.1 += usize::from(greedy_hit(policy, t)?);
    }
    Ok(counts
        .into_iter()
        .map(|(k, (n, hits))| (k, hits as f64 / n as f64))
        .collect())
}

/// Mean and sample standard deviation (`n - 1` denominator).
pub fn mean_and_sigma(values: &[f64]) -> Result<(f64, f64), MetricsError> {
    if values.len() < 2 {
        return Err(MetricsError::TooFewRuns(values.len()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

/// Runs `experiment` once per seed and summarizes the metric it returns.
pub fn multi_run_sigma<E, F>(seeds: &[u64], experiment: F) -> Result<(f64, f64), E>
where
    F: Fn(u64) -> Result<f64, E>,
    E: From<MetricsError>,
{
    if seeds.len() < 2 {
        return Err(MetricsError::TooFewRuns(seeds.len()).into());
    }
    let values = seeds
        .iter()
        .map(|&s| experiment(s))
        .collect::<Result<Vec<_>, E>>()?;
    Ok(mean_and_sigma(&values)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveNRow {
    pub name: String,
    pub accuracy: f64,
    pub avg_n: f64,
}

/// Accuracy and mean candidate count per dataset.
pub fn adaptive_n_correlation(
    policy: &PolicyParams,
    datasets: &[(String, Vec<Task>)],
    temperature: f64,
    seed: u64,
) -> Result<Vec<AdaptiveNRow>, MetricsError> {
    if datasets.len() < 2 {
        return Err(MetricsError::TooFewDatasets(datasets.len()));
    }
    datasets
        .iter()
        .map(|(name, tasks)| {
            Ok(AdaptiveNRow {
                name: name.clone(),
                accuracy: accuracy(policy, tasks)?,
                avg_n: exploration_success_rate(policy, tasks, temperature, seed)?.avg_n,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub seeds: Vec<u64>,
    pub temperature: f64,
    pub pass_k_values: Vec<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            temperature: 1.0,
            pass_k_values: vec![1, 2, 4],
        }
    }
}

/// Full evaluation summary, averaged over runs.
///
/// `accuracy` is the greedy top-1 decode. `expl_success` and `avg_n` come from
/// multi-answer rollouts whose first candidate is that same greedy answer, so
/// `expl_success >= accuracy` holds for every run. `sampled_accuracy` is
/// single-answer accuracy at the evaluation temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub accuracy: f64,
    pub sampled_accuracy: f64,
    pub expl_success: f64,
    pub avg_n: f64,
    pub per_difficulty: BTreeMap<Difficulty, f64>,
    pub pass_at_k: BTreeMap<usize, f64>,
    pub runs: usize,
    /// Sample std of accuracy over runs; absent for a single run.
    pub sigma: Option<f64>,
    /// Sample std of exploration success over runs; absent for a single run.
    pub sigma_expl_success: Option<f64>,
}

impl EvalReport {
    pub fn csv_header(&self) -> String {
        let mut h = String::from(
            "schema,runs,accuracy,sigma,sampled_accuracy,expl_success,sigma_expl_success,avg_n",
        );
        for d in Difficulty::ALL {
            let _ = write!(h, ",acc_{}", d.as_str());
        }
        for k in self.pass_at_k.keys() {
            let _ = write!(h, ",pass@{k}");
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut r = format!(
            "{},{},{},{},{},{},{},{}",
            self.schema,
            self.runs,
            self.accuracy,
            opt(self.sigma),
            self.sampled_accuracy,
            self.expl_success,
            opt(self.sigma_expl_success),
            self.avg_n
        );
        for d in Difficulty::ALL {
            let _ = write!(r, ",{}", opt(self.per_difficulty.get(&d).copied()));
        }
        for v in self.pass_at_k.values() {
            let _ = write!(r, ",{v}");
        }
        r
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", self.csv_header(), self.csv_row())
    }
}

/// Runs the whole metric suite once per seed. `labels`, when given, must be
/// base-policy difficulty labels aligned with `tasks`.
pub fn evaluate(
    policy: &PolicyParams,
    tasks: &[Task],
    labels: Option<&[DifficultyLabel]>,
    settings: &EvalSettings,
) -> Result<EvalReport, MetricsError> {
    non_empty(tasks)?;
    if settings.seeds.is_empty() {
        return Err(MetricsError::TooFewRuns(0));
    }
    let acc = accuracy(policy, tasks)?;
    let per_difficulty = match labels {
        Some(l) => difficulty_breakdown(policy, tasks, l)?,
        None => BTreeMap::new(),
    };
    let mut ks = settings.pass_k_values.clone();
    if !ks.contains(&1) {
        ks.push(1);
    }
    let mut accs = Vec::new();
    let mut expl = Vec::new();
    let mut avg_n = Vec::new();
    let mut sampled = Vec::new();
    let mut pass: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &seed in &settings.seeds {
        let stats = exploration_success_with(
            policy,
            tasks,
            settings.temperature,
            CountMode::Sampled,
            FirstPick::Greedy,
            seed,
        )?;
        assert!(
            stats.first_hit == acc && stats.success >= acc,
            "exploration rollouts must extend the greedy answer"
        );
        let p = pass_at_ks(policy, tasks, &ks, settings.temperature, seed)?;
        accs.push(acc);
        expl.push(stats.success);
        avg_n.push(stats.avg_n);
        sampled.push(p[&1]);
        for &k in &settings.pass_k_values {
            pass.entry(k).or_default().push(p[&k]);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let spread = |v: &[f64]| mean_and_sigma(v).ok().map(|x| x.1);
    let report = EvalReport {
        schema: REPORT_SCHEMA,
        accuracy: mean(&accs),
        sampled_accuracy: mean(&sampled),
        expl_success: mean(&expl),
        avg_n: mean(&avg_n),
        per_difficulty,
        pass_at_k: pass.iter().map(|(&k, v)| (k, mean(v))).collect(),
        runs: settings.seeds.len(),
        sigma: spread(&accs),
        sigma_expl_success: spread(&expl),
    };
    assert!(report.expl_success >= report.accuracy);
    Ok(report)
}
