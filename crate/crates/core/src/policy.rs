//! Multi-answer stochastic policy with exact log-probabilities and gradients.
//!
//! A rollout is generated in two stages:
//!
//! 1. The candidate count `N` is drawn from a softmax over count logits
//!    `u_n + v_n * H`, where `H` is the entropy of the element distribution
//!    `softmax(scores / T)`. Support is `1..=min(N_max, M)`.
//! 2. `N` distinct elements are drawn without replacement, each pick from the
//!    softmax of `scores / T` renormalized over the elements not yet chosen
//!    (Plackett–Luce).
//!
//! Element scores are `s_j = Σ_t w_t · instruction_t · feature_{j,t}`. The
//! emitted candidate points are the chosen elements' box centers.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Task;
use crate::geometry::Point;
use crate::protocol::{serialize_response, CandidateSet, Response};
use crate::rng::LabRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("dimension mismatch: policy has {policy} feature weights, task has {task}")]
    Dimension { policy: usize, task: usize },
    #[error("invalid policy parameters: {0}")]
    InvalidParams(String),
    #[error("infeasible rollout: {0}")]
    InfeasibleRollout(String),
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
}

/// Policy parameters θ. The same shape doubles as a gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyParams {
    /// Element-score weights, one per feature dimension.
    pub w: Vec<f64>,
    /// Count-head base logits for `N = 1..=N_max`.
    pub u: Vec<f64>,
    /// Count-head coupling to the element-score entropy.
    pub v: Vec<f64>,
}

/// Initialization of the pre-training ("base") policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyInit {
    /// Every feature weight starts at this value.
    pub score_scale: f64,
    /// `u_n = -count_decay * (n - 1)`: how strongly the base policy prefers few answers.
    pub count_decay: f64,
    /// `v_n = entropy_gain * (n - 1)`: extra answers per nat of score entropy.
    pub entropy_gain: f64,
}

impl Default for PolicyInit {
    fn default() -> Self {
        Self {
            score_scale: 1.0,
            count_decay: 1.0,
            entropy_gain: 0.0,
        }
    }
}

impl PolicyParams {
    pub fn new(w: Vec<f64>, u: Vec<f64>, v: Vec<f64>) -> Result<Self, PolicyError> {
        let p = Self { w, u, v };
        p.validate()?;
        Ok(p)
    }

    pub fn init(feature_dim: usize, n_max: usize, init: &PolicyInit) -> Result<Self, PolicyError> {
        Self::new(
            vec![init.score_scale; feature_dim],
            (0..n_max).map(|n| -init.count_decay * n as f64).collect(),
            (0..n_max).map(|n| init.entropy_gain * n as f64).collect(),
        )
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.u.is_empty() || self.u.len() != self.v.len() {
            return Err(PolicyError::InvalidParams(format!(
                "count head needs equal non-empty u and v, got {} and {}",
                self.u.len(),
                self.v.len()
            )));
        }
        if self.w.is_empty() {
            return Err(PolicyError::InvalidParams("w is empty".into()));
        }
        if !self.is_finite() {
            return Err(PolicyError::InvalidParams("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn n_max(&self) -> usize {
        self.u.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.w.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: vec![0.0; self.w.len()],
            u: vec![0.0; self.u.len()],
            v: vec![0.0; self.v.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.w.iter().chain(&self.u).chain(&self.v).copied()
    }

    pub fn len(&self) -> usize {
        self.w.len() + self.u.len() + self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view in `w, u, v` order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().collect()
    }

    pub fn from_flat_like(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), self.len());
        let (w, rest) = flat.split_at(self.w.len());
        let (u, v) = rest.split_at(self.u.len());
        Self {
            w: w.to_vec(),
            u: u.to_vec(),
            v: v.to_vec(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &PolicyParams, scale: f64) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += scale * b;
        }
        for (a, b) in self.u.iter_mut().zip(&other.u) {
            *a += scale * b;
        }
        for (a, b) in self.v.iter_mut().zip(&other.v) {
            *a += scale * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// How the candidate count is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountMode {
    /// Drawn from the count head; contributes `log P(N)` to the log-probability.
    Sampled,
    /// Fixed externally (single-answer baselines); the count head is unused.
    Fixed(usize),
}

/// How the first candidate is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FirstPick {
    #[default]
    Sampled,
    /// Highest-scoring element, later picks still sampled. Used for evaluation
    /// so that the top-1 answer coincides with the greedy decode.
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub n: usize,
    /// Chosen element indices in generation order.
    pub element_ranks: Vec<usize>,
    pub candidates: CandidateSet,
    pub response: String,
    pub logp: f64,
    pub temperature: f64,
    pub count_mode: CountMode,
}

fn check_temperature(t: f64) -> Result<(), PolicyError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(PolicyError::Temperature(t))
    }
}

pub fn element_scores(params: &PolicyParams, task: &Task) -> Result<Vec<f64>, PolicyError> {
    let d = params.w.len();
    if task.instruction.len() != d {
        return Err(PolicyError::Dimension {
            policy: d,
            task: task.instruction.len(),
        });
    }
    task.elements
        .iter()
        .map(|e| {
            if e.feature.len() != d {
                return Err(PolicyError::Dimension {
                    policy: d,
                    task: e.feature.len(),
                });
            }
            Ok(params
                .w
                .iter()
                .zip(&task.instruction)
                .zip(&e.feature)
                .map(|((w, i), f)| w * i * f)
                .sum())
        })
        .collect()
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits.iter().copied());
    logits.iter().map(|x| x - lse).collect()
}

/// Entropy of `softmax(scores / temperature)`, with its log-probabilities.
fn score_entropy(scores: &[f64], temperature: f64) -> (f64, Vec<f64>) {
    let z: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let logq = log_softmax(&z);
    let h = -logq
        .iter()
        .map(|&lq| {
            if lq == f64::NEG_INFINITY {
                0.0
            } else {
                lq.exp() * lq
            }
        })
        .sum::<f64>();
    (h.max(0.0), logq)
}

pub fn count_support(params: &PolicyParams, n_elements: usize) -> usize {
    params.n_max().min(n_elements)
}

/// `log P(N = n)` for `n = 1..=support`.
fn count_log_probs(params: &PolicyParams, entropy: f64, support: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..support)
        .map(|m| params.u[m] + params.v[m] * entropy)
        .collect();
    log_softmax(&logits)
}

/// Probabilities of `N = 1..=support` for the given element scores.
pub fn count_distribution(params: &PolicyParams, scores: &[f64], temperature: f64) -> Vec<f64> {
    let (h, _) = score_entropy(scores, temperature);
    count_log_probs(params, h, count_support(params, scores.len()))
        .into_iter()
        .map(f64::exp)
        .collect()
}

fn sample_index(log_probs: &[f64], rng: &mut LabRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, lp) in log_probs.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

pub fn sample_count(
    params: &PolicyParams,
    scores: &[f64],
    temperature: f64,
    rng: &mut LabRng,
) -> Result<usize, PolicyError> {
    check_temperature(temperature)?;
    let (h, _) = score_entropy(scores, temperature);
    let lp = count_log_probs(params, h, count_support(params, scores.len()));
    Ok(sample_index(&lp, rng) + 1)
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Draws `n` distinct indices by sequential renormalized softmax.
fn plackett_luce_sample(
    scores: &[f64],
    temperature: f64,
    n: usize,
    first: FirstPick,
    rng: &mut LabRng,
) -> Vec<usize> {
    let z: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut picks = Vec::with_capacity(n);
    for step in 0..n {
        let pos = if step == 0 && first == FirstPick::Greedy {
            let zs: Vec<f64> = remaining.iter().map(|&j| z[j]).collect();
            argmax_lowest(&zs)
        } else {
            let zs: Vec<f64> = remaining.iter().map(|&j| z[j]).collect();
            sample_index(&log_softmax(&zs), rng)
        };
        picks.push(remaining.remove(pos));
    }
    picks
}

/// First candidate of a rollout, drawn alone (its law does not depend on `N`).
pub fn sample_first_element(
    params: &PolicyParams,
    task: &Task,
    temperature: f64,
    rng: &mut LabRng,
) -> Result<usize, PolicyError> {
    check_temperature(temperature)?;
    let scores = element_scores(params, task)?;
    Ok(plackett_luce_sample(&scores, temperature, 1, FirstPick::Sampled, rng)[0])
}

pub fn sample_rollout(
    params: &PolicyParams,
    task: &Task,
    temperature: f64,
    rng: &mut LabRng,
) -> Result<Rollout, PolicyError> {
    sample_rollout_with(
        params,
        task,
        temperature,
        CountMode::Sampled,
        FirstPick::Sampled,
        rng,
    )
}

pub fn sample_rollout_with(
    params: &PolicyParams,
    task: &Task,
    temperature: f64,
    count_mode: CountMode,
    first: FirstPick,
    rng: &mut LabRng,
) -> Result<Rollout, PolicyError> {
    check_temperature(temperature)?;
    let scores = element_scores(params, task)?;
    let m = scores.len();
    let n = match count_mode {
        CountMode::Sampled => sample_count(params, &scores, temperature, rng)?,
        CountMode::Fixed(n) if (1..=m).contains(&n) => n,
        CountMode::Fixed(n) => {
            return Err(PolicyError::InfeasibleRollout(format!(
                "fixed count {n} with {m} elements"
            )))
        }
    };
    let element_ranks = plackett_luce_sample(&scores, temperature, n, first, rng);
    let logp = log_prob_from_scores(params, &scores, &element_ranks, count_mode, temperature)?;
    let points: Vec<Point> = element_ranks
        .iter()
        .map(|&j| task.elements[j].bbox.center())
        .collect();
    let candidates =
        CandidateSet::new(points).map_err(|e| PolicyError::InfeasibleRollout(e.to_string()))?;
    let response = serialize_response(&Response {
        think: String::new(),
        candidates: candidates.clone(),
    });
    Ok(Rollout {
        n,
        element_ranks,
        candidates,
        response,
        logp,
        temperature,
        count_mode,
    })
}

fn check_feasible(
    params: &PolicyParams,
    m: usize,
    ranks: &[usize],
    count_mode: CountMode,
) -> Result<(), PolicyError> {
    let n = ranks.len();
    let max_n = match count_mode {
        CountMode::Sampled => count_support(params, m),
        CountMode::Fixed(k) => {
            if k != n {
                return Err(PolicyError::InfeasibleRollout(format!(
                    "fixed count {k} but {n} picks"
                )));
            }
            m
        }
    };
    if n == 0 || n > max_n {
        return Err(PolicyError::InfeasibleRollout(format!(
            "{n} picks, allowed 1..={max_n}"
        )));
    }
    let mut seen = vec![false; m];
    for &j in ranks {
        if j >= m {
            return Err(PolicyError::InfeasibleRollout(format!(
                "element {j} of {m}"
            )));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(PolicyError::InfeasibleRollout(format!(
                "element {j} repeated"
            )));
        }
    }
    Ok(())
}

/// `log π(ranks | task)` given precomputed element scores.
pub fn log_prob_from_scores(
    params: &PolicyParams,
    scores: &[f64],
    ranks: &[usize],
    count_mode: CountMode,
    temperature: f64,
) -> Result<f64, PolicyError> {
    check_temperature(temperature)?;
    let m = scores.len();
    check_feasible(params, m, ranks, count_mode)?;
    let (h, _) = score_entropy(scores, temperature);
    let mut logp = match count_mode {
        CountMode::Sampled => count_log_probs(params, h, count_support(params, m))[ranks.len() - 1],
        CountMode::Fixed(_) => 0.0,
    };
    let z: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let mut remaining = vec![true; m];
    for &e in ranks {
        let lse = log_sum_exp((0..m).filter(|&j| remaining[j]).map(|j| z[j]));
        logp += z[e] - lse;
        remaining[e] = false;
    }
    Ok(logp)
}

pub fn log_prob(params: &PolicyParams, task: &Task, rollout: &Rollout) -> Result<f64, PolicyError> {
    let scores = element_scores(params, task)?;
    log_prob_from_scores(
        params,
        &scores,
        &rollout.element_ranks,
        rollout.count_mode,
        rollout.temperature,
    )
}

type ScoreGrads = (Vec<f64>, Vec<f64>, Vec<f64>);

/// Gradient of `log π` with respect to the element scores and the count head.
/// Returns `(d/ds, d/du, d/dv)`.
fn grad_from_scores(
    params: &PolicyParams,
    scores: &[f64],
    ranks: &[usize],
    count_mode: CountMode,
    temperature: f64,
) -> Result<ScoreGrads, PolicyError> {
    check_temperature(temperature)?;
    let m = scores.len();
    check_feasible(params, m, ranks, count_mode)?;
    let n_max = params.n_max();
    let mut ds = vec![0.0; m];
    let mut du = vec![0.0; n_max];
    let mut dv = vec![0.0; n_max];

    if count_mode == CountMode::Sampled {
        let (h, logq) = score_entropy(scores, temperature);
        let support = count_support(params, m);
        let count_p: Vec<f64> = count_log_probs(params, h, support)
            .into_iter()
            .map(f64::exp)
            .collect();
        let chosen = ranks.len() - 1;
        for c in 0..support {
            let g = f64::from(u8::from(c == chosen)) - count_p[c];
            du[c] = g;
            dv[c] = g * h;
        }
        // d log P(N) / dH, then through dH/ds_j = -q_j (log q_j + H) / T.
        let expected_v: f64 = (0..support).map(|c| count_p[c] * params.v[c]).sum();
        let dlogp_dh = params.v[chosen] - expected_v;
        for j in 0..m {
            if logq[j] > f64::NEG_INFINITY {
                let q = logq[j].exp();
                ds[j] += dlogp_dh * (-q * (logq[j] + h) / temperature);
            }
        }
    }

    let z: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let mut remaining = vec![true; m];
    for &e in ranks {
        let lse = log_sum_exp((0..m).filter(|&j| remaining[j]).map(|j| z[j]));
        for j in (0..m).filter(|&j| remaining[j]) {
            ds[j] -= (z[j] - lse).exp() / temperature;
        }
        ds[e] += 1.0 / temperature;
        remaining[e] = false;
    }
    Ok((ds, du, dv))
}

/// Exact gradient of `log π(rollout | task)` with respect to `(w, u, v)`.
pub fn grad_log_prob(
    params: &PolicyParams,
    task: &Task,
    rollout: &Rollout,
) -> Result<PolicyParams, PolicyError> {
    grad_log_prob_of(
        params,
        task,
        &rollout.element_ranks,
        rollout.count_mode,
        rollout.temperature,
    )
}

pub fn grad_log_prob_of(
    params: &PolicyParams,
    task: &Task,
    ranks: &[usize],
    count_mode: CountMode,
    temperature: f64,
) -> Result<PolicyParams, PolicyError> {
    let scores = element_scores(params, task)?;
    let (ds, u, v) = grad_from_scores(params, &scores, ranks, count_mode, temperature)?;
    let d = params.w.len();
    let mut w = vec![0.0; d];
    for (e, g) in task.elements.iter().zip(&ds) {
        if *g == 0.0 {
            continue;
        }
        for ((wt, x), f) in w.iter_mut().zip(&task.instruction).zip(&e.feature) {
            *wt += g * x * f;
        }
    }
    Ok(PolicyParams { w, u, v })
}

/// Index of the highest-scoring element; ties go to the lowest index.
pub fn greedy_element(params: &PolicyParams, task: &Task) -> Result<usize, PolicyError> {
    Ok(argmax_lowest(&element_scores(params, task)?))
}

/// Deterministic top-1 decode: the center of the highest-scoring element.
pub fn greedy_first_answer(params: &PolicyParams, task: &Task) -> Result<Point, PolicyError> {
    Ok(task.elements[greedy_element(params, task)?].bbox.center())
}
