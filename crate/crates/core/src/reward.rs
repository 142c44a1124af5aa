//! Adaptive Exploration Reward, the collinear override and the total reward.
//!
//! The accuracy term comes from an efficiency ratio `U / C` where utility is
//! ±1 and cost is the geometric mean of proposal cost `N` and verification
//! cost (`k` on success, `N` on failure):
//!
//! ```text
//! success at rank k:  1 / sqrt(N * k)
//! failure:           -1 / N
//! ```
//!
//! [`score_response`] is the single reward path used everywhere. Its
//! [`RewardConfig`] also carries the ablation switches (flat accuracy, rank
//! factor removed, collinear penalty disabled) so that variants differ only in
//! configuration.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::geometry::{is_collinear_set, point_in_bbox, BBox, Point, DEFAULT_EPS_REL};
use crate::protocol::{parse_response, CandidateSet, DEFAULT_N_MAX};

/// Shape of the accuracy term once a response has parsed and passed the
/// collinearity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyRule {
    /// `1/sqrt(N k)` on success, `-1/N` on failure.
    #[default]
    Aer,
    /// `1/sqrt(N)` on success regardless of rank, `-1/N` on failure.
    NoRankFactor,
    /// `+1` on success, `-1` on failure.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub n_max: usize,
    pub eps_rel: f64,
    pub accuracy_rule: AccuracyRule,
    pub collinear_penalty: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            n_max: DEFAULT_N_MAX,
            eps_rel: DEFAULT_EPS_REL,
            accuracy_rule: AccuracyRule::Aer,
            collinear_penalty: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: u8,
    pub accuracy: f64,
    pub total: f64,
    pub collinear: bool,
    /// 1-based rank of the first hit, if any.
    pub rank: Option<usize>,
    /// Number of candidates; 0 when the format check failed.
    pub n: usize,
    pub success: bool,
}

impl RewardBreakdown {
    fn format_failure() -> Self {
        Self {
            format: 0,
            accuracy: 0.0,
            total: 0.0,
            collinear: false,
            rank: None,
            n: 0,
            success: false,
        }
    }
}

pub fn find_first_correct_rank(candidates: &CandidateSet, target: &BBox) -> Option<usize> {
    candidates
        .points()
        .iter()
        .position(|&p| point_in_bbox(p, target))
        .map(|i| i + 1)
}

fn aer_value(n: usize, rank: Option<usize>) -> f64 {
    match rank {
        Some(k) => 1.0 / ((n * k) as f64).sqrt(),
        None => -1.0 / n as f64,
    }
}

/// Pure AER value for a candidate set, without the collinear override.
pub fn aer_accuracy(candidates: &CandidateSet, target: &BBox) -> f64 {
    aer_value(
        candidates.len(),
        find_first_correct_rank(candidates, target),
    )
}

fn accuracy_value(rule: AccuracyRule, n: usize, rank: Option<usize>) -> f64 {
    match (rule, rank) {
        (AccuracyRule::Aer, _) => aer_value(n, rank),
        (AccuracyRule::NoRankFactor, Some(_)) => aer_value(n, Some(1)),
        (AccuracyRule::NoRankFactor, None) => aer_value(n, None),
        (AccuracyRule::Flat, Some(_)) => 1.0,
        (AccuracyRule::Flat, None) => -1.0,
    }
}

/// Scores an already-parsed candidate set (format reward is 1).
pub fn score_candidates(
    candidates: &CandidateSet,
    target: &BBox,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let n = candidates.len();
    let collinear = cfg.collinear_penalty && is_collinear_set(candidates.points(), cfg.eps_rel);
    let (accuracy, rank) = if collinear {
        (-1.0, None)
    } else {
        let rank = find_first_correct_rank(candidates, target);
        (accuracy_value(cfg.accuracy_rule, n, rank), rank)
    };
    RewardBreakdown {
        format: 1,
        accuracy,
        total: 1.0 + accuracy,
        collinear,
        rank,
        n,
        success: rank.is_some(),
    }
}

/// Full reward path for a raw response string: format check, collinear
/// override, then the configured accuracy rule.
pub fn score_response(response: &str, target: &BBox, cfg: &RewardConfig) -> RewardBreakdown {
    match parse_response(response, cfg.n_max) {
        Ok(r) => score_candidates(&r.candidates, target, cfg),
        Err(_) => RewardBreakdown::format_failure(),
    }
}

/// `R_total = R_format + R_accuracy` with the standard AER rules.
pub fn total_reward(response: &str, target: &BBox, n_max: usize, eps_rel: f64) -> RewardBreakdown {
    let cfg = RewardConfig {
        n_max,
        eps_rel,
        ..RewardConfig::default()
    };
    score_response(response, target, &cfg)
}

/// Binary single-point reward: +1 on a hit, -1 otherwise.
pub fn naive_reward(p: Point, target: &BBox) -> f64 {
    if point_in_bbox(p, target) {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n: usize,
    /// Rank of the first hit; 0 marks the failure row.
    pub k: usize,
    pub reward: f64,
}

/// Tabulates success rewards for `k = 1..=min(k_max, N)` and the failure
/// value for each `N`.
pub fn reward_curve(n_values: &[usize], k_max: usize) -> Vec<CurveRow> {
    let mut rows = Vec::new();
    for &n in n_values.iter().filter(|&&n| n >= 1) {
        rows.push(CurveRow {
            n,
            k: 0,
            reward: aer_value(n, None),
        });
        for k in 1..=k_max.min(n) {
            rows.push(CurveRow {
                n,
                k,
                reward: aer_value(n, Some(k)),
            });
        }
    }
    rows
}

pub fn reward_curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("N,k,reward\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.n, r.k, r.reward);
    }
    out
}
