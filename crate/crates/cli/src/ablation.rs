use std::fmt;
use std::str::FromStr;

use aepo_core::reward::AccuracyRule;
use aepo_core::trainer::{TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

/// Reward and sampling variants compared by `ablate`. Each one is a pure
/// rewrite of the training config; the trainer has a single code path.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Single forced answer with ±1 accuracy.
    NoMultiAnswer,
    /// Multi-answer, but every success scores +1 and every failure -1.
    NoAer,
    /// Success scores `1/sqrt(N)` whatever the rank.
    NoRankFactor,
    /// Degenerate candidate sets are not overridden.
    NoCollinear,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoMultiAnswer,
        Variant::NoAer,
        Variant::NoRankFactor,
        Variant::NoCollinear,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMultiAnswer => "no_multi_answer",
            Variant::NoAer => "no_aer",
            Variant::NoRankFactor => "no_rank_factor",
            Variant::NoCollinear => "no_collinear",
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut t = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoMultiAnswer => t.mode = TrainMode::Naive,
            Variant::NoAer => t.accuracy_rule = AccuracyRule::Flat,
            Variant::NoRankFactor => t.accuracy_rule = AccuracyRule::NoRankFactor,
            Variant::NoCollinear => t.collinear_penalty = false,
        }
        t
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}
