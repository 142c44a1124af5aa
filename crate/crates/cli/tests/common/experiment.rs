//! The shared five-variant, five-seed experiment behind the directional checks.

use std::collections::BTreeMap;

use aepo_core::env::{generate_dataset, Difficulty, EnvConfig};
use aepo_core::metrics::adaptive_n_correlation;
use aepo_core::rng::derive_seed;
use aepo_lab::commands::{
    difficulty_labels, eval_tasks, median, run_variant, train_tasks, AblationRow,
};
use aepo_lab::{ExperimentConfig, Variant};

const TAG_HIGH_TRAP: u64 = 0x6869_6768;
const TAG_LOW_TRAP: u64 = 0x6c6f_7774;
pub const HIGH_TRAP: f64 = 0.9;
pub const LOW_TRAP: f64 = 0.1;
/// Size of each trap-share probe set; large so avg N differences are not sampling noise.
pub const PROBE_TASKS: usize = 5000;

pub struct Experiment {
    pub rows: BTreeMap<Variant, Vec<AblationRow>>,
    /// Full-variant avg N per training seed on the high- and low-trap sets.
    pub n_high: Vec<f64>,
    pub n_low: Vec<f64>,
    pub trap_fraction: f64,
}

pub fn run(cfg: &ExperimentConfig) -> Experiment {
    let train_set = train_tasks(cfg).unwrap();
    let held_out = eval_tasks(cfg).unwrap();
    let labels = difficulty_labels(cfg, &held_out).unwrap();
    let shifted = |p: f64, tag: u64| {
        let env = EnvConfig {
            trap_prob: p,
            ..cfg.env.clone()
        };
        generate_dataset(derive_seed(cfg.seed, tag), PROBE_TASKS, &env).unwrap()
    };
    let datasets = vec![
        ("high".to_string(), shifted(HIGH_TRAP, TAG_HIGH_TRAP)),
        ("low".to_string(), shifted(LOW_TRAP, TAG_LOW_TRAP)),
    ];
    let mut rows = BTreeMap::new();
    let (mut n_high, mut n_low) = (vec![], vec![]);
    for v in Variant::ALL {
        let runs = run_variant(cfg, v, &train_set, &held_out, &labels).unwrap();
        if v == Variant::Full {
            for (row, params) in &runs {
                let t = adaptive_n_correlation(params, &datasets, cfg.eval.temperature, row.seed)
                    .unwrap();
                n_high.push(t[0].avg_n);
                n_low.push(t[1].avg_n);
            }
        }
        rows.insert(v, runs.into_iter().map(|(r, _)| r).collect());
    }
    Experiment {
        rows,
        n_high,
        n_low,
        trap_fraction: aepo_core::env::trap_fraction(&train_set),
    }
}

/// `(a - b) / b`, with a zero baseline counting as unbounded improvement when
/// `a` is positive and none otherwise.
pub fn relative_gain(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        (a - b) / b
    } else if a > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

impl Experiment {
    pub fn med(&self, v: Variant, f: impl Fn(&AblationRow) -> f64) -> f64 {
        median(&self.rows[&v].iter().map(f).collect::<Vec<_>>())
    }

    pub fn pass_at(r: &AblationRow, k: usize) -> f64 {
        r.pass_at_k[&k]
    }

    pub fn subset(r: &AblationRow, d: Difficulty) -> f64 {
        r.per_difficulty.get(&d).copied().unwrap_or(f64::NAN)
    }

    /// Median over seeds of full's relative accuracy gain over naive on one subset.
    pub fn relative_subset_gain(&self, d: Difficulty) -> f64 {
        let full = &self.rows[&Variant::Full];
        let naive = &self.rows[&Variant::NoMultiAnswer];
        let gains: Vec<f64> = full
            .iter()
            .zip(naive)
            .map(|(a, b)| relative_gain(Self::subset(a, d), Self::subset(b, d)))
            .collect();
        median(&gains)
    }

    pub fn gap(r: &AblationRow) -> f64 {
        r.expl_success - r.accuracy
    }
}
