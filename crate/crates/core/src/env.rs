//! Synthetic GUI-grounding tasks.
//!
//! A screen holds `M` non-overlapping rectangular elements, each carrying a
//! feature vector. The instruction is a vector drawn close to the target's
//! features, so base similarity (the dot product) usually points at the target.
//!
//! Features are split into *semantic* dimensions `[0, semantic_dims)` and
//! *surface* dimensions `[semantic_dims, d)`. A confidence trap perturbs one
//! distractor along the surface dimensions only, until its similarity beats the
//! target's by the task's `trap_gap`. A policy that weighs surface cues too
//! heavily is then confidently wrong on that task.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::policy::{sample_first_element, PolicyError, PolicyParams};
use crate::rng::{stream_rng, LabRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Elements per screen (`M`).
    pub n_elements: usize,
    /// Feature dimension (`d`).
    pub feature_dim: usize,
    /// Leading feature dimensions that traps never touch.
    pub semantic_dims: usize,
    pub width: u32,
    pub height: u32,
    /// Probability of a single-row layout (all centers on one horizontal line).
    pub row_prob: f64,
    pub trap_prob: f64,
    /// Minimum similarity margin of the trap over the target.
    pub trap_gap: f64,
    /// Per-task margin is `trap_gap * (1 + U[0, trap_gap_jitter])`.
    pub trap_gap_jitter: f64,
    /// Std of the noise separating the target's semantic features from the instruction.
    pub semantic_noise: f64,
    /// Std of the noise separating the target's surface features from the instruction.
    pub surface_noise: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_elements: 6,
            feature_dim: 8,
            semantic_dims: 4,
            width: 1280,
            height: 800,
            row_prob: 0.2,
            trap_prob: 0.3,
            trap_gap: 4.0,
            trap_gap_jitter: 1.0,
            semantic_noise: 0.7,
            surface_noise: 0.3,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let fail = |m: &str| Err(EnvError::Config(m.to_string()));
        if self.n_elements < 2 {
            return fail("n_elements must be >= 2");
        }
        if self.feature_dim < 2 {
            return fail("feature_dim must be >= 2");
        }
        if self.semantic_dims > self.feature_dim {
            return fail("semantic_dims must be <= feature_dim");
        }
        if self.width < 100 || self.height < 100 {
            return fail("screen must be at least 100x100");
        }
        for (name, p) in [("row_prob", self.row_prob), ("trap_prob", self.trap_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(EnvError::Config(format!("{name} must be in [0, 1]")));
            }
        }
        if !(self.trap_gap > 0.0 && self.trap_gap.is_finite()) {
            return fail("trap_gap must be positive");
        }
        if !(self.trap_gap_jitter >= 0.0 && self.trap_gap_jitter.is_finite()) {
            return fail("trap_gap_jitter must be >= 0");
        }
        if !(self.semantic_noise >= 0.0
            && self.surface_noise >= 0.0
            && self.semantic_noise.is_finite()
            && self.surface_noise.is_finite())
        {
            return fail("noise levels must be >= 0");
        }
        Ok(())
    }

    fn surface_range(&self) -> std::ops::Range<usize> {
        if self.semantic_dims == self.feature_dim {
            0..self.feature_dim
        } else {
            self.semantic_dims..self.feature_dim
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Grid,
    Row,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Element {
    pub bbox: BBox,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub width: u32,
    pub height: u32,
    pub elements: Vec<Element>,
    pub instruction: Vec<f64>,
    pub target: usize,
    pub layout: Layout,
    /// Margin by which the trap distractor beats the target under base
    /// similarity; 0 for tasks without a trap.
    pub trap_gap: f64,
}

impl Task {
    pub fn target_bbox(&self) -> &BBox {
        &self.elements[self.target].bbox
    }

    pub fn feature_dim(&self) -> usize {
        self.instruction.len()
    }

    pub fn is_trap(&self) -> bool {
        self.trap_gap > 0.0
    }

    /// Dot-product similarity of every element to the instruction.
    pub fn base_similarity(&self) -> Vec<f64> {
        self.elements
            .iter()
            .map(|e| dot(&e.feature, &self.instruction))
            .collect()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidTask(m));
        let m = self.elements.len();
        if m < 2 {
            return bad(format!("{m} elements, need >= 2"));
        }
        if self.target >= m {
            return bad(format!("target {} out of range", self.target));
        }
        let d = self.instruction.len();
        if !self.instruction.iter().all(|v| v.is_finite()) || !self.trap_gap.is_finite() {
            return bad("non-finite instruction or trap_gap".into());
        }
        for (i, e) in self.elements.iter().enumerate() {
            if e.feature.len() != d || !e.feature.iter().all(|v| v.is_finite()) {
                return bad(format!("element {i} feature invalid"));
            }
            let b = &e.bbox;
            if b.x_min() < 0.0
                || b.y_min() < 0.0
                || b.x_max() > f64::from(self.width)
                || b.y_max() > f64::from(self.height)
            {
                return bad(format!("element {i} outside screen"));
            }
            for (j, o) in self.elements.iter().enumerate().skip(i + 1) {
                if b.overlaps(&o.bbox) {
                    return bad(format!("elements {i} and {j} overlap"));
                }
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normal_vec(rng: &mut LabRng, d: usize) -> Vec<f64> {
    (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn place_grid(rng: &mut LabRng, cfg: &EnvConfig) -> Result<Vec<BBox>, EnvError> {
    let m = cfg.n_elements;
    let (w, h) = (f64::from(cfg.width), f64::from(cfg.height));
    let cols = ((m as f64 * w / h).sqrt().ceil() as usize).clamp(1, m);
    let rows = m.div_ceil(cols);
    let cell_w = (w / cols as f64).floor();
    let cell_h = (h / rows as f64).floor();
    if cell_w < 8.0 || cell_h < 8.0 {
        return Err(EnvError::Config(format!(
            "{m} elements do not fit on a {}x{} screen",
            cfg.width, cfg.height
        )));
    }
    let mut cells: Vec<usize> = (0..cols * rows).collect();
    cells.shuffle(rng);
    cells
        .into_iter()
        .take(m)
        .map(|c| {
            let (cx, cy) = ((c % cols) as f64 * cell_w, (c / cols) as f64 * cell_h);
            let ew = (cell_w * rng.random_range(0.3..0.8)).round().max(2.0);
            let eh = (cell_h * rng.random_range(0.3..0.8)).round().max(2.0);
            let x0 = cx + (rng.random_range(0.0..=1.0) * (cell_w - ew)).floor();
            let y0 = cy + (rng.random_range(0.0..=1.0) * (cell_h - eh)).floor();
            BBox::new(x0, y0, x0 + ew, y0 + eh).map_err(|e| EnvError::Config(e.to_string()))
        })
        .collect()
}

/// One horizontal strip, every element centered on the same `y`.
fn place_row(rng: &mut LabRng, cfg: &EnvConfig) -> Result<Vec<BBox>, EnvError> {
    let m = cfg.n_elements;
    let (w, h) = (f64::from(cfg.width), f64::from(cfg.height));
    let slot = (w / m as f64).floor();
    if slot < 8.0 {
        return Err(EnvError::Config(format!(
            "{m} elements do not fit in one row of width {}",
            cfg.width
        )));
    }
    let max_half = (h * 0.05).max(4.0).floor();
    let y_c = rng.random_range(max_half..=(h - max_half)).round();
    let mut slots: Vec<usize> = (0..m).collect();
    slots.shuffle(rng);
    slots
        .into_iter()
        .map(|s| {
            let ew = (slot * rng.random_range(0.3..0.8)).round().max(2.0);
            let half = rng.random_range(2.0..=max_half).round();
            let x0 = s as f64 * slot + (rng.random_range(0.0..=1.0) * (slot - ew)).floor();
            BBox::new(x0, y_c - half, x0 + ew, y_c + half)
                .map_err(|e| EnvError::Config(e.to_string()))
        })
        .collect()
}

pub fn generate_task(rng: &mut LabRng, cfg: &EnvConfig) -> Result<Task, EnvError> {
    cfg.validate()?;
    let m = cfg.n_elements;
    let d = cfg.feature_dim;
    let layout = if rng.random_bool(cfg.row_prob) {
        Layout::Row
    } else {
        Layout::Grid
    };
    let boxes = match layout {
        Layout::Grid => place_grid(rng, cfg)?,
        Layout::Row => place_row(rng, cfg)?,
    };
    let target = rng.random_range(0..m);
    let surface = cfg.surface_range();

    // The trap direction needs a non-negligible surface component.
    let instruction = loop {
        let v = normal_vec(rng, d);
        if v[surface.clone()].iter().map(|x| x * x).sum::<f64>() >= 0.5 {
            break v;
        }
    };
    // On trap tasks the target does not resemble the instruction on the surface.
    let is_trap = rng.random_bool(cfg.trap_prob);
    // Redraw until the target is positively aligned with the instruction. The
    // trap flag is fixed first so rejection cannot skew the trap fraction.
    let mut tries = 0;
    let (target_feature, target_sim) = loop {
        let f: Vec<f64> = instruction
            .iter()
            .enumerate()
            .map(|(t, &x)| {
                let z = rng.sample::<f64, _>(StandardNormal);
                if t < cfg.semantic_dims {
                    x + cfg.semantic_noise * z
                } else if is_trap {
                    z
                } else {
                    x + cfg.surface_noise * z
                }
            })
            .collect();
        let sim = dot(&f, &instruction);
        if sim > 0.0 {
            break (f, sim);
        }
        tries += 1;
        if tries > 10_000 {
            return Err(EnvError::Config(
                "cannot draw a target aligned with the instruction".into(),
            ));
        }
    };

    let mut features = Vec::with_capacity(m);
    for j in 0..m {
        if j == target {
            features.push(target_feature.clone());
            continue;
        }
        let mut tries = 0;
        let f = loop {
            let f = normal_vec(rng, d);
            if dot(&f, &instruction) < target_sim {
                break f;
            }
            tries += 1;
            if tries > 10_000 {
                return Err(EnvError::Config(
                    "cannot draw distractors below target similarity".into(),
                ));
            }
        };
        features.push(f);
    }

    let mut trap_gap = 0.0;
    if is_trap {
        let others: Vec<usize> = (0..m).filter(|&j| j != target).collect();
        let trap = others[rng.random_range(0..others.len())];
        let gap = cfg.trap_gap * (1.0 + cfg.trap_gap_jitter * rng.random_range(0.0..=1.0));
        let norm_sq: f64 = instruction[surface.clone()].iter().map(|x| x * x).sum();
        let alpha = target_sim - dot(&features[trap], &instruction) + gap;
        for t in surface.clone() {
            features[trap][t] += alpha * instruction[t] / norm_sq;
        }
        trap_gap = dot(&features[trap], &instruction) - target_sim;
    }

    let elements = boxes
        .into_iter()
        .zip(features)
        .map(|(bbox, feature)| Element { bbox, feature })
        .collect();
    Ok(Task {
        width: cfg.width,
        height: cfg.height,
        elements,
        instruction,
        target,
        layout,
        trap_gap,
    })
}

/// Task `i` is drawn from stream `i` of `seed`, so any task can be regenerated
/// on its own.
pub fn generate_dataset(seed: u64, n: usize, cfg: &EnvConfig) -> Result<Vec<Task>, EnvError> {
    cfg.validate()?;
    if n == 0 {
        return Err(EnvError::Config("dataset size must be >= 1".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| generate_task(&mut stream_rng(seed, i as u64), cfg))
        .collect()
}

pub fn trap_fraction(tasks: &[Task]) -> f64 {
    if tasks.is_empty() {
        return 0.0;
    }
    tasks.iter().filter(|t| t.is_trap()).count() as f64 / tasks.len() as f64
}

/// Number of base-policy samples used to label difficulty.
pub const DIFFICULTY_TRIALS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Middle,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Middle, Difficulty::Hard];

    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Middle => "middle",
            Difficulty::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyLabel {
    pub label: Difficulty,
    pub successes: usize,
    pub trials: usize,
}

/// Labels a task by how often single-answer samples of `base` hit the target:
/// easy if every trial hits, hard if none does, middle otherwise.
pub fn label_difficulty(
    task: &Task,
    base: &PolicyParams,
    trials: usize,
    temperature: f64,
    rng: &mut LabRng,
) -> Result<DifficultyLabel, PolicyError> {
    assert!(trials >= 1, "trials must be >= 1");
    let target = task.target_bbox();
    let mut successes = 0;
    for _ in 0..trials {
        let j = sample_first_element(base, task, temperature, rng)?;
        if target.contains(task.elements[j].bbox.center()) {
            successes += 1;
        }
    }
    let label = if successes == trials {
        Difficulty::Easy
    } else if successes == 0 {
        Difficulty::Hard
    } else {
        Difficulty::Middle
    };
    Ok(DifficultyLabel {
        label,
        successes,
        trials,
    })
}

/// Labels every task, task `i` using stream `i` of `seed`.
pub fn label_dataset(
    tasks: &[Task],
    base: &PolicyParams,
    trials: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<DifficultyLabel>, PolicyError> {
    tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            label_difficulty(
                t,
                base,
                trials,
                temperature,
                &mut stream_rng(seed, i as u64),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EnvConfig {
        EnvConfig::default()
    }

    fn argmax(v: &[f64]) -> usize {
        let mut best = 0;
        for (i, &x) in v.iter().enumerate() {
            if x > v[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn no_trap_target_is_strict_argmax() {
        let c = EnvConfig {
            n_elements: 2,
            trap_prob: 0.0,
            ..cfg()
        };
        for s in 0..200 {
            let t = generate_task(&mut stream_rng(s, 0), &c).unwrap();
            let sim = t.base_similarity();
            assert_eq!(argmax(&sim), t.target);
            assert!(sim[1 - t.target] < sim[t.target]);
            assert!(!t.is_trap());
        }
    }

    #[test]
    fn full_trap_exceeds_target_by_gap() {
        let c = EnvConfig {
            n_elements: 5,
            trap_prob: 1.0,
            trap_gap: 0.5,
            ..cfg()
        };
        for s in 0..200 {
            let t = generate_task(&mut stream_rng(s, 1), &c).unwrap();
            let sim = t.base_similarity();
            let best_other = (0..5)
                .filter(|&j| j != t.target)
                .map(|j| sim[j] - sim[t.target])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(best_other >= 0.5 - 1e-9, "seed {s}: {best_other}");
            assert!((best_other - t.trap_gap).abs() < 1e-9);
            assert_ne!(argmax(&sim), t.target);
        }
    }

    #[test]
    fn traps_only_touch_surface_dims() {
        let c = EnvConfig {
            trap_prob: 1.0,
            semantic_noise: 0.0,
            ..cfg()
        };
        let t = generate_task(&mut stream_rng(3, 3), &c).unwrap();
        // With zero semantic noise the target matches the instruction exactly on
        // semantic dims; the trap's semantic dims are still plain N(0,1) draws.
        let tf = &t.elements[t.target].feature;
        assert_eq!(&tf[..4], &t.instruction[..4]);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_task(&mut stream_rng(11, 0), &cfg()).unwrap();
        let b = generate_task(&mut stream_rng(11, 0), &cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            generate_dataset(1, 3, &cfg()).unwrap(),
            generate_dataset(1, 3, &cfg()).unwrap()
        );
        assert_ne!(
            generate_dataset(1, 3, &cfg()).unwrap(),
            generate_dataset(2, 3, &cfg()).unwrap()
        );
    }

    #[test]
    fn dataset_is_order_independent() {
        let all = generate_dataset(5, 20, &cfg()).unwrap();
        let only = generate_task(&mut stream_rng(5, 17), &cfg()).unwrap();
        assert_eq!(all[17], only);
    }

    #[test]
    fn trap_fraction_binomial_band() {
        // n=1000, p=0.3: sd = sqrt(1000*0.3*0.7)/1000 ≈ 0.0145, band is ±3.4 sd.
        let c = EnvConfig {
            trap_prob: 0.3,
            ..cfg()
        };
        let tasks = generate_dataset(9, 1000, &c).unwrap();
        let f = trap_fraction(&tasks);
        assert!((0.25..=0.35).contains(&f), "{f}");
    }

    #[test]
    fn row_layout_centers_share_y() {
        let c = EnvConfig {
            row_prob: 1.0,
            ..cfg()
        };
        let t = generate_task(&mut stream_rng(2, 2), &c).unwrap();
        assert_eq!(t.layout, Layout::Row);
        let y = t.elements[0].bbox.center().y;
        assert!(t.elements.iter().all(|e| e.bbox.center().y == y));
        t.validate().unwrap();
    }

    #[test]
    fn invariants_hold_across_many_seeds() {
        let c = EnvConfig {
            row_prob: 0.5,
            trap_prob: 0.5,
            ..cfg()
        };
        let tasks = generate_dataset(123, 10_000, &c).unwrap();
        for (i, t) in tasks.iter().enumerate() {
            t.validate().unwrap_or_else(|e| panic!("task {i}: {e}"));
            assert_eq!(t.elements.len(), 6);
            let sim = t.base_similarity();
            assert_eq!(argmax(&sim) == t.target, !t.is_trap(), "task {i}");
        }
    }

    #[test]
    fn config_errors() {
        let bad = EnvConfig {
            n_elements: 1,
            ..cfg()
        };
        assert!(matches!(
            generate_task(&mut stream_rng(0, 0), &bad),
            Err(EnvError::Config(_))
        ));
        let crowded = EnvConfig {
            n_elements: 200,
            width: 100,
            height: 100,
            ..cfg()
        };
        assert!(matches!(
            generate_task(&mut stream_rng(0, 0), &crowded),
            Err(EnvError::Config(_))
        ));
        assert!(generate_dataset(0, 0, &cfg()).is_err());
    }

    #[test]
    fn jsonl_round_trip_is_bit_exact() {
        for t in generate_dataset(4, 50, &cfg()).unwrap() {
            let line = serde_json::to_string(&t).unwrap();
            assert!(!line.contains('\n'));
            let back: Task = serde_json::from_str(&line).unwrap();
            assert_eq!(back, t);
            assert_eq!(serde_json::to_string(&back).unwrap(), line);
        }
    }

    #[test]
    fn jsonl_field_names() {
        let t = generate_task(&mut stream_rng(0, 0), &cfg()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&t).unwrap();
        for key in [
            "width",
            "height",
            "elements",
            "instruction",
            "target",
            "layout",
            "trap_gap",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v["elements"][0]["bbox"].as_array().unwrap().len() == 4);
        assert!(v["elements"][0]["feature"].is_array());
    }

    fn uniform(d: usize) -> PolicyParams {
        PolicyParams::new(vec![0.0; d], vec![0.0; 8], vec![0.0; 8]).unwrap()
    }

    #[test]
    fn label_extremes() {
        let t = generate_task(
            &mut stream_rng(1, 0),
            &EnvConfig {
                trap_prob: 0.0,
                ..cfg()
            },
        )
        .unwrap();
        // Huge weights on a trap-free task put all mass on the target.
        let sure = PolicyParams::new(vec![1e6; 8], vec![0.0; 8], vec![0.0; 8]).unwrap();
        let l = label_difficulty(&t, &sure, 16, 1.0, &mut stream_rng(0, 0)).unwrap();
        assert_eq!((l.label, l.successes), (Difficulty::Easy, 16));
        // Negated weights push all mass away from the (top-similarity) target.
        let never = PolicyParams::new(vec![-1e6; 8], vec![0.0; 8], vec![0.0; 8]).unwrap();
        let l = label_difficulty(&t, &never, 16, 1.0, &mut stream_rng(0, 0)).unwrap();
        assert_eq!((l.label, l.successes), (Difficulty::Hard, 0));
    }

    #[test]
    fn uniform_policy_hard_rate_matches_binomial() {
        // P(hard) = (3/4)^16 ≈ 0.010023 for a uniform policy over 4 elements.
        let expected = 0.75f64.powi(16);
        let c = EnvConfig {
            n_elements: 4,
            ..cfg()
        };
        let task = generate_task(&mut stream_rng(0, 0), &c).unwrap();
        let n = 100_000u64;
        let base = uniform(8);
        let hard: usize = (0..n)
            .into_par_iter()
            .map(|i| {
                let l = label_difficulty(&task, &base, 16, 1.0, &mut stream_rng(77, i)).unwrap();
                usize::from(l.label == Difficulty::Hard)
            })
            .sum();
        let freq = hard as f64 / n as f64;
        assert!((freq - expected).abs() < 0.002, "{freq} vs {expected}");
    }
}
