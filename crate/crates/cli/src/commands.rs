//! The subcommands as library functions. Each writes its files into `out` and
//! returns the lines to print.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use aepo_core::env::{
    generate_dataset, label_dataset, trap_fraction, Difficulty, DifficultyLabel, Task,
    DIFFICULTY_TRIALS,
};
use aepo_core::metrics::{evaluate, EvalReport, EvalSettings};
use aepo_core::policy::PolicyParams;
use aepo_core::reward::{reward_curve, reward_curve_csv, total_reward, RewardBreakdown};
use aepo_core::rng::derive_seed;
use aepo_core::trainer::{train, TrainConfig, TrainOutcome};
use serde::{Deserialize, Serialize};

use crate::ablation::Variant;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::io;

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const EVAL_TASKS_FILE: &str = "eval_tasks.jsonl";
pub const PARAMS_FILE: &str = "params.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const REWARD_CURVE_FILE: &str = "reward_curve.csv";
pub const REWARDS_FILE: &str = "rewards.jsonl";

const TAG_TRAIN_DATA: u64 = 0x7472_6169;
const TAG_EVAL_DATA: u64 = 0x6576_616c;
const TAG_LABELS: u64 = 0x6c61_6265;

/// What a command wants printed: progress lines to stdout, warnings to stderr.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Output {
    pub lines: Vec<String>,
    pub warnings: Vec<String>,
}

impl Output {
    fn line(&mut self, s: String) {
        self.lines.push(s);
    }
}

pub fn base_policy(cfg: &ExperimentConfig) -> Result<PolicyParams, CliError> {
    Ok(PolicyParams::init(
        cfg.env.feature_dim,
        cfg.train.n_max,
        &cfg.policy,
    )?)
}

pub fn train_tasks(cfg: &ExperimentConfig) -> Result<Vec<Task>, CliError> {
    Ok(generate_dataset(
        derive_seed(cfg.seed, TAG_TRAIN_DATA),
        cfg.dataset.n_tasks,
        &cfg.env,
    )?)
}

pub fn eval_tasks(cfg: &ExperimentConfig) -> Result<Vec<Task>, CliError> {
    Ok(generate_dataset(
        derive_seed(cfg.seed, TAG_EVAL_DATA),
        cfg.dataset.eval_tasks,
        &cfg.env,
    )?)
}

/// Base-policy difficulty labels, the same for every variant and run.
pub fn difficulty_labels(
    cfg: &ExperimentConfig,
    tasks: &[Task],
) -> Result<Vec<DifficultyLabel>, CliError> {
    let base = base_policy(cfg)?;
    Ok(label_dataset(
        tasks,
        &base,
        DIFFICULTY_TRIALS,
        1.0,
        derive_seed(cfg.seed, TAG_LABELS),
    )?)
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Output, CliError> {
    io::ensure_dir(out)?;
    let mut o = Output::default();
    let tasks = train_tasks(cfg)?;
    io::write_tasks(&out.join(TASKS_FILE), &tasks)?;
    o.line(format!(
        "{} tasks, trap fraction {:.3}",
        tasks.len(),
        trap_fraction(&tasks)
    ));
    if cfg.dataset.eval_tasks > 0 {
        let held_out = eval_tasks(cfg)?;
        io::write_tasks(&out.join(EVAL_TASKS_FILE), &held_out)?;
        o.line(format!(
            "{} held-out tasks, trap fraction {:.3}",
            held_out.len(),
            trap_fraction(&held_out)
        ));
    }
    Ok(o)
}

fn check_dims(cfg: &ExperimentConfig, tasks_path: &Path, tasks: &[Task]) -> Result<(), CliError> {
    let d = tasks[0].instruction.len();
    if d != cfg.env.feature_dim {
        return Err(CliError::schema(
            tasks_path,
            1,
            format!(
                "tasks have {d} features, config expects {}",
                cfg.env.feature_dim
            ),
        ));
    }
    Ok(())
}

pub fn run_training(
    cfg: &ExperimentConfig,
    train_cfg: &TrainConfig,
    tasks: &[Task],
) -> Result<TrainOutcome, CliError> {
    let base = base_policy(cfg)?;
    Ok(train(train_cfg, tasks, &base)?)
}

pub fn cmd_train(
    cfg: &ExperimentConfig,
    tasks_path: &Path,
    out: &Path,
) -> Result<Output, CliError> {
    let tasks = io::read_tasks(tasks_path)?;
    check_dims(cfg, tasks_path, &tasks)?;
    io::ensure_dir(out)?;
    let train_cfg = cfg.resolved_train();
    let outcome = run_training(cfg, &train_cfg, &tasks)?;
    io::write_params(&out.join(PARAMS_FILE), &outcome.params)?;
    io::write_text(&out.join(TRAIN_LOG_FILE), &outcome.log.to_csv())?;
    let mut o = Output::default();
    if let Some(f) = &outcome.filter {
        o.line(format!(
            "kept {} of {} tasks after filtering",
            f.kept.len(),
            tasks.len()
        ));
    }
    o.line(format!(
        "variant {}: {} steps, final mean reward {:.4}",
        cfg.variant,
        outcome.log.steps.len(),
        outcome.log.steps.last().map_or(f64::NAN, |s| s.mean_reward)
    ));
    Ok(o)
}

pub fn run_eval(
    params: &PolicyParams,
    tasks: &[Task],
    labels: &[DifficultyLabel],
    settings: &EvalSettings,
) -> Result<EvalReport, CliError> {
    let report = evaluate(params, tasks, Some(labels), settings)?;
    assert!(
        report.expl_success >= report.accuracy,
        "exploration success below accuracy"
    );
    Ok(report)
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    params_path: &Path,
    tasks_path: &Path,
    out: &Path,
) -> Result<Output, CliError> {
    let params = io::read_params(params_path)?;
    let tasks = io::read_tasks(tasks_path)?;
    if params.feature_dim() != tasks[0].instruction.len() {
        return Err(CliError::schema(
            params_path,
            1,
            format!(
                "params have {} weights, tasks have {} features",
                params.feature_dim(),
                tasks[0].instruction.len()
            ),
        ));
    }
    let labels = difficulty_labels(cfg, &tasks)?;
    let report = run_eval(&params, &tasks, &labels, &cfg.eval)?;
    io::ensure_dir(out)?;
    let mut json = serde_json::to_string_pretty(&report).expect("serializable");
    json.push('\n');
    io::write_text(&out.join(REPORT_JSON_FILE), &json)?;
    io::write_text(&out.join(REPORT_CSV_FILE), &report.to_csv())?;
    let mut o = Output::default();
    if cfg.eval.seeds.len() == 1 {
        o.warnings.push(
            "warning: a single evaluation seed gives no spread estimate; sigma omitted".into(),
        );
    }
    o.line(format!(
        "accuracy {:.4}  expl_success {:.4}  avg_n {:.3}  runs {}",
        report.accuracy, report.expl_success, report.avg_n, report.runs
    ));
    Ok(o)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub accuracy: f64,
    pub expl_success: f64,
    pub avg_n: f64,
    pub per_difficulty: BTreeMap<Difficulty, f64>,
    pub pass_at_k: BTreeMap<usize, f64>,
}

/// Trains `variant` once per evaluation seed on `train_set` and evaluates each
/// run on `held_out` with that same seed.
pub fn run_variant(
    cfg: &ExperimentConfig,
    variant: Variant,
    train_set: &[Task],
    held_out: &[Task],
    labels: &[DifficultyLabel],
) -> Result<Vec<(AblationRow, PolicyParams)>, CliError> {
    cfg.eval
        .seeds
        .iter()
        .map(|&seed| {
            let mut t = variant.apply(&cfg.train);
            t.seed = seed;
            let outcome = run_training(cfg, &t, train_set)?;
            let settings = EvalSettings {
                seeds: vec![seed],
                ..cfg.eval.clone()
            };
            let r = run_eval(&outcome.params, held_out, labels, &settings)?;
            Ok((
                AblationRow {
                    variant,
                    seed,
                    accuracy: r.accuracy,
                    expl_success: r.expl_success,
                    avg_n: r.avg_n,
                    per_difficulty: r.per_difficulty,
                    pass_at_k: r.pass_at_k,
                },
                outcome.params,
            ))
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out =
        String::from("variant,seed,accuracy,expl_success,avg_n,acc_easy,acc_middle,acc_hard\n");
    let diff = |r: &AblationRow, d| {
        r.per_difficulty
            .get(&d)
            .map(|x| x.to_string())
            .unwrap_or_default()
    };
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.variant,
            r.seed,
            r.accuracy,
            r.expl_success,
            r.avg_n,
            diff(r, Difficulty::Easy),
            diff(r, Difficulty::Middle),
            diff(r, Difficulty::Hard)
        );
    }
    for v in Variant::ALL {
        let group: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v).collect();
        if group.is_empty() {
            continue;
        }
        let med = |f: &dyn Fn(&AblationRow) -> Option<f64>| {
            let xs: Vec<f64> = group.iter().filter_map(|r| f(r)).collect();
            if xs.is_empty() {
                String::new()
            } else {
                median(&xs).to_string()
            }
        };
        let _ = writeln!(
            out,
            "{v},median,{},{},{},{},{},{}",
            med(&|r| Some(r.accuracy)),
            med(&|r| Some(r.expl_success)),
            med(&|r| Some(r.avg_n)),
            med(&|r| r.per_difficulty.get(&Difficulty::Easy).copied()),
            med(&|r| r.per_difficulty.get(&Difficulty::Middle).copied()),
            med(&|r| r.per_difficulty.get(&Difficulty::Hard).copied()),
        );
    }
    out
}

pub fn cmd_ablate(
    cfg: &ExperimentConfig,
    tasks_path: &Path,
    eval_tasks_path: Option<&Path>,
    out: &Path,
) -> Result<Output, CliError> {
    let train_set = io::read_tasks(tasks_path)?;
    check_dims(cfg, tasks_path, &train_set)?;
    let held_out = match eval_tasks_path {
        Some(p) => {
            let t = io::read_tasks(p)?;
            check_dims(cfg, p, &t)?;
            t
        }
        None => train_set.clone(),
    };
    let labels = difficulty_labels(cfg, &held_out)?;
    let mut rows = Vec::new();
    for v in Variant::ALL {
        rows.extend(
            run_variant(cfg, v, &train_set, &held_out, &labels)?
                .into_iter()
                .map(|(r, _)| r),
        );
    }
    io::ensure_dir(out)?;
    io::write_text(&out.join(ABLATION_FILE), &ablation_csv(&rows))?;
    let mut o = Output::default();
    for v in Variant::ALL {
        let acc: Vec<f64> = rows
            .iter()
            .filter(|r| r.variant == v)
            .map(|r| r.accuracy)
            .collect();
        let n: Vec<f64> = rows
            .iter()
            .filter(|r| r.variant == v)
            .map(|r| r.avg_n)
            .collect();
        o.line(format!(
            "{v:16} median accuracy {:.4}  median avg_n {:.3}",
            median(&acc),
            median(&n)
        ));
    }
    Ok(o)
}

pub fn cmd_reward_curve(n_values: &[usize], out: &Path) -> Result<Output, CliError> {
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(CliError::Config("N values must be >= 1".into()));
    }
    let k_max = n_values.iter().copied().max().unwrap_or(1);
    let rows = reward_curve(n_values, k_max);
    io::ensure_dir(out)?;
    io::write_text(&out.join(REWARD_CURVE_FILE), &reward_curve_csv(&rows))?;
    Ok(Output {
        lines: vec![format!("{} rows", rows.len())],
        warnings: vec![],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseLine {
    pub response: String,
}

/// Scores each response against the task on the same line. Lines that are not
/// a `{"response": ...}` object score like an unparseable response.
pub fn replay(
    cfg: &ExperimentConfig,
    responses_text: &str,
    tasks: &[Task],
) -> Result<Vec<RewardBreakdown>, CliError> {
    let lines: Vec<&str> = io::jsonl_lines(responses_text).map(|(_, l)| l).collect();
    if lines.len() != tasks.len() {
        return Err(CliError::CountMismatch {
            responses: lines.len(),
            tasks: tasks.len(),
        });
    }
    Ok(lines
        .iter()
        .zip(tasks)
        .map(|(line, task)| {
            let response = serde_json::from_str::<ResponseLine>(line)
                .map(|r| r.response)
                .unwrap_or_default();
            total_reward(
                &response,
                task.target_bbox(),
                cfg.train.n_max,
                cfg.train.eps_rel,
            )
        })
        .collect())
}

pub fn cmd_replay(
    cfg: &ExperimentConfig,
    responses_path: &Path,
    tasks_path: &Path,
    out: &Path,
) -> Result<Output, CliError> {
    let text = io::read_text(responses_path)?;
    let tasks = io::read_tasks(tasks_path)?;
    let scored = replay(cfg, &text, &tasks)?;
    io::ensure_dir(out)?;
    io::write_text(&out.join(REWARDS_FILE), &io::to_jsonl(&scored))?;
    let failed = scored.iter().filter(|b| b.format == 0).count();
    let mean = scored.iter().map(|b| b.total).sum::<f64>() / scored.len() as f64;
    Ok(Output {
        lines: vec![format!(
            "{} responses, {failed} unparseable, mean total {mean:.4}",
            scored.len()
        )],
        warnings: vec![],
    })
}
