use std::path::PathBuf;
use std::process::ExitCode;

use aepo_lab::commands::{self, Output};
use aepo_lab::{CliError, ExperimentConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aepo-lab", version, about = "Multi-answer RL grounding lab")]
struct Cli {
    /// TOML experiment config. Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write training and held-out task sets.
    Generate,
    /// Train the configured variant.
    Train {
        #[arg(long)]
        tasks: Option<PathBuf>,
    },
    /// Evaluate a parameter file over the configured seeds.
    Eval {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        tasks: Option<PathBuf>,
    },
    /// Train and evaluate every ablation variant on one dataset.
    Ablate {
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Held-out tasks. Defaults to evaluating on the training tasks.
        #[arg(long)]
        eval_tasks: Option<PathBuf>,
    },
    /// Tabulate the accuracy reward over (N, k).
    RewardCurve {
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4, 5, 6, 7, 8])]
        n: Vec<usize>,
    },
    /// Score externally produced responses against tasks.
    Replay {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        tasks: Option<PathBuf>,
    },
}

fn set_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("AEPO_LAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "AEPO_LAB_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    // Fails only if a pool already exists, which cannot happen this early.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn run(cli: Cli) -> Result<Output, CliError> {
    set_threads()?;
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    let or_out = |p: Option<PathBuf>, name: &str| p.unwrap_or_else(|| out.join(name));
    match cli.cmd {
        Cmd::Generate => commands::cmd_generate(&cfg, &out),
        Cmd::Train { tasks } => {
            commands::cmd_train(&cfg, &or_out(tasks, commands::TASKS_FILE), &out)
        }
        Cmd::Eval { params, tasks } => commands::cmd_eval(
            &cfg,
            &or_out(params, commands::PARAMS_FILE),
            &or_out(tasks, commands::EVAL_TASKS_FILE),
            &out,
        ),
        Cmd::Ablate { tasks, eval_tasks } => commands::cmd_ablate(
            &cfg,
            &or_out(tasks, commands::TASKS_FILE),
            eval_tasks.as_deref(),
            &out,
        ),
        Cmd::RewardCurve { n } => commands::cmd_reward_curve(&n, &out),
        Cmd::Replay { responses, tasks } => {
            commands::cmd_replay(&cfg, &responses, &or_out(tasks, commands::TASKS_FILE), &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(o) => {
            for w in &o.warnings {
                eprintln!("{w}");
            }
            for l in &o.lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
