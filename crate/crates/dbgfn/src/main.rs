use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use dbgfn::checkpoint::load_checkpoint;
use dbgfn::harness::run_experiment_with;
use dbgfn::{sweep, ExperimentConfig};
use dbgfn_core::oracle::exact_terminal_probs;
use dbgfn_core::train::exact_report;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "dbgfn",
    version,
    about = "Train and evaluate GFlowNets with dynamic backtracking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `out_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print each metrics row to stderr as it is produced.
        #[arg(long)]
        verbose: bool,
    },
    /// Train once per seed and aggregate final metrics as mean and std.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact-distribution diagnostics for a saved checkpoint.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also list the most probable terminals.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
}

fn out_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Serialize)]
struct TopTerminal {
    index: u64,
    tokens: Vec<u8>,
    prob: f64,
    reward: f64,
}

#[derive(Serialize)]
struct OracleReport {
    terminals: u64,
    total_prob: f64,
    accuracy: f64,
    pearson_logp_reward: f64,
    l1_to_target: f64,
    log_z: f64,
    partition_log: f64,
    top: Vec<TopTerminal>,
}

fn oracle(config: &Path, checkpoint: &Path, top: usize) -> anyhow::Result<OracleReport> {
    let cfg = ExperimentConfig::load(config)?;
    let env = cfg.build_env()?;
    if !env.is_enumerable() {
        bail!(
            "{} terminals exceed the enumeration cap of {}",
            env.num_terminals(),
            env.enumeration_cap()
        );
    }
    let params = load_checkpoint(checkpoint, &env)?;
    let report = exact_report(&params, &env)?;
    let dist = exact_terminal_probs(&params, &env)?;
    let rewards = env.all_rewards()?;
    let mut order: Vec<usize> = (0..dist.terminal_logprobs.len()).collect();
    order.sort_by(|&a, &b| {
        dist.terminal_logprobs[b]
            .total_cmp(&dist.terminal_logprobs[a])
            .then(a.cmp(&b))
    });
    let top = order
        .into_iter()
        .take(top)
        .map(|i| TopTerminal {
            index: i as u64,
            tokens: env.terminal_from_index(i as u64).prefix().to_vec(),
            prob: dist.terminal_logprobs[i].exp(),
            reward: rewards[i],
        })
        .collect();
    Ok(OracleReport {
        terminals: env.num_terminals(),
        total_prob: dist.probs().sum(),
        accuracy: report.accuracy,
        pearson_logp_reward: report.pearson_logp_reward,
        l1_to_target: report.l1_to_target,
        log_z: report.log_z,
        partition_log: report.partition_log,
        top,
    })
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            out,
            verbose,
        } => {
            let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let dir = out_dir(&cfg, out);
            let run = run_experiment_with(&cfg, &dir, |row| {
                if verbose {
                    eprintln!(
                        "round {:>6}  acc {:.4}  modes {:>5}  r {:+.4}  loss {:.4}  calls {}",
                        row.round, row.accuracy, row.modes, row.pearson_logp_reward, row.mean_loss, row.reward_calls
                    );
                }
            })?;
            println!("{}", serde_json::to_string_pretty(&run.summary)?);
            eprintln!("wrote {}", dir.display());
        }
        Command::Sweep { config, seeds, out } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let dir = out_dir(&cfg, out);
            let summary = sweep(&cfg, &seeds, &dir)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Oracle {
            config,
            checkpoint,
            top,
        } => {
            println!("{}", serde_json::to_string_pretty(&oracle(&config, &checkpoint, top)?)?);
        }
    }
    Ok(())
}
