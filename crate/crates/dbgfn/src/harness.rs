//! Running experiments and writing their outputs.
//!
//! A run directory holds:
//! * `metrics.csv`: one row per evaluation, columns [`METRICS_COLUMNS`];
//! * `summary.json`: run counters, the last metrics row and, when the space
//!   can be enumerated, exact diagnostics of the final policy;
//! * `checkpoint.json`: final parameters (see [`crate::checkpoint`]).
//!
//! A sweep runs one directory per seed (`seed-<n>`) and writes a
//! `summary.json` with the mean and sample standard deviation of every
//! final metric across seeds.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dbgfn_core::oracle::MetricsRow;
use dbgfn_core::stats::{mean, std_dev};
use dbgfn_core::train::{ExactReport, TrainStats};
use dbgfn_core::Trainer;
use serde::Serialize;

use crate::checkpoint::save_checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const METRICS_COLUMNS: [&str; 8] = [
    "round",
    "accuracy",
    "modes",
    "pearson_logp_reward",
    "uniqueness",
    "topk_mean",
    "mean_loss",
    "reward_calls",
];

/// Streams metrics rows to CSV.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        inner.write_record(METRICS_COLUMNS)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record([
            row.round.to_string(),
            row.accuracy.to_string(),
            row.modes.to_string(),
            row.pearson_logp_reward.to_string(),
            row.uniqueness.to_string(),
            row.topk_mean.to_string(),
            row.mean_loss.to_string(),
            row.reward_calls.to_string(),
        ])?;
        Ok(())
    }

    pub fn finish(self) -> Result<W> {
        self.inner.into_inner().map_err(|e| Error::Io {
            path: PathBuf::from("metrics.csv"),
            source: e.into_error(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalMetrics {
    pub round: u64,
    pub accuracy: f64,
    pub modes: u64,
    pub pearson_logp_reward: f64,
    pub uniqueness: f64,
    pub topk_mean: f64,
    pub mean_loss: f64,
    pub reward_calls: u64,
}

impl From<&MetricsRow> for FinalMetrics {
    fn from(r: &MetricsRow) -> Self {
        Self {
            round: r.round,
            accuracy: r.accuracy,
            modes: r.modes,
            pearson_logp_reward: r.pearson_logp_reward,
            uniqueness: r.uniqueness,
            topk_mean: r.topk_mean,
            mean_loss: r.mean_loss,
            reward_calls: r.reward_calls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactSummary {
    pub accuracy: f64,
    pub pearson_logp_reward: f64,
    pub l1_to_target: f64,
    pub log_z: f64,
    pub partition_log: f64,
}

impl From<ExactReport> for ExactSummary {
    fn from(e: ExactReport) -> Self {
        Self {
            accuracy: e.accuracy,
            pearson_logp_reward: e.pearson_logp_reward,
            l1_to_target: e.l1_to_target,
            log_z: e.log_z,
            partition_log: e.partition_log,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub rounds: u64,
    pub reward_calls: u64,
    pub eval_reward_calls: u64,
    pub proposals: u64,
    pub accepted: u64,
    pub slot_reward_decreases: u64,
    pub distinct_terminals: u64,
    pub mode_threshold: f64,
    #[serde(rename = "final")]
    pub final_metrics: Option<FinalMetrics>,
    pub exact: Option<ExactSummary>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics_csv: PathBuf,
    pub summary_json: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub summary: RunSummary,
    pub rows: Vec<MetricsRow>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(Error::io(path))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(Error::io(path))?;
    out.flush().map_err(Error::io(path))
}

/// Train one configuration and write its run directory.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    run_experiment_with(cfg, out_dir, |_| {})
}

/// As [`run_experiment`], calling `on_row` after each evaluation.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<RunOutput> {
    let exp = cfg.build()?;
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let metrics_csv = out_dir.join("metrics.csv");
    let summary_json = out_dir.join("summary.json");

    let mut trainer = Trainer::new(exp.env, exp.train)?;
    let mut writer = MetricsWriter::new(create(&metrics_csv)?)?;
    let mut rows = Vec::new();
    while !trainer.is_done() {
        if let Some(row) = trainer.step()? {
            writer.write(&row)?;
            on_row(&row);
            rows.push(row);
        }
    }
    writer.finish()?.flush().map_err(Error::io(&metrics_csv))?;

    let exact = if trainer.env().is_enumerable() {
        Some(trainer.exact_report()?.into())
    } else {
        None
    };
    let TrainStats {
        rounds,
        reward_calls,
        eval_reward_calls,
        proposals,
        accepted,
        slot_reward_decreases,
    } = trainer.stats();
    let summary = RunSummary {
        seed: cfg.seed,
        rounds,
        reward_calls,
        eval_reward_calls,
        proposals,
        accepted,
        slot_reward_decreases,
        distinct_terminals: trainer.modes().distinct() as u64,
        mode_threshold: trainer.config().mode_threshold,
        final_metrics: rows.last().map(FinalMetrics::from),
        exact,
    };
    write_json(&summary_json, &summary)?;

    let checkpoint = if cfg.checkpoint {
        let path = out_dir.join("checkpoint.json");
        save_checkpoint(&path, trainer.params(), trainer.env(), &trainer.config().policy)?;
        Some(path)
    } else {
        None
    };
    Ok(RunOutput {
        metrics_csv,
        summary_json,
        checkpoint,
        summary,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; zero for a single value.
    pub fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            std: std_dev(xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub seeds: Vec<u64>,
    pub runs: Vec<PathBuf>,
    pub accuracy: MeanStd,
    pub modes: MeanStd,
    pub pearson_logp_reward: MeanStd,
    pub uniqueness: MeanStd,
    pub topk_mean: MeanStd,
    pub mean_loss: MeanStd,
    pub reward_calls: MeanStd,
    pub exact_accuracy: Option<MeanStd>,
    pub exact_pearson_logp_reward: Option<MeanStd>,
    pub exact_l1_to_target: Option<MeanStd>,
}

/// One run per seed under `out_dir/seed-<n>`, then an aggregate summary.
pub fn sweep(cfg: &ExperimentConfig, seeds: &[u64], out_dir: &Path) -> Result<SweepSummary> {
    if seeds.is_empty() {
        return Err(Error::ConfigInvalid("a sweep needs at least one seed".into()));
    }
    let mut outputs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut c = cfg.clone();
        c.seed = seed;
        outputs.push(run_experiment(&c, &out_dir.join(format!("seed-{seed}")))?);
    }
    let finals: Vec<FinalMetrics> = outputs
        .iter()
        .map(|o| {
            o.summary.final_metrics.clone().ok_or_else(|| {
                Error::ConfigInvalid("sweep runs produced no metrics rows; raise rounds or lower eval_every".into())
            })
        })
        .collect::<Result<_>>()?;
    let col = |f: fn(&FinalMetrics) -> f64| MeanStd::of(&finals.iter().map(f).collect::<Vec<_>>());
    let exact: Option<Vec<ExactSummary>> = outputs.iter().map(|o| o.summary.exact.clone()).collect();
    let ecol = |f: fn(&ExactSummary) -> f64| {
        exact
            .as_ref()
            .map(|e| MeanStd::of(&e.iter().map(f).collect::<Vec<_>>()))
    };
    let summary = SweepSummary {
        seeds: seeds.to_vec(),
        runs: outputs
            .iter()
            .map(|o| o.metrics_csv.parent().unwrap_or(out_dir).to_path_buf())
            .collect(),
        accuracy: col(|m| m.accuracy),
        modes: col(|m| m.modes as f64),
        pearson_logp_reward: col(|m| m.pearson_logp_reward),
        uniqueness: col(|m| m.uniqueness),
        topk_mean: col(|m| m.topk_mean),
        mean_loss: col(|m| m.mean_loss),
        reward_calls: col(|m| m.reward_calls as f64),
        exact_accuracy: ecol(|e| e.accuracy),
        exact_pearson_logp_reward: ecol(|e| e.pearson_logp_reward),
        exact_l1_to_target: ecol(|e| e.l1_to_target),
    };
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
