//! The training loop.
//!
//! Each round:
//! 1. sample `batch_size` trajectories from the current policy;
//! 2. optionally revise them (dynamic backtracking or local search);
//! 3. top the batch up with prioritized replay draws;
//! 4. take one Adam step on the mean loss;
//! 5. push the revised batch into the replay buffer.
//!
//! Every `eval_every` rounds a [`MetricsRow`] is computed from
//! `eval_batch` fresh rollouts that are never revised or trained on.
//! Every random draw comes from a stream keyed by `(seed, round, slot)`,
//! so a run is a pure function of its configuration.

use alloc::vec::Vec;

use crate::backtrack::{dbgfn_revise_batch, ls_revise_batch, BacktrackConfig, LsConfig, Revision};
use crate::env::{EnvSpec, Trajectory};
use crate::objectives::{batch_loss, ObjectiveKind};
use crate::oracle::{
    accuracy_from_target, exact_pearson_logp_reward, exact_terminal_probs, l1_to_target, pearson_logp_reward,
    uniqueness, MetricsRow, ModeTracker,
};
use crate::policy::{grad_step, AdamConfig, BackwardMode, OptimizerState, PolicyConfig, PolicyParams};
use crate::replay::ReplayBuffer;
use crate::rng::{stream, Domain, RoundStreams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SearchMode {
    None,
    LocalSearch(LsConfig),
    DbGfn(BacktrackConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayConfig {
    pub enabled: bool,
    pub capacity: usize,
    /// Share of each training batch drawn from replay once the buffer holds
    /// at least one batch.
    pub fraction: f64,
    pub exponent: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            capacity: 5_000,
            fraction: 0.5,
            exponent: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub search: SearchMode,
    pub policy: PolicyConfig,
    pub optimizer: AdamConfig,
    pub replay: ReplayConfig,
    pub batch_size: usize,
    pub rounds: u64,
    pub eval_every: u64,
    pub eval_batch: usize,
    pub seed: u64,
    /// Terminals with reward at or above this count as modes.
    pub mode_threshold: f64,
    pub topk: usize,
    /// Stop once this many training reward evaluations have been spent.
    pub reward_budget: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveKind::Tb,
            search: SearchMode::None,
            policy: PolicyConfig::default(),
            optimizer: AdamConfig::default(),
            replay: ReplayConfig::default(),
            batch_size: 32,
            rounds: 2_000,
            eval_every: 10,
            eval_batch: 128,
            seed: 0,
            mode_threshold: 1.0,
            topk: 100,
            reward_budget: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, env: &EnvSpec) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive"));
        }
        if self.eval_every == 0 || self.eval_batch == 0 {
            return Err(Error::InvalidConfig("eval_every and eval_batch must be positive"));
        }
        if !(0.0..1.0).contains(&self.replay.fraction) {
            return Err(Error::InvalidConfig("replay fraction must lie in [0, 1)"));
        }
        if self.topk == 0 {
            return Err(Error::InvalidConfig("topk must be positive"));
        }
        if self.policy.hidden_units == 0 {
            return Err(Error::InvalidConfig("hidden_units must be positive"));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.log_z_lr() > 0.0) {
            return Err(Error::InvalidConfig("learning rates must be positive"));
        }
        match &self.search {
            SearchMode::None => Ok(()),
            SearchMode::DbGfn(b) => b.validate(env.seq_len()),
            SearchMode::LocalSearch(ls) if ls.k_steps == 0 || ls.k_steps > env.seq_len() => {
                Err(Error::StepsOutOfRange {
                    steps: ls.k_steps,
                    len: env.seq_len(),
                })
            }
            SearchMode::LocalSearch(_) => Ok(()),
        }
    }

    fn replay_draws(&self) -> usize {
        let f = self.replay.fraction;
        libm::round(self.batch_size as f64 * f / (1.0 - f)) as usize
    }
}

/// Counters accumulated over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainStats {
    pub rounds: u64,
    /// Reward evaluations spent by training (rollouts and revision candidates).
    pub reward_calls: u64,
    /// Reward evaluations spent on evaluation rollouts.
    pub eval_reward_calls: u64,
    pub proposals: u64,
    pub accepted: u64,
    /// Revised slots whose reward went down.
    pub slot_reward_decreases: u64,
}

/// Diagnostics available only when the terminal space can be enumerated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactReport {
    pub accuracy: f64,
    pub pearson_logp_reward: f64,
    pub l1_to_target: f64,
    pub log_z: f64,
    pub partition_log: f64,
}

pub fn exact_report(params: &PolicyParams, env: &EnvSpec) -> Result<ExactReport> {
    let dist = exact_terminal_probs(params, env)?;
    let rewards = env.all_rewards()?;
    let target = env.reward_moments()?.target_mean();
    Ok(ExactReport {
        accuracy: accuracy_from_target(dist.expected_reward(&rewards), target),
        pearson_logp_reward: exact_pearson_logp_reward(&dist, env)?,
        l1_to_target: l1_to_target(&dist, env)?,
        log_z: params.log_z(),
        partition_log: dist.partition_log,
    })
}

pub struct Trainer {
    env: EnvSpec,
    cfg: TrainConfig,
    params: PolicyParams,
    opt: OptimizerState,
    replay: Option<ReplayBuffer>,
    tracker: ModeTracker,
    target_mean: Option<f64>,
    round: u64,
    stats: TrainStats,
    pending_loss: (f64, u64),
}

impl Trainer {
    pub fn new(env: EnvSpec, mut cfg: TrainConfig) -> Result<Self> {
        cfg.validate(&env)?;
        if cfg.objective == ObjectiveKind::MaxEnt {
            cfg.policy.backward = BackwardMode::Uniform;
        }
        let params = PolicyParams::new(&env, &cfg.policy, &mut stream(cfg.seed, Domain::Init, 0, 0));
        let opt = OptimizerState::new(&params, cfg.optimizer.clone());
        let replay = if cfg.replay.enabled {
            Some(ReplayBuffer::new(cfg.replay.capacity, cfg.replay.exponent)?)
        } else {
            None
        };
        let target_mean = match env.reward_moments() {
            Ok(m) => Some(m.target_mean()),
            Err(Error::SpaceTooLarge { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            tracker: ModeTracker::new(cfg.mode_threshold),
            env,
            cfg,
            params,
            opt,
            replay,
            target_mean,
            round: 0,
            stats: TrainStats::default(),
            pending_loss: (0.0, 0),
        })
    }

    pub fn env(&self) -> &EnvSpec {
        &self.env
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    /// Replace the parameters, e.g. from a checkpoint. Optimizer moments reset.
    pub fn set_params(&mut self, params: PolicyParams) -> Result<()> {
        if params.tensor_infos() != self.params.tensor_infos() {
            return Err(Error::ShapeMismatch("parameters do not match the configured policy"));
        }
        self.opt = OptimizerState::new(&params, self.cfg.optimizer.clone());
        self.params = params;
        Ok(())
    }

    pub fn stats(&self) -> TrainStats {
        self.stats
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn modes(&self) -> &ModeTracker {
        &self.tracker
    }

    fn budget_exhausted(&self) -> bool {
        self.cfg.reward_budget.is_some_and(|b| self.stats.reward_calls >= b)
    }

    pub fn is_done(&self) -> bool {
        self.round >= self.cfg.rounds || self.budget_exhausted()
    }

    fn observe(&mut self, trajs: &[Trajectory]) {
        for t in trajs {
            let idx = self.env.index_of_tokens(t.tokens());
            self.tracker.observe(idx, t.reward());
        }
        self.stats.reward_calls += trajs.len() as u64;
    }

    /// Sample and revise one batch without updating the policy.
    pub fn sample_batch(&mut self, round: u64) -> Result<Revision> {
        let rollouts = RoundStreams::new(self.cfg.seed, Domain::Rollout, round);
        let batch: Vec<Trajectory> = (0..self.cfg.batch_size)
            .map(|slot| {
                self.params
                    .rollout(&self.env, &mut crate::rng::SlotStreams::slot(&rollouts, slot))
            })
            .collect::<Result<_>>()?;
        self.observe(&batch);
        let streams = RoundStreams::new(self.cfg.seed, Domain::Revise, round);
        let revision = match &self.cfg.search {
            SearchMode::None => Revision {
                batch: batch.clone(),
                proposals: Vec::new(),
                accepted: 0,
            },
            SearchMode::DbGfn(b) => dbgfn_revise_batch(&self.params, &self.env, b, &batch, &streams)?,
            SearchMode::LocalSearch(ls) => ls_revise_batch(&self.params, &self.env, ls, &batch, &streams)?,
        };
        self.observe(&revision.proposals);
        self.stats.proposals += revision.proposals.len() as u64;
        self.stats.accepted += revision.accepted as u64;
        self.stats.slot_reward_decreases += batch
            .iter()
            .zip(&revision.batch)
            .filter(|(o, n)| n.reward() < o.reward())
            .count() as u64;
        Ok(revision)
    }

    /// Run one training round. Returns a metrics row on evaluation rounds.
    pub fn step(&mut self) -> Result<Option<MetricsRow>> {
        let round = self.round + 1;
        let revision = self.sample_batch(round)?;
        let mut train = revision.batch;
        if let Some(replay) = &self.replay {
            if replay.len() >= self.cfg.batch_size {
                let mut rng = stream(self.cfg.seed, Domain::Replay, round, 0);
                let extra = replay.sample(self.cfg.replay_draws(), &mut rng)?;
                let fresh = train.clone();
                train.extend(extra);
                self.replay.as_mut().expect("replay enabled").extend(fresh);
            } else {
                let fresh = train.clone();
                self.replay.as_mut().expect("replay enabled").extend(fresh);
            }
        }
        let report = batch_loss(&self.params, &self.env, self.cfg.objective, &train)?;
        grad_step(&mut self.params, &mut self.opt, &report.grads)?;
        self.pending_loss.0 += report.loss;
        self.pending_loss.1 += 1;
        self.round = round;
        self.stats.rounds = round;
        if round % self.cfg.eval_every == 0 {
            return self.evaluate().map(Some);
        }
        Ok(None)
    }

    /// Fresh, unrevised rollouts scored without touching the policy.
    pub fn evaluate(&mut self) -> Result<MetricsRow> {
        let streams = RoundStreams::new(self.cfg.seed, Domain::Eval, self.round);
        let samples: Vec<Trajectory> = (0..self.cfg.eval_batch)
            .map(|slot| {
                self.params
                    .rollout(&self.env, &mut crate::rng::SlotStreams::slot(&streams, slot))
            })
            .collect::<Result<_>>()?;
        self.stats.eval_reward_calls += samples.len() as u64;
        let rewards: Vec<f64> = samples.iter().map(Trajectory::reward).collect();
        let logp: Vec<f64> = samples.iter().map(Trajectory::log_pf_total).collect();
        let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let keyed: Vec<(u64, f64)> = samples
            .iter()
            .map(|t| (self.env.index_of_tokens(t.tokens()), t.reward()))
            .collect();
        let pearson = if samples.len() >= 2 {
            pearson_logp_reward(&logp, &rewards)?
        } else {
            0.0
        };
        let (loss_sum, loss_n) = core::mem::take(&mut self.pending_loss);
        Ok(MetricsRow {
            round: self.round,
            accuracy: self
                .target_mean
                .map_or(f64::NAN, |t| accuracy_from_target(mean_reward, t)),
            modes: self.tracker.modes() as u64,
            pearson_logp_reward: pearson,
            uniqueness: uniqueness(&keyed, self.cfg.mode_threshold),
            topk_mean: self.tracker.topk_mean(self.cfg.topk),
            mean_loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 },
            reward_calls: self.stats.reward_calls,
        })
    }

    /// Train until `rounds` or the reward budget is exhausted.
    pub fn run(&mut self, mut on_row: impl FnMut(&MetricsRow)) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        while !self.is_done() {
            if let Some(row) = self.step()? {
                on_row(&row);
                rows.push(row);
            }
        }
        Ok(rows)
    }

    pub fn exact_report(&self) -> Result<ExactReport> {
        exact_report(&self.params, &self.env)
    }
}
