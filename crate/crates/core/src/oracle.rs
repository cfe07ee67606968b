//! Exact terminal distributions and evaluation metrics.
//!
//! On an append-only environment each terminal has exactly one trajectory,
//! so `log P_theta(x)` is the sum of forward log-probabilities along its
//! prefix path. [`exact_terminal_probs`] walks the prefix tree depth-first
//! and evaluates the policy once per internal node.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::env::EnvSpec;
use crate::policy::PolicyParams;
use crate::stats::{log_sum_exp, pearson_r};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    /// `log P_theta(x)` indexed by lexicographic terminal index.
    pub terminal_logprobs: Vec<f64>,
    /// `log sum_x R(x)`.
    pub partition_log: f64,
}

impl ExactDistribution {
    pub fn probs(&self) -> impl Iterator<Item = f64> + '_ {
        self.terminal_logprobs.iter().map(|l| libm::exp(*l))
    }

    /// `log sum_x P(x)`; zero up to rounding.
    pub fn log_total(&self) -> f64 {
        log_sum_exp(&self.terminal_logprobs)
    }

    /// `E_{P_theta}[R]` given rewards in the same order.
    pub fn expected_reward(&self, rewards: &[f64]) -> f64 {
        self.probs().zip(rewards).map(|(p, r)| p * r).sum()
    }
}

pub fn exact_terminal_probs(params: &PolicyParams, env: &EnvSpec) -> Result<ExactDistribution> {
    env.check_enumerable()?;
    let n = env.num_terminals() as usize;
    let mut terminal_logprobs = Vec::with_capacity(n);
    // depth-first over prefixes; `stack` holds (prefix, log P(prefix))
    let mut stack: Vec<(Vec<u8>, f64)> = alloc::vec![(Vec::new(), 0.0)];
    while let Some((prefix, lp)) = stack.pop() {
        if prefix.len() == env.seq_len() {
            terminal_logprobs.push(lp);
            continue;
        }
        let logp = params.forward_logprobs(env, &env.state(&prefix)?)?;
        // push in reverse so the smallest token is expanded first
        for (tok, l) in logp.iter().enumerate().rev() {
            let mut child = prefix.clone();
            child.push(tok as u8);
            stack.push((child, lp + l));
        }
    }
    let moments = env.reward_moments()?;
    Ok(ExactDistribution {
        terminal_logprobs,
        partition_log: libm::log(moments.sum),
    })
}

/// `min(sampled_mean / target_mean, 1)`.
pub fn accuracy_from_target(mean_sampled_reward: f64, target_mean: f64) -> f64 {
    (mean_sampled_reward / target_mean).min(1.0)
}

/// Accuracy of a sampled mean reward against `E_{p'}[R] = sum R^2 / sum R`.
pub fn accuracy(mean_sampled_reward: f64, env: &EnvSpec) -> Result<f64> {
    let m = env.reward_moments()?;
    Ok(accuracy_from_target(mean_sampled_reward, m.target_mean()))
}

/// Pearson correlation between `log P(x)` and `R(x)`. Undefined correlations
/// (constant `log P` or constant rewards) are reported as 0.
pub fn pearson_logp_reward(logp: &[f64], rewards: &[f64]) -> Result<f64> {
    match pearson_r(logp, rewards) {
        Err(Error::ConstantVector) => Ok(0.0),
        other => other,
    }
}

/// Correlation over every terminal of an enumerable environment.
pub fn exact_pearson_logp_reward(dist: &ExactDistribution, env: &EnvSpec) -> Result<f64> {
    let rewards = env.all_rewards()?;
    pearson_logp_reward(&dist.terminal_logprobs, &rewards)
}

/// `sum_x |P_theta(x) - R(x) / sum R|`, in `[0, 2]`.
pub fn l1_to_target(dist: &ExactDistribution, env: &EnvSpec) -> Result<f64> {
    let rewards = env.all_rewards()?;
    if rewards.len() != dist.terminal_logprobs.len() {
        return Err(Error::LengthMismatch("distribution does not cover the environment"));
    }
    let z: f64 = rewards.iter().sum();
    Ok(dist.probs().zip(&rewards).map(|(p, r)| (p - r / z).abs()).sum())
}

/// Distinct terminals seen so far with their rewards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModeTracker {
    threshold: f64,
    seen: BTreeMap<u64, f64>,
    modes: usize,
}

impl ModeTracker {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            seen: BTreeMap::new(),
            modes: 0,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn observe(&mut self, terminal: u64, reward: f64) {
        if self.seen.insert(terminal, reward).is_none() && reward >= self.threshold {
            self.modes += 1;
        }
    }

    /// Distinct terminals seen with reward at or above the threshold.
    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn distinct(&self) -> usize {
        self.seen.len()
    }

    /// Mean reward of the `k` best distinct terminals (all of them if fewer).
    pub fn topk_mean(&self, k: usize) -> f64 {
        let mut rewards: Vec<f64> = self.seen.values().copied().collect();
        rewards.sort_by(|a, b| b.total_cmp(a));
        rewards.truncate(k);
        if rewards.is_empty() {
            return 0.0;
        }
        rewards.iter().sum::<f64>() / rewards.len() as f64
    }
}

/// Distinct above-threshold terminals over all above-threshold samples in
/// `batch`; 1 when nothing clears the threshold.
pub fn uniqueness(batch: &[(u64, f64)], threshold: f64) -> f64 {
    let above: Vec<u64> = batch.iter().filter(|(_, r)| *r >= threshold).map(|(x, _)| *x).collect();
    if above.is_empty() {
        return 1.0;
    }
    let mut distinct = above.clone();
    distinct.sort_unstable();
    distinct.dedup();
    distinct.len() as f64 / above.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeMetrics {
    pub modes: usize,
    pub uniqueness: f64,
    pub topk_mean: f64,
}

/// Mode count and top-k mean from the cumulative tracker, uniqueness from
/// the evaluation batch.
pub fn mode_metrics(discovered: &ModeTracker, eval_batch: &[(u64, f64)], k: usize) -> ModeMetrics {
    ModeMetrics {
        modes: discovered.modes(),
        uniqueness: uniqueness(eval_batch, discovered.threshold()),
        topk_mean: discovered.topk_mean(k),
    }
}

/// One evaluation snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: u64,
    pub accuracy: f64,
    pub modes: u64,
    pub pearson_logp_reward: f64,
    pub uniqueness: f64,
    pub topk_mean: f64,
    pub mean_loss: f64,
    pub reward_calls: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{RewardSource, RewardTable, SeparableParams, SeparableReward};
    use crate::policy::PolicyConfig;
    use crate::rng::{stream, Domain};
    use alloc::vec;

    fn env(v: usize, l: usize) -> EnvSpec {
        let s = SeparableReward::generate(v, l, &SeparableParams::default()).unwrap();
        EnvSpec::new(v, l, RewardSource::Separable(s)).unwrap()
    }

    #[test]
    fn uniform_policy_small_space() {
        let e = env(2, 2);
        let p = PolicyParams::new(
            &e,
            &PolicyConfig {
                hidden_units: 4,
                ..PolicyConfig::default()
            },
            &mut stream(0, Domain::Test, 0, 0),
        );
        let d = exact_terminal_probs(&p, &e).unwrap();
        assert_eq!(d.terminal_logprobs.len(), 4);
        for prob in d.probs() {
            assert!((prob - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_probs_match_trajectory_logprobs() {
        let e = env(3, 4);
        let cfg = PolicyConfig {
            hidden_units: 8,
            zero_output_init: false,
            ..PolicyConfig::default()
        };
        let mut rng = stream(1, Domain::Test, 0, 0);
        let p = PolicyParams::new(&e, &cfg, &mut rng);
        let d = exact_terminal_probs(&p, &e).unwrap();
        assert!((d.probs().sum::<f64>() - 1.0).abs() < 1e-9);
        for _ in 0..20 {
            let t = p.rollout(&e, &mut rng).unwrap();
            let idx = e.terminal_index(&t.terminal()).unwrap() as usize;
            assert!((d.terminal_logprobs[idx] - t.log_pf_total()).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy_from_target(0.3, 0.6), 0.5);
        assert_eq!(accuracy_from_target(0.9, 0.6), 1.0);
        let e = env(2, 3);
        let m = e.reward_moments().unwrap();
        assert_eq!(accuracy(m.sum_sq / m.sum, &e).unwrap(), 1.0);
    }

    #[test]
    fn pearson_conventions() {
        let r = [1.0, 2.0, 5.0];
        let affine: Vec<f64> = r.iter().map(|x| 0.5 * x - 3.0).collect();
        assert!((pearson_logp_reward(&affine, &r).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pearson_logp_reward(&[-1.0; 3], &r).unwrap(), 0.0);
        assert!((pearson_logp_reward(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn mode_metrics_cases() {
        let mut t = ModeTracker::new(0.5);
        let batch = [(0u64, 0.9), (0, 0.9), (1, 0.2)];
        for (x, r) in batch {
            t.observe(x, r);
        }
        let m = mode_metrics(&t, &batch, 100);
        assert_eq!(m.modes, 1);
        assert_eq!(m.uniqueness, 0.5);
        assert_eq!(uniqueness(&[(3, 0.1)], 0.5), 1.0);
        let mut t = ModeTracker::new(0.5);
        for (x, r) in [(0, 0.9), (1, 0.7), (2, 0.2), (1, 0.7)] {
            t.observe(x, r);
        }
        assert!((t.topk_mean(2) - 0.8).abs() < 1e-15);
        assert_eq!(t.modes(), 2);
    }

    #[test]
    fn l1_cases() {
        // R proportional to (0.9, 1/30, 1/30, 1/30) against a uniform policy
        let table = RewardTable::from_values(
            4,
            1,
            vec![0.9 - 0.001, 0.1 / 3.0 - 0.001, 0.1 / 3.0 - 0.001, 0.1 / 3.0 - 0.001],
        )
        .unwrap();
        let e = EnvSpec::new(4, 1, RewardSource::Table(table)).unwrap();
        let p = PolicyParams::new(
            &e,
            &PolicyConfig {
                hidden_units: 4,
                ..PolicyConfig::default()
            },
            &mut stream(0, Domain::Test, 0, 0),
        );
        let d = exact_terminal_probs(&p, &e).unwrap();
        assert!((l1_to_target(&d, &e).unwrap() - 1.3).abs() < 1e-12);
        let exact = ExactDistribution {
            terminal_logprobs: vec![
                libm::log(0.9),
                libm::log(0.1 / 3.0),
                libm::log(0.1 / 3.0),
                libm::log(0.1 / 3.0),
            ],
            partition_log: 0.0,
        };
        assert!(l1_to_target(&exact, &e).unwrap() < 1e-12);
    }
}
