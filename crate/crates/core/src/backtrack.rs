//! Reward-guided dynamic backtracking.
//!
//! After a batch of trajectories is sampled, each one is gated with the
//! regret probability `1 - exp(-Tg)`. A gated trajectory is rewound by a
//! number of steps that shrinks as its reward grows, its suffix is resampled
//! from the current forward policy, and a choose rule decides whether the new
//! trajectory replaces the old one:
//!
//! * [`ChooseRule::Reward`]: keep the candidate iff its reward is strictly
//!   higher.
//! * [`ChooseRule::Pearson`]: keep the whole candidate batch iff the Pearson
//!   correlation between `P(x)` and `R(x)` over the batch strictly improves.
//! * [`ChooseRule::MetropolisHastings`]: accept with probability
//!   `min(1, C)`, `C` the reward-weighted ratio of the two post-divergence
//!   segments.
//!
//! [`ls_revise_batch`] is the fixed-depth local-search baseline: rewind a
//! constant `K` steps, refill, filter, and repeat.

use alloc::vec::Vec;

use rand::Rng;

use crate::env::{EnvSpec, State, Trajectory};
use crate::policy::PolicyParams;
use crate::rng::SlotStreams;
use crate::stats::pearson_r;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChooseRule {
    Reward,
    Pearson,
    MetropolisHastings,
}

/// `r -> scale * r + offset`, applied to rewards before the step schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineRescale {
    pub scale: f64,
    pub offset: f64,
}

impl AffineRescale {
    pub fn apply(&self, r: f64) -> f64 {
        self.scale * r + self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktrackConfig {
    /// Regret temperature; trajectories are gated with probability `1 - exp(-tg)`.
    pub tg: f64,
    /// Steps rewound for rewards at or below `t_min`.
    pub s_max: usize,
    /// Steps rewound for rewards at or above `t_max`.
    pub s_min: usize,
    pub t_max: f64,
    pub t_min: f64,
    pub choose: ChooseRule,
    pub schedule_rescale: Option<AffineRescale>,
}

impl Default for BacktrackConfig {
    fn default() -> Self {
        Self {
            tg: 20.0,
            s_max: 6,
            s_min: 2,
            t_max: 5.0,
            t_min: 0.4,
            choose: ChooseRule::Reward,
            schedule_rescale: None,
        }
    }
}

impl BacktrackConfig {
    pub fn validate(&self, seq_len: usize) -> Result<()> {
        if !(self.tg >= 0.0) {
            return Err(Error::InvalidBacktrack("tg must be >= 0"));
        }
        if self.s_min < 1 || self.s_min > self.s_max {
            return Err(Error::InvalidBacktrack("need 1 <= s_min <= s_max"));
        }
        if self.s_max > seq_len {
            return Err(Error::InvalidBacktrack("s_max exceeds the sequence length"));
        }
        if !(self.t_min < self.t_max) {
            return Err(Error::DegenerateThresholds);
        }
        Ok(())
    }
}

pub fn regret_probability(tg: f64) -> f64 {
    -libm::expm1(-tg)
}

/// Whether this trajectory gets a chance to backtrack.
pub fn regret_gate<R: Rng + ?Sized>(cfg: &BacktrackConfig, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u < regret_probability(cfg.tg)
}

/// Number of steps to rewind for a terminal of reward `r`.
///
/// `s_max` at or below `t_min`, `s_min` at or above `t_max`, and the floor
/// of the linear interpolation in between, so the result never increases
/// with the reward.
pub fn dynamic_steps(cfg: &BacktrackConfig, r: f64) -> Result<usize> {
    if !(cfg.t_min < cfg.t_max) {
        return Err(Error::DegenerateThresholds);
    }
    let r = cfg.schedule_rescale.map_or(r, |m| m.apply(r));
    if !(r > cfg.t_min) {
        return Ok(cfg.s_max);
    }
    if r >= cfg.t_max {
        return Ok(cfg.s_min);
    }
    let span = (cfg.s_max - cfg.s_min) as f64;
    let s = libm::floor(cfg.s_max as f64 - span * (r - cfg.t_min) / (cfg.t_max - cfg.t_min));
    Ok((s as usize).clamp(cfg.s_min, cfg.s_max))
}

/// The state `steps` actions before the terminal, along the trajectory's own path.
pub fn rewind(traj: &Trajectory, steps: usize) -> Result<State> {
    if steps == 0 || steps > traj.len() {
        return Err(Error::StepsOutOfRange { steps, len: traj.len() });
    }
    Ok(traj.state(traj.len() - steps))
}

/// Resample the suffix of `traj` after `from`, keeping the shared prefix and
/// its recorded log-probabilities.
pub fn refill<R: Rng + ?Sized>(
    params: &PolicyParams,
    env: &EnvSpec,
    traj: &Trajectory,
    from: &State,
    rng: &mut R,
) -> Result<Trajectory> {
    let k = from.len();
    if k > traj.len() || traj.tokens()[..k] != *from.prefix() {
        return Err(Error::NotOnTrajectory);
    }
    params.extend(
        env,
        traj.tokens()[..k].to_vec(),
        traj.logpf_steps()[..k].to_vec(),
        traj.logpb_steps()[..k].to_vec(),
        rng,
    )
}

/// An original trajectory, its candidate replacement, and the index of the
/// last state they share.
#[derive(Debug, Clone, Copy)]
pub struct ChooseContext<'a> {
    pub original: &'a Trajectory,
    pub candidate: &'a Trajectory,
    pub divergence_index: usize,
}

impl<'a> ChooseContext<'a> {
    pub fn new(original: &'a Trajectory, candidate: &'a Trajectory) -> Result<Self> {
        if original.len() != candidate.len() {
            return Err(Error::LengthMismatch("choose: trajectories differ in length"));
        }
        let divergence_index = original
            .tokens()
            .iter()
            .zip(candidate.tokens())
            .take_while(|(a, b)| a == b)
            .count();
        Ok(Self {
            original,
            candidate,
            divergence_index,
        })
    }
}

pub fn choose_reward(ctx: &ChooseContext<'_>) -> bool {
    ctx.candidate.reward() > ctx.original.reward()
}

/// `log C` for the Metropolis-Hastings rule:
/// `log R(x') + log P_B(x' -> S_d) + log P_F(S_d -> x)
///  - log R(x) - log P_B(x -> S_d) - log P_F(S_d -> x')`.
pub fn mh_log_ratio(ctx: &ChooseContext<'_>) -> f64 {
    let d = ctx.divergence_index;
    let seg = |xs: &[f64]| xs[d..].iter().sum::<f64>();
    let (o, c) = (ctx.original, ctx.candidate);
    libm::log(c.reward()) + seg(c.logpb_steps()) + seg(o.logpf_steps())
        - libm::log(o.reward())
        - seg(o.logpb_steps())
        - seg(c.logpf_steps())
}

/// Accept with probability `min(1, C)`. Always consumes one uniform draw.
pub fn choose_mh<R: Rng + ?Sized>(ctx: &ChooseContext<'_>, rng: &mut R) -> bool {
    let log_c = mh_log_ratio(ctx);
    let u: f64 = rng.random();
    log_c >= 0.0 || libm::log(u) < log_c
}

/// Pearson correlation of `P(x_i)` and `R(x_i)` over a batch, with `P(x_i)`
/// rescaled by the batch maximum (the coefficient ignores the scale).
pub fn batch_pearson(batch: &[Trajectory]) -> Result<f64> {
    let logp: Vec<f64> = batch.iter().map(Trajectory::log_pf_total).collect();
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p: Vec<f64> = logp.iter().map(|l| libm::exp(l - max)).collect();
    let r: Vec<f64> = batch.iter().map(Trajectory::reward).collect();
    pearson_r(&p, &r)
}

/// Accept the candidate batch iff its correlation is strictly higher. An
/// undefined correlation on either side rejects.
pub fn choose_pearson(batch_orig: &[Trajectory], batch_cand: &[Trajectory]) -> Result<bool> {
    if batch_orig.len() != batch_cand.len() || batch_orig.len() < 2 {
        return Err(Error::LengthMismatch(
            "choose_pearson needs equal batches of at least two",
        ));
    }
    match (batch_pearson(batch_orig), batch_pearson(batch_cand)) {
        (Ok(ro), Ok(rc)) => Ok(rc > ro),
        (Err(Error::ConstantVector), _) | (_, Err(Error::ConstantVector)) => Ok(false),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

/// Outcome of revising a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Revision {
    /// The batch after revision, slot-aligned with the input.
    pub batch: Vec<Trajectory>,
    /// Every candidate that was scored, accepted or not.
    pub proposals: Vec<Trajectory>,
    /// Slots whose trajectory was replaced.
    pub accepted: usize,
}

/// One dynamic-backtracking pass over a freshly sampled batch.
pub fn dbgfn_revise_batch<S: SlotStreams>(
    params: &PolicyParams,
    env: &EnvSpec,
    cfg: &BacktrackConfig,
    batch: &[Trajectory],
    streams: &S,
) -> Result<Revision> {
    cfg.validate(env.seq_len())?;
    let mut candidates: Vec<Option<Trajectory>> = Vec::with_capacity(batch.len());
    let mut rngs = Vec::with_capacity(batch.len());
    for (i, orig) in batch.iter().enumerate() {
        let mut rng = streams.slot(i);
        let cand = if regret_gate(cfg, &mut rng) {
            let steps = dynamic_steps(cfg, orig.reward())?;
            let from = rewind(orig, steps)?;
            Some(refill(params, env, orig, &from, &mut rng)?)
        } else {
            None
        };
        candidates.push(cand);
        rngs.push(rng);
    }
    let proposals: Vec<Trajectory> = candidates.iter().flatten().cloned().collect();

    let mut out = batch.to_vec();
    let mut accepted = 0;
    match cfg.choose {
        ChooseRule::Pearson => {
            if proposals.is_empty() {
                return Ok(Revision {
                    batch: out,
                    proposals,
                    accepted,
                });
            }
            let cand_batch: Vec<Trajectory> = batch
                .iter()
                .zip(&candidates)
                .map(|(o, c)| c.as_ref().unwrap_or(o).clone())
                .collect();
            if batch.len() >= 2 && choose_pearson(batch, &cand_batch)? {
                accepted = proposals.len();
                out = cand_batch;
            }
        }
        ChooseRule::Reward | ChooseRule::MetropolisHastings => {
            for ((slot, cand), rng) in out.iter_mut().zip(candidates).zip(rngs.iter_mut()) {
                let Some(cand) = cand else { continue };
                let ctx = ChooseContext::new(slot, &cand)?;
                let keep = match cfg.choose {
                    ChooseRule::Reward => choose_reward(&ctx),
                    _ => choose_mh(&ctx, rng),
                };
                if keep {
                    *slot = cand;
                    accepted += 1;
                }
            }
        }
    }
    Ok(Revision {
        batch: out,
        proposals,
        accepted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsFilter {
    /// Keep the candidate iff its reward is strictly higher.
    Deterministic,
    /// Metropolis-Hastings over the rewound segment.
    Stochastic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsConfig {
    pub k_steps: usize,
    pub iterations: usize,
    pub filter: LsFilter,
}

impl Default for LsConfig {
    fn default() -> Self {
        Self {
            k_steps: 4,
            iterations: 1,
            filter: LsFilter::Deterministic,
        }
    }
}

/// Fixed-depth local search: `iterations` rounds of rewind by `k_steps`,
/// refill, and filter, per slot.
pub fn ls_revise_batch<S: SlotStreams>(
    params: &PolicyParams,
    env: &EnvSpec,
    ls: &LsConfig,
    batch: &[Trajectory],
    streams: &S,
) -> Result<Revision> {
    if ls.k_steps == 0 || ls.k_steps > env.seq_len() {
        return Err(Error::StepsOutOfRange {
            steps: ls.k_steps,
            len: env.seq_len(),
        });
    }
    let mut out = batch.to_vec();
    let mut proposals = Vec::with_capacity(batch.len() * ls.iterations);
    let mut accepted = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        if ls.iterations == 0 {
            break;
        }
        let mut rng = streams.slot(i);
        let mut replaced = false;
        for _ in 0..ls.iterations {
            let from = rewind(slot, ls.k_steps)?;
            let cand = refill(params, env, slot, &from, &mut rng)?;
            let ctx = ChooseContext::new(slot, &cand)?;
            let keep = match ls.filter {
                LsFilter::Deterministic => choose_reward(&ctx),
                LsFilter::Stochastic => choose_mh(&ctx, &mut rng),
            };
            proposals.push(cand.clone());
            if keep {
                *slot = cand;
                replaced = true;
            }
        }
        accepted += usize::from(replaced);
    }
    Ok(Revision {
        batch: out,
        proposals,
        accepted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{MotifParams, MotifReward, RewardSource};
    use crate::policy::PolicyConfig;
    use crate::rng::{stream, Domain, RoundStreams};
    use alloc::vec;
    use core::f64::consts::LN_2;
    use proptest::prelude::*;

    fn table3() -> BacktrackConfig {
        BacktrackConfig {
            s_max: 5,
            s_min: 2,
            t_max: 5.0,
            t_min: 0.4,
            ..BacktrackConfig::default()
        }
    }

    fn motif_env(v: usize, l: usize) -> EnvSpec {
        let m = MotifReward::generate(
            v,
            l,
            &MotifParams {
                count: 3,
                radius_max: 1,
                ..MotifParams::default()
            },
        )
        .unwrap();
        EnvSpec::new(v, l, RewardSource::Motif(m)).unwrap()
    }

    fn policy(env: &EnvSpec, seed: u64) -> PolicyParams {
        let cfg = PolicyConfig {
            hidden_units: 16,
            zero_output_init: false,
            ..PolicyConfig::default()
        };
        PolicyParams::new(env, &cfg, &mut stream(seed, Domain::Test, 0, 0))
    }

    fn traj(tokens: Vec<u8>, logpf: Vec<f64>, reward: f64) -> Trajectory {
        let l = tokens.len();
        Trajectory::from_parts(tokens, logpf, vec![0.0; l], reward)
    }

    #[test]
    fn schedule_hand_values() {
        let cfg = table3();
        assert_eq!(dynamic_steps(&cfg, 0.2).unwrap(), 5);
        assert_eq!(dynamic_steps(&cfg, 6.0).unwrap(), 2);
        assert_eq!(dynamic_steps(&cfg, 2.7).unwrap(), 3);
        assert_eq!(dynamic_steps(&cfg, 0.4).unwrap(), 5);
        assert_eq!(dynamic_steps(&cfg, 5.0).unwrap(), 2);
    }

    #[test]
    fn schedule_rescale_applies_first() {
        let cfg = BacktrackConfig {
            schedule_rescale: Some(AffineRescale {
                scale: 10.0,
                offset: 0.0,
            }),
            ..table3()
        };
        assert_eq!(dynamic_steps(&cfg, 0.6).unwrap(), 2);
    }

    #[test]
    fn degenerate_thresholds_rejected() {
        let cfg = BacktrackConfig {
            t_max: 1.0,
            t_min: 1.0,
            ..table3()
        };
        assert_eq!(dynamic_steps(&cfg, 0.5), Err(Error::DegenerateThresholds));
        assert_eq!(cfg.validate(8), Err(Error::DegenerateThresholds));
        assert!(BacktrackConfig { s_max: 9, ..table3() }.validate(8).is_err());
        assert!(BacktrackConfig { s_min: 0, ..table3() }.validate(8).is_err());
        assert!(BacktrackConfig { tg: -1.0, ..table3() }.validate(8).is_err());
    }

    proptest! {
        #[test]
        fn schedule_is_monotone_and_clamped(
            s_min in 1usize..6, extra in 0usize..6,
            t_min in -2.0f64..3.0, width in 0.01f64..10.0,
            r1 in -5.0f64..20.0, r2 in -5.0f64..20.0,
        ) {
            let cfg = BacktrackConfig { s_min, s_max: s_min + extra, t_min, t_max: t_min + width, ..BacktrackConfig::default() };
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let a = dynamic_steps(&cfg, lo).unwrap();
            let b = dynamic_steps(&cfg, hi).unwrap();
            prop_assert!(a >= b);
            prop_assert!((cfg.s_min..=cfg.s_max).contains(&a));
            prop_assert!((cfg.s_min..=cfg.s_max).contains(&b));
        }
    }

    #[test]
    fn gate_extremes_and_calibration() {
        let mut rng = stream(0, Domain::Test, 0, 0);
        let never = BacktrackConfig { tg: 0.0, ..table3() };
        assert!((0..10_000).all(|_| !regret_gate(&never, &mut rng)));
        let always = BacktrackConfig {
            tg: f64::INFINITY,
            ..table3()
        };
        assert!((0..10_000).all(|_| regret_gate(&always, &mut rng)));
        let half = BacktrackConfig { tg: LN_2, ..table3() };
        let n = 100_000;
        let hits = (0..n).filter(|_| regret_gate(&half, &mut rng)).count();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.005);
    }

    #[test]
    fn rewind_bounds() {
        let t = traj(vec![1, 2, 3, 0], vec![-1.0; 4], 1.0);
        assert!(rewind(&t, 4).unwrap().is_initial());
        assert_eq!(rewind(&t, 1).unwrap().prefix(), &[1, 2, 3]);
        assert_eq!(rewind(&t, 0), Err(Error::StepsOutOfRange { steps: 0, len: 4 }));
        assert!(rewind(&t, 5).is_err());
    }

    #[test]
    fn refill_keeps_prefix() {
        let env = motif_env(4, 6);
        let p = policy(&env, 1);
        let mut rng = stream(1, Domain::Test, 1, 0);
        let t = p.rollout(&env, &mut rng).unwrap();
        for steps in 1..=6 {
            let from = rewind(&t, steps).unwrap();
            let c = refill(&p, &env, &t, &from, &mut rng).unwrap();
            let k = 6 - steps;
            assert_eq!(c.tokens()[..k], t.tokens()[..k]);
            assert_eq!(c.logpf_steps()[..k], t.logpf_steps()[..k]);
            assert_eq!(c.reward(), env.reward(&c.terminal()).unwrap());
            if steps == 1 {
                assert_eq!(c.tokens()[..5], t.tokens()[..5]);
            }
        }
        let elsewhere = env.state(&[(t.tokens()[0] + 1) % 4]).unwrap();
        assert_eq!(refill(&p, &env, &t, &elsewhere, &mut rng), Err(Error::NotOnTrajectory));
    }

    #[test]
    fn reward_choose_is_strict() {
        let o = traj(vec![0, 0], vec![-1.0; 2], 0.5);
        for (r, want) in [(0.9, true), (0.5, false), (0.1, false)] {
            let c = traj(vec![0, 1], vec![-1.0; 2], r);
            assert_eq!(choose_reward(&ChooseContext::new(&o, &c).unwrap()), want);
        }
    }

    #[test]
    fn mh_identical_trajectories_always_accept() {
        let o = traj(vec![0, 1, 2], vec![-0.3, -2.0, -0.1], 0.7);
        let ctx = ChooseContext::new(&o, &o).unwrap();
        assert_eq!(ctx.divergence_index, 3);
        assert_eq!(mh_log_ratio(&ctx), 0.0);
        let mut rng = stream(2, Domain::Test, 0, 0);
        assert!((0..10_000).all(|_| choose_mh(&ctx, &mut rng)));
    }

    #[test]
    fn mh_symmetric_segments() {
        let o = traj(vec![0, 1, 2], vec![-0.3, -0.5, -0.5], 1.0);
        let up = traj(vec![0, 2, 2], vec![-0.3, -0.5, -0.5], 2.0);
        let ctx = ChooseContext::new(&o, &up).unwrap();
        assert_eq!(ctx.divergence_index, 1);
        assert!((mh_log_ratio(&ctx) - LN_2).abs() < 1e-15);
        let mut rng = stream(3, Domain::Test, 0, 0);
        assert!((0..10_000).all(|_| choose_mh(&ctx, &mut rng)));
        let down = traj(vec![0, 2, 2], vec![-0.3, -0.5, -0.5], 0.5);
        let ctx = ChooseContext::new(&o, &down).unwrap();
        let n = 100_000;
        let hits = (0..n).filter(|_| choose_mh(&ctx, &mut rng)).count();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn mh_ratio_uses_post_divergence_segments() {
        // C = R' P_F(S_d -> x) / (R P_F(S_d -> x')) with P_B = 1
        let o = traj(vec![1, 0, 0], vec![-0.2, -1.0, -2.0], 3.0);
        let c = traj(vec![1, 1, 0], vec![-0.2, -0.5, -0.25], 1.5);
        let ctx = ChooseContext::new(&o, &c).unwrap();
        let expected = libm::log(1.5) + (-3.0) - libm::log(3.0) - (-0.75);
        assert!((mh_log_ratio(&ctx) - expected).abs() < 1e-14);
    }

    #[test]
    fn pearson_choose_cases() {
        let mk = |ps: &[f64], rs: &[f64]| -> Vec<Trajectory> {
            ps.iter()
                .zip(rs)
                .map(|(p, r)| traj(vec![0], vec![libm::log(*p)], *r))
                .collect()
        };
        // r = 0 for the original, exactly proportional candidate
        let orig = mk(&[0.1, 0.2, 0.3, 0.2], &[1.0, 2.0, 1.0, 0.0]);
        assert!(batch_pearson(&orig).unwrap().abs() < 1e-12);
        let cand = mk(&[0.1, 0.2, 0.3, 0.4], &[1.0, 2.0, 3.0, 4.0]);
        assert!(choose_pearson(&orig, &cand).unwrap());
        assert!(!choose_pearson(&cand, &cand).unwrap());
        // the 4-point hand case
        let hand = mk(&[0.1, 0.2, 0.3, 0.4], &[1.0, 3.0, 2.0, 4.0]);
        assert!((batch_pearson(&hand).unwrap() - 0.8).abs() < 1e-12);
        assert!(!choose_pearson(&cand, &hand).unwrap());
        let constant = mk(&[0.1, 0.1, 0.1, 0.1], &[1.0, 3.0, 2.0, 4.0]);
        assert!(!choose_pearson(&constant, &cand).unwrap());
        assert!(choose_pearson(&orig[..1], &cand[..1]).is_err());
    }

    #[test]
    fn zero_tg_is_identity() {
        let env = motif_env(4, 6);
        let p = policy(&env, 2);
        let mut rng = stream(4, Domain::Test, 0, 0);
        let batch: Vec<Trajectory> = (0..16).map(|_| p.rollout(&env, &mut rng).unwrap()).collect();
        let cfg = BacktrackConfig {
            tg: 0.0,
            s_max: 5,
            ..BacktrackConfig::default()
        };
        let rev = dbgfn_revise_batch(&p, &env, &cfg, &batch, &RoundStreams::new(0, Domain::Revise, 0)).unwrap();
        assert_eq!(rev.batch, batch);
        assert!(rev.proposals.is_empty());
    }

    #[test]
    fn dbgfn_reward_choose_is_slot_monotone_and_keeps_prefixes() {
        let env = motif_env(4, 6);
        let p = policy(&env, 3);
        let cfg = BacktrackConfig {
            s_max: 5,
            ..BacktrackConfig::default()
        };
        for round in 0..20 {
            let mut rng = stream(5, Domain::Test, round, 0);
            let batch: Vec<Trajectory> = (0..16).map(|_| p.rollout(&env, &mut rng).unwrap()).collect();
            let rev = dbgfn_revise_batch(&p, &env, &cfg, &batch, &RoundStreams::new(5, Domain::Revise, round)).unwrap();
            assert_eq!(rev.batch.len(), batch.len());
            assert_eq!(rev.proposals.len(), batch.len());
            for (o, n) in batch.iter().zip(&rev.batch) {
                assert!(n.reward() >= o.reward());
                let keep = 6 - dynamic_steps(&cfg, o.reward()).unwrap();
                assert_eq!(n.tokens()[..keep], o.tokens()[..keep]);
            }
        }
    }

    #[test]
    fn dbgfn_pearson_and_mh_run() {
        let env = motif_env(4, 6);
        let p = policy(&env, 4);
        let mut rng = stream(6, Domain::Test, 0, 0);
        let batch: Vec<Trajectory> = (0..16).map(|_| p.rollout(&env, &mut rng).unwrap()).collect();
        for choose in [ChooseRule::Pearson, ChooseRule::MetropolisHastings] {
            let cfg = BacktrackConfig {
                s_max: 5,
                choose,
                ..BacktrackConfig::default()
            };
            let streams = RoundStreams::new(6, Domain::Revise, 0);
            let rev = dbgfn_revise_batch(&p, &env, &cfg, &batch, &streams).unwrap();
            assert_eq!(rev.batch.len(), 16);
            assert_eq!(rev, dbgfn_revise_batch(&p, &env, &cfg, &batch, &streams).unwrap());
            if choose == ChooseRule::Pearson {
                assert!(rev.accepted == 0 || rev.accepted == 16);
            }
        }
    }

    #[test]
    fn ls_identity_and_monotone() {
        let env = motif_env(4, 4);
        let p = policy(&env, 7);
        let mut rng = stream(7, Domain::Test, 0, 0);
        let batch: Vec<Trajectory> = (0..16).map(|_| p.rollout(&env, &mut rng).unwrap()).collect();
        let streams = RoundStreams::new(7, Domain::Revise, 0);
        let none = LsConfig {
            iterations: 0,
            ..LsConfig::default()
        };
        assert_eq!(ls_revise_batch(&p, &env, &none, &batch, &streams).unwrap().batch, batch);
        let bad = LsConfig {
            k_steps: 5,
            ..LsConfig::default()
        };
        assert!(matches!(
            ls_revise_batch(&p, &env, &bad, &batch, &streams),
            Err(Error::StepsOutOfRange { .. })
        ));

        // full rewinds climb towards the best reward in the space
        let best = env.all_rewards().unwrap().into_iter().fold(0.0, f64::max);
        let mut prev = batch.clone();
        for iterations in [1, 10, 100, 1000] {
            let ls = LsConfig {
                k_steps: 4,
                iterations,
                filter: LsFilter::Deterministic,
            };
            let out = ls_revise_batch(&p, &env, &ls, &batch, &streams).unwrap().batch;
            for ((a, b), o) in out.iter().zip(&prev).zip(&batch) {
                assert!(a.reward() >= b.reward() && a.reward() >= o.reward() && a.reward() <= best);
            }
            prev = out;
        }
        let mean: f64 = prev.iter().map(Trajectory::reward).sum::<f64>() / prev.len() as f64;
        assert!((mean - best).abs() < 1e-12, "mean {mean} best {best}");
    }
}
