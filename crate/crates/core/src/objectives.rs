//! Trajectory balance, detailed balance and MaxEnt losses with analytic
//! gradients.
//!
//! * TB: `(log Z + sum log P_F - log R(x) - sum log P_B)^2` per trajectory.
//! * DB: `(log F(s) + log P_F(s'|s) - log F(s') - log P_B(s|s'))^2` per edge,
//!   with `F(x) := R(x)` at terminals; summed over a trajectory's edges.
//! * MaxEnt: TB with `P_B` fixed to uniform over parents.
//!
//! Batches are reduced by the arithmetic mean. On append-only environments
//! every state has one parent, so `log P_B = 0` and the backward network
//! (when learned) receives identically zero gradient.

use alloc::vec::Vec;

use crate::env::{ActionId, EnvSpec, State, Trajectory};
use crate::policy::{PolicyParams, Tape};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Tb,
    Db,
    MaxEnt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub grads: PolicyParams,
    pub batch_size: usize,
}

/// One edge `parent -> child`; `reward` is set iff `child` is terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub parent: State,
    pub child: State,
    pub action: ActionId,
    pub reward: Option<f64>,
}

impl Transition {
    /// The `t`-th edge of a trajectory.
    pub fn of(traj: &Trajectory, t: usize) -> Self {
        let child = traj.state(t + 1);
        let reward = child.is_terminal().then(|| traj.reward());
        Self {
            parent: traj.state(t),
            child,
            action: ActionId::new(u32::from(traj.tokens()[t])),
            reward,
        }
    }
}

/// `log Z + sum log P_F - log R - sum log P_B`; the TB loss is its square.
pub fn tb_residual(log_z: f64, sum_logpf: f64, log_reward: f64, sum_logpb: f64) -> f64 {
    log_z + sum_logpf - log_reward - sum_logpb
}

/// `log F(s) + log P_F(s'|s) - log F(s') - log P_B(s|s')`; the DB edge loss
/// is its square.
pub fn db_residual(log_flow: f64, logpf: f64, log_flow_next: f64, logpb: f64) -> f64 {
    log_flow + logpf - log_flow_next - logpb
}

fn log_reward(r: f64) -> Result<f64> {
    if r > 0.0 && r.is_finite() {
        Ok(libm::log(r))
    } else {
        Err(Error::NonPositiveReward(r))
    }
}

fn backward_logprob_for(params: &PolicyParams, env: &EnvSpec, kind: ObjectiveKind, child: &State) -> Result<f64> {
    match kind {
        // uniform over the single parent
        ObjectiveKind::MaxEnt => {
            child.parent().ok_or(Error::InitialStateQuery)?;
            Ok(0.0)
        }
        ObjectiveKind::Tb | ObjectiveKind::Db => params.backward_logprob(env, child),
    }
}

/// d/d logits of `log softmax(logits)[a]`, scaled: `scale * (onehot(a) - p)`.
fn logit_grad(logp: &[f64], action: usize, scale: f64) -> Vec<f64> {
    logp.iter()
        .enumerate()
        .map(|(i, lp)| scale * (f64::from(u8::from(i == action)) - libm::exp(*lp)))
        .collect()
}

fn tb_accumulate(
    params: &PolicyParams,
    env: &EnvSpec,
    kind: ObjectiveKind,
    traj: &Trajectory,
    scale: f64,
    grads: Option<&mut PolicyParams>,
) -> Result<f64> {
    let log_r = log_reward(traj.reward())?;
    let mut steps: Vec<(Tape, Vec<f64>)> = Vec::with_capacity(traj.len());
    let mut sum_pf = 0.0;
    let mut sum_pb = 0.0;
    for t in 0..traj.len() {
        let s = traj.state(t);
        let (tape, logp) = params.forward_tape(env, &s)?;
        sum_pf += logp[usize::from(traj.tokens()[t])];
        sum_pb += backward_logprob_for(params, env, kind, &traj.state(t + 1))?;
        steps.push((tape, logp));
    }
    let delta = tb_residual(params.log_z(), sum_pf, log_r, sum_pb);
    if let Some(g) = grads {
        let d = scale * 2.0 * delta;
        *g.log_z_mut() += d;
        for (t, (tape, logp)) in steps.iter().enumerate() {
            let dl = logit_grad(logp, usize::from(traj.tokens()[t]), d);
            params.forward_net().backward(tape, &dl, g.forward_net_mut());
        }
    }
    Ok(delta * delta)
}

fn db_accumulate(
    params: &PolicyParams,
    env: &EnvSpec,
    traj: &Trajectory,
    scale: f64,
    grads: Option<&mut PolicyParams>,
) -> Result<f64> {
    let log_r = log_reward(traj.reward())?;
    let l = traj.len();
    let mut flows: Vec<(Tape, f64)> = Vec::with_capacity(l);
    let mut policy: Vec<(Tape, Vec<f64>)> = Vec::with_capacity(l);
    for t in 0..l {
        let s = traj.state(t);
        let ft = params.flow_tape(env, &s);
        let lf = ft.output()[0];
        flows.push((ft, lf));
        policy.push(params.forward_tape(env, &s)?);
    }
    let mut deltas = Vec::with_capacity(l);
    let mut loss = 0.0;
    for t in 0..l {
        let a = usize::from(traj.tokens()[t]);
        let next = if t + 1 == l { log_r } else { flows[t + 1].1 };
        let logpb = backward_logprob_for(params, env, ObjectiveKind::Db, &traj.state(t + 1))?;
        let delta = db_residual(flows[t].1, policy[t].1[a], next, logpb);
        loss += delta * delta;
        deltas.push(delta);
    }
    if let Some(g) = grads {
        for t in 0..l {
            let a = usize::from(traj.tokens()[t]);
            let d = scale * 2.0 * deltas[t];
            // F(s_t) is the source of edge t and the sink of edge t-1
            let d_flow = if t > 0 { d - scale * 2.0 * deltas[t - 1] } else { d };
            params.flow_net().backward(&flows[t].0, &[d_flow], g.flow_net_mut());
            let dl = logit_grad(&policy[t].1, a, d);
            params.forward_net().backward(&policy[t].0, &dl, g.forward_net_mut());
        }
    }
    Ok(loss)
}

fn accumulate(
    params: &PolicyParams,
    env: &EnvSpec,
    kind: ObjectiveKind,
    traj: &Trajectory,
    scale: f64,
    grads: Option<&mut PolicyParams>,
) -> Result<f64> {
    match kind {
        ObjectiveKind::Tb | ObjectiveKind::MaxEnt => tb_accumulate(params, env, kind, traj, scale, grads),
        ObjectiveKind::Db => db_accumulate(params, env, traj, scale, grads),
    }
}

fn single(params: &PolicyParams, env: &EnvSpec, kind: ObjectiveKind, traj: &Trajectory) -> Result<LossReport> {
    let mut grads = params.zeros_like();
    let loss = accumulate(params, env, kind, traj, 1.0, Some(&mut grads))?;
    Ok(LossReport {
        loss,
        grads,
        batch_size: 1,
    })
}

pub fn tb_loss(params: &PolicyParams, env: &EnvSpec, traj: &Trajectory) -> Result<LossReport> {
    single(params, env, ObjectiveKind::Tb, traj)
}

pub fn maxent_loss(params: &PolicyParams, env: &EnvSpec, traj: &Trajectory) -> Result<LossReport> {
    single(params, env, ObjectiveKind::MaxEnt, traj)
}

/// DB loss summed over every edge of a trajectory.
pub fn db_trajectory_loss(params: &PolicyParams, env: &EnvSpec, traj: &Trajectory) -> Result<LossReport> {
    single(params, env, ObjectiveKind::Db, traj)
}

/// DB loss of a single edge.
pub fn db_loss(params: &PolicyParams, env: &EnvSpec, edge: &Transition) -> Result<LossReport> {
    let (pf_tape, logp) = params.forward_tape(env, &edge.parent)?;
    let a = edge.action.token as usize;
    if edge.child != env.apply_action(&edge.parent, edge.action)? {
        return Err(Error::NotOnTrajectory);
    }
    let flow_tape = params.flow_tape(env, &edge.parent);
    let child_tape = (!edge.child.is_terminal()).then(|| params.flow_tape(env, &edge.child));
    let next = match (&child_tape, edge.reward) {
        (None, Some(r)) => log_reward(r)?,
        (None, None) => return Err(Error::NonTerminalReward),
        (Some(t), _) => t.output()[0],
    };
    let logpb = params.backward_logprob(env, &edge.child)?;
    let delta = db_residual(flow_tape.output()[0], logp[a], next, logpb);
    let mut grads = params.zeros_like();
    let d = 2.0 * delta;
    params.flow_net().backward(&flow_tape, &[d], grads.flow_net_mut());
    if let Some(t) = &child_tape {
        params.flow_net().backward(t, &[-d], grads.flow_net_mut());
    }
    params
        .forward_net()
        .backward(&pf_tape, &logit_grad(&logp, a, d), grads.forward_net_mut());
    Ok(LossReport {
        loss: delta * delta,
        grads,
        batch_size: 1,
    })
}

pub fn trajectory_loss(
    params: &PolicyParams,
    env: &EnvSpec,
    kind: ObjectiveKind,
    traj: &Trajectory,
) -> Result<LossReport> {
    single(params, env, kind, traj)
}

/// Mean loss and mean gradient over a batch.
pub fn batch_loss(
    params: &PolicyParams,
    env: &EnvSpec,
    kind: ObjectiveKind,
    batch: &[Trajectory],
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::LengthMismatch("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for traj in batch {
        loss += accumulate(params, env, kind, traj, scale, Some(&mut grads))?;
    }
    Ok(LossReport {
        loss: loss * scale,
        grads,
        batch_size: batch.len(),
    })
}

/// Mean loss without gradients.
pub fn batch_loss_value(
    params: &PolicyParams,
    env: &EnvSpec,
    kind: ObjectiveKind,
    batch: &[Trajectory],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::LengthMismatch("empty batch"));
    }
    let mut loss = 0.0;
    for traj in batch {
        loss += accumulate(params, env, kind, traj, 1.0, None)?;
    }
    Ok(loss / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{RewardSource, RewardTable};
    use crate::policy::{BackwardMode, PolicyConfig};
    use crate::rng::{stream, Domain};
    use alloc::vec;
    use core::f64::consts::LN_2;

    /// V=2, L=1 with all-zero weights: P_F = 1/2 for both tokens.
    fn tiny() -> (EnvSpec, PolicyParams) {
        let table = RewardTable::from_values(2, 1, vec![0.999, 0.999]).unwrap();
        let env = EnvSpec::new(2, 1, RewardSource::Table(table)).unwrap();
        let cfg = PolicyConfig {
            hidden_units: 4,
            ..PolicyConfig::default()
        };
        let params = PolicyParams::new(&env, &cfg, &mut stream(0, Domain::Test, 0, 0));
        (env, params)
    }

    fn traj(env: &EnvSpec, tokens: Vec<u8>, reward: f64) -> Trajectory {
        let l = tokens.len();
        let lp = -libm::log(env.vocab_size() as f64);
        Trajectory::new(env, tokens, vec![lp; l], vec![0.0; l], reward).unwrap()
    }

    #[test]
    fn tb_balanced_is_zero() {
        // log Z = ln 2, sum log P_F = ln 0.5, R = 1
        let (env, mut p) = tiny();
        p.set_log_z(LN_2);
        let t = traj(&env, vec![1], 1.0);
        let rep = tb_loss(&p, &env, &t).unwrap();
        assert!(rep.loss.abs() < 1e-30);
        assert!(rep
            .grads
            .tensors()
            .iter()
            .all(|(_, g)| g.iter().all(|v| v.abs() < 1e-15)));
    }

    #[test]
    fn tb_off_by_factor_two() {
        let (env, mut p) = tiny();
        p.set_log_z(libm::log(4.0));
        let t = traj(&env, vec![0], 1.0);
        let rep = tb_loss(&p, &env, &t).unwrap();
        assert!((rep.loss - LN_2 * LN_2).abs() < 1e-12);
        assert!((rep.loss - 0.4805).abs() < 1e-4);
        // d/dlogZ (logZ + sum logpf - log R)^2 = 2 * ln 2
        assert!((rep.grads.log_z() - 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn tb_rejects_non_positive_reward() {
        let (env, p) = tiny();
        let t = Trajectory::from_parts(vec![0], vec![-LN_2], vec![0.0], 0.0);
        assert_eq!(tb_loss(&p, &env, &t).unwrap_err(), Error::NonPositiveReward(0.0));
    }

    #[test]
    fn maxent_equals_tb_on_unique_parent_env() {
        let table = RewardTable::from_values(3, 3, (1..=27).map(f64::from).collect()).unwrap();
        let env = EnvSpec::new(3, 3, RewardSource::Table(table)).unwrap();
        let cfg = PolicyConfig {
            hidden_units: 8,
            backward: BackwardMode::Learned,
            zero_output_init: false,
            ..PolicyConfig::default()
        };
        let mut rng = stream(1, Domain::Test, 0, 0);
        let mut p = PolicyParams::new(&env, &cfg, &mut rng);
        p.set_log_z(0.7);
        for _ in 0..5 {
            let t = p.rollout(&env, &mut rng).unwrap();
            let tb = tb_loss(&p, &env, &t).unwrap();
            let me = maxent_loss(&p, &env, &t).unwrap();
            assert_eq!(tb.loss, me.loss);
            assert_eq!(tb.grads, me.grads);
            for (group, g) in me.grads.tensors() {
                if group == crate::policy::TensorGroup::Backward {
                    assert!(g.iter().all(|v| *v == 0.0));
                }
            }
        }
        let balanced = traj(&env, vec![0, 0, 0], 1.0);
        p = PolicyParams::new(
            &env,
            &PolicyConfig {
                hidden_units: 8,
                ..PolicyConfig::default()
            },
            &mut rng,
        );
        p.set_log_z(3.0 * libm::log(3.0));
        assert!(maxent_loss(&p, &env, &balanced).unwrap().loss < 1e-28);
    }

    #[test]
    fn db_residual_hand_cases() {
        // logF(s) = 0, logpf = -ln 2, logF(s') = -ln 2, logpb = 0
        assert_eq!(db_residual(0.0, -LN_2, -LN_2, 0.0), 0.0);
        assert!((db_residual(LN_2, -LN_2, -LN_2, 0.0) - LN_2).abs() < 1e-15);
    }

    #[test]
    fn db_edge_cases() {
        let table = RewardTable::from_values(2, 2, vec![1.0; 4]).unwrap();
        let env = EnvSpec::new(2, 2, RewardSource::Table(table)).unwrap();
        let cfg = PolicyConfig {
            hidden_units: 4,
            ..PolicyConfig::default()
        };
        let mut p = PolicyParams::new(&env, &cfg, &mut stream(0, Domain::Test, 0, 0));
        // zero output weights: log F(s) equals the output bias everywhere
        let set_log_flow = |p: &mut PolicyParams, c: f64| {
            p.flow_net_mut().tensors_mut().last().unwrap()[0] = c;
        };
        let c = 0.3;
        set_log_flow(&mut p, c);
        let edge = Transition {
            parent: env.state(&[1]).unwrap(),
            child: env.state(&[1, 0]).unwrap(),
            action: ActionId::new(0),
            reward: Some(libm::exp(c - LN_2)),
        };
        // R(x) = exp(log F(s) + log P_F), P_B = 1
        assert!(db_loss(&p, &env, &edge).unwrap().loss < 1e-28);
        set_log_flow(&mut p, c + LN_2);
        let doubled = db_loss(&p, &env, &edge).unwrap();
        assert!((doubled.loss - LN_2 * LN_2).abs() < 1e-12);
        assert_eq!(doubled.grads.log_z(), 0.0);

        // inner edge with equal flows on both ends: off by log P_F = -ln 2
        let inner = Transition {
            parent: env.initial_state(),
            child: env.state(&[1]).unwrap(),
            action: ActionId::new(1),
            reward: None,
        };
        assert!((db_loss(&p, &env, &inner).unwrap().loss - LN_2 * LN_2).abs() < 1e-12);
        let missing = Transition {
            reward: None,
            ..edge.clone()
        };
        assert_eq!(db_loss(&p, &env, &missing).unwrap_err(), Error::NonTerminalReward);
        let bad = Transition {
            reward: Some(0.0),
            ..edge
        };
        assert_eq!(db_loss(&p, &env, &bad).unwrap_err(), Error::NonPositiveReward(0.0));
    }

    #[test]
    fn db_trajectory_sums_edges() {
        let table = RewardTable::from_values(2, 3, (1..=8).map(f64::from).collect()).unwrap();
        let env = EnvSpec::new(2, 3, RewardSource::Table(table)).unwrap();
        let cfg = PolicyConfig {
            hidden_units: 6,
            zero_output_init: false,
            ..PolicyConfig::default()
        };
        let mut rng = stream(2, Domain::Test, 0, 0);
        let p = PolicyParams::new(&env, &cfg, &mut rng);
        let t = p.rollout(&env, &mut rng).unwrap();
        let whole = db_trajectory_loss(&p, &env, &t).unwrap();
        let edges: Vec<LossReport> = (0..3)
            .map(|i| db_loss(&p, &env, &Transition::of(&t, i)).unwrap())
            .collect();
        let sum: f64 = edges.iter().map(|e| e.loss).sum();
        assert!((whole.loss - sum).abs() < 1e-12);
        let mut g = p.zeros_like();
        for e in &edges {
            for ((_, acc), (_, v)) in g.tensors_mut().into_iter().zip(e.grads.tensors()) {
                acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            }
        }
        for ((_, a), (_, b)) in g.tensors().iter().zip(whole.grads.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert_eq!(whole.grads.log_z(), 0.0);
    }
}
