//! Learnable quantities: forward policy `P_F`, backward policy `P_B`, the
//! state-flow head `log F(s)` and the scalar `log Z`.
//!
//! States are encoded as a positional one-hot of the filled tokens (`L * V`
//! entries, unfilled positions all zero) followed by a one-hot of the current
//! length (`L + 1` entries).

mod adam;
mod gradcheck;
mod mlp;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

pub use adam::{grad_step, AdamConfig, OptimizerState};
pub use gradcheck::gradient_check;
pub use mlp::{Dense, Mlp, Tape};

use crate::env::{ActionId, EnvSpec, State, Trajectory};
use crate::stats::log_softmax;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardMode {
    /// `P_B` is uniform over parents.
    Uniform,
    /// `P_B` is a softmax over per-parent logits from a network.
    Learned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub backward: BackwardMode,
    /// Start the forward policy's output layer at zero (uniform initial policy).
    pub zero_output_init: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden_units: 256,
            hidden_layers: 2,
            backward: BackwardMode::Uniform,
            zero_output_init: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackwardPolicy {
    Uniform,
    /// Network scoring each candidate parent; one output logit per parent.
    Learned(Mlp),
}

/// Which optimizer group a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorGroup {
    Forward,
    Backward,
    Flow,
    LogZ,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub group: TensorGroup,
    pub shape: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab_size: usize,
    seq_len: usize,
    forward: Mlp,
    backward: BackwardPolicy,
    flow: Mlp,
    log_z: f64,
}

pub fn input_dim(env: &EnvSpec) -> usize {
    env.seq_len() * env.vocab_size() + env.seq_len() + 1
}

fn encode_prefix(vocab_size: usize, seq_len: usize, prefix: &[u8]) -> Vec<usize> {
    let mut active: Vec<usize> = prefix
        .iter()
        .enumerate()
        .map(|(i, &t)| i * vocab_size + usize::from(t))
        .collect();
    active.push(seq_len * vocab_size + prefix.len());
    active
}

/// Active (value 1) input indices of a state's encoding.
pub fn encode_state(env: &EnvSpec, s: &State) -> Vec<usize> {
    encode_prefix(env.vocab_size(), env.seq_len(), s.prefix())
}

impl PolicyParams {
    pub fn new<R: Rng + ?Sized>(env: &EnvSpec, cfg: &PolicyConfig, rng: &mut R) -> Self {
        let sizes = |out: usize| {
            let mut s = Vec::with_capacity(cfg.hidden_layers + 2);
            s.push(input_dim(env));
            s.extend(core::iter::repeat_n(cfg.hidden_units, cfg.hidden_layers));
            s.push(out);
            s
        };
        let forward = Mlp::random(&sizes(env.vocab_size()), cfg.zero_output_init, rng);
        let backward = match cfg.backward {
            BackwardMode::Uniform => BackwardPolicy::Uniform,
            BackwardMode::Learned => BackwardPolicy::Learned(Mlp::random(&sizes(1), cfg.zero_output_init, rng)),
        };
        let flow = Mlp::random(&sizes(1), cfg.zero_output_init, rng);
        Self {
            vocab_size: env.vocab_size(),
            seq_len: env.seq_len(),
            forward,
            backward,
            flow,
            log_z: 0.0,
        }
    }

    /// All-zero parameters with the same shapes, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            vocab_size: self.vocab_size,
            seq_len: self.seq_len,
            forward: self.forward.zeros_like(),
            backward: match &self.backward {
                BackwardPolicy::Uniform => BackwardPolicy::Uniform,
                BackwardPolicy::Learned(m) => BackwardPolicy::Learned(m.zeros_like()),
            },
            flow: self.flow.zeros_like(),
            log_z: 0.0,
        }
    }

    pub fn forward_net(&self) -> &Mlp {
        &self.forward
    }

    pub fn backward_policy(&self) -> &BackwardPolicy {
        &self.backward
    }

    pub fn flow_net(&self) -> &Mlp {
        &self.flow
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn set_log_z(&mut self, log_z: f64) {
        self.log_z = log_z;
    }

    pub(crate) fn forward_net_mut(&mut self) -> &mut Mlp {
        &mut self.forward
    }

    pub(crate) fn flow_net_mut(&mut self) -> &mut Mlp {
        &mut self.flow
    }

    pub(crate) fn log_z_mut(&mut self) -> &mut f64 {
        &mut self.log_z
    }

    fn check_env(&self, env: &EnvSpec) -> Result<()> {
        if env.vocab_size() != self.vocab_size || env.seq_len() != self.seq_len {
            return Err(Error::ShapeMismatch("policy was built for a different environment"));
        }
        Ok(())
    }

    /// Forward pass at a non-terminal state: the tape and the log-softmax.
    pub(crate) fn forward_tape(&self, env: &EnvSpec, s: &State) -> Result<(Tape, Vec<f64>)> {
        self.check_env(env)?;
        if s.is_terminal() {
            return Err(Error::TerminalStateQuery);
        }
        let tape = self.forward.forward(&encode_state(env, s));
        let logp = log_softmax(tape.output());
        Ok((tape, logp))
    }

    pub(crate) fn flow_tape(&self, env: &EnvSpec, s: &State) -> Tape {
        self.flow.forward(&encode_state(env, s))
    }

    /// `log P_F(. | s)` over the `V` append actions.
    pub fn forward_logprobs(&self, env: &EnvSpec, s: &State) -> Result<Vec<f64>> {
        Ok(self.forward_tape(env, s)?.1)
    }

    /// `log P_B(parent | s_child)`. Append-only states have a single parent,
    /// so this is `log 1 = 0` in either backward mode.
    pub fn backward_logprob(&self, env: &EnvSpec, s_child: &State) -> Result<f64> {
        self.check_env(env)?;
        let parent = s_child.parent().ok_or(Error::InitialStateQuery)?;
        let parents = [parent];
        match &self.backward {
            BackwardPolicy::Uniform => Ok(-libm::log(parents.len() as f64)),
            BackwardPolicy::Learned(net) => {
                // one logit per candidate parent, scored from the child
                let logits: Vec<f64> = parents
                    .iter()
                    .map(|_| net.forward(&encode_state(env, s_child)).output()[0])
                    .collect();
                Ok(log_softmax(&logits)[0])
            }
        }
    }

    /// `log F_theta(s)` from the flow head.
    pub fn log_flow(&self, env: &EnvSpec, s: &State) -> Result<f64> {
        self.check_env(env)?;
        Ok(self.flow_tape(env, s).output()[0])
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, env: &EnvSpec, s: &State, rng: &mut R) -> Result<(ActionId, f64)> {
        let logp = self.forward_logprobs(env, s)?;
        let token = sample_index(&logp, rng);
        Ok((ActionId::new(token as u32), logp[token]))
    }

    /// Sample a full trajectory from the initial state.
    pub fn rollout<R: Rng + ?Sized>(&self, env: &EnvSpec, rng: &mut R) -> Result<Trajectory> {
        self.extend(env, Vec::new(), Vec::new(), Vec::new(), rng)
    }

    /// Continue sampling from a prefix whose per-step log-probabilities are
    /// already known, then score the terminal.
    pub(crate) fn extend<R: Rng + ?Sized>(
        &self,
        env: &EnvSpec,
        mut tokens: Vec<u8>,
        mut logpf: Vec<f64>,
        mut logpb: Vec<f64>,
        rng: &mut R,
    ) -> Result<Trajectory> {
        let mut s = env.state(&tokens)?;
        while !s.is_terminal() {
            let (a, lp) = self.sample_action(env, &s, rng)?;
            let child = env.apply_action(&s, a)?;
            logpb.push(self.backward_logprob(env, &child)?);
            logpf.push(lp);
            tokens.push(a.token as u8);
            s = child;
        }
        let reward = env.reward(&s)?;
        Ok(Trajectory::from_parts(tokens, logpf, logpb, reward))
    }

    /// Tensor metadata in the same order as [`PolicyParams::tensors`].
    pub fn tensor_infos(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        let mut add = |prefix: &str, group, net: &Mlp| {
            for (k, layer) in net.layers().iter().enumerate() {
                out.push(TensorInfo {
                    name: format!("{prefix}.{k}.weight"),
                    group,
                    shape: (layer.inputs(), layer.outputs()),
                });
                out.push(TensorInfo {
                    name: format!("{prefix}.{k}.bias"),
                    group,
                    shape: (1, layer.outputs()),
                });
            }
        };
        add("forward", TensorGroup::Forward, &self.forward);
        if let BackwardPolicy::Learned(net) = &self.backward {
            add("backward", TensorGroup::Backward, net);
        }
        add("flow", TensorGroup::Flow, &self.flow);
        out.push(TensorInfo {
            name: "log_z".into(),
            group: TensorGroup::LogZ,
            shape: (1, 1),
        });
        out
    }

    pub fn tensors(&self) -> Vec<(TensorGroup, &[f64])> {
        let mut out: Vec<(TensorGroup, &[f64])> = self.forward.tensors().map(|t| (TensorGroup::Forward, t)).collect();
        if let BackwardPolicy::Learned(net) = &self.backward {
            out.extend(net.tensors().map(|t| (TensorGroup::Backward, t)));
        }
        out.extend(self.flow.tensors().map(|t| (TensorGroup::Flow, t)));
        out.push((TensorGroup::LogZ, core::slice::from_ref(&self.log_z)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorGroup, &mut [f64])> {
        let mut out: Vec<(TensorGroup, &mut [f64])> =
            self.forward.tensors_mut().map(|t| (TensorGroup::Forward, t)).collect();
        if let BackwardPolicy::Learned(net) = &mut self.backward {
            out.extend(net.tensors_mut().map(|t| (TensorGroup::Backward, t)));
        }
        out.extend(self.flow.tensors_mut().map(|t| (TensorGroup::Flow, t)));
        out.push((TensorGroup::LogZ, core::slice::from_mut(&mut self.log_z)));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Inverse-CDF draw from a normalized log-probability vector.
fn sample_index<R: Rng + ?Sized>(logp: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += libm::exp(*lp);
        if u < acc {
            return i;
        }
    }
    // rounding left u above the accumulated mass: take the last non-zero entry
    logp.iter()
        .rposition(|lp| *lp > f64::NEG_INFINITY)
        .unwrap_or(logp.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{RewardSource, SeparableParams, SeparableReward};
    use crate::rng::{stream, Domain};

    pub(crate) fn separable_env(v: usize, l: usize) -> EnvSpec {
        let s = SeparableReward::generate(v, l, &SeparableParams::default()).unwrap();
        EnvSpec::new(v, l, RewardSource::Separable(s)).unwrap()
    }

    fn small_cfg() -> PolicyConfig {
        PolicyConfig {
            hidden_units: 16,
            ..PolicyConfig::default()
        }
    }

    #[test]
    fn zero_output_policy_is_uniform() {
        let env = separable_env(4, 8);
        let mut rng = stream(0, Domain::Test, 0, 0);
        let p = PolicyParams::new(&env, &small_cfg(), &mut rng);
        for s in [env.initial_state(), env.state(&[1, 2, 3]).unwrap()] {
            for lp in p.forward_logprobs(&env, &s).unwrap() {
                assert!((lp + libm::log(4.0)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn log_softmax_of_equal_logits() {
        for lp in log_softmax(&[1.0, 1.0, 1.0, 1.0]) {
            assert!((lp - (-1.3862943611198906)).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_probabilities_normalize() {
        let env = separable_env(4, 6);
        let mut rng = stream(1, Domain::Test, 0, 0);
        let cfg = PolicyConfig {
            zero_output_init: false,
            ..small_cfg()
        };
        let p = PolicyParams::new(&env, &cfg, &mut rng);
        for _ in 0..100 {
            let len = rng.random_range(0..6);
            let prefix: Vec<u8> = (0..len).map(|_| rng.random_range(0..4u8)).collect();
            let s = env.state(&prefix).unwrap();
            let total: f64 = p
                .forward_logprobs(&env, &s)
                .unwrap()
                .iter()
                .map(|l| libm::exp(*l))
                .sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn terminal_and_initial_queries_fail() {
        let env = separable_env(2, 2);
        let mut rng = stream(0, Domain::Test, 0, 0);
        let p = PolicyParams::new(&env, &small_cfg(), &mut rng);
        let x = env.state(&[0, 1]).unwrap();
        assert_eq!(p.forward_logprobs(&env, &x), Err(Error::TerminalStateQuery));
        assert!(matches!(
            p.sample_action(&env, &x, &mut rng),
            Err(Error::TerminalStateQuery)
        ));
        assert_eq!(
            p.backward_logprob(&env, &env.initial_state()),
            Err(Error::InitialStateQuery)
        );
    }

    #[test]
    fn backward_logprob_is_zero_for_unique_parent() {
        let env = separable_env(3, 4);
        let mut rng = stream(2, Domain::Test, 0, 0);
        for mode in [BackwardMode::Uniform, BackwardMode::Learned] {
            let cfg = PolicyConfig {
                backward: mode,
                zero_output_init: false,
                ..small_cfg()
            };
            let p = PolicyParams::new(&env, &cfg, &mut rng);
            for prefix in [&[0u8][..], &[1, 2], &[2, 2, 1, 0]] {
                let lp = p.backward_logprob(&env, &env.state(prefix).unwrap()).unwrap();
                assert_eq!(lp, 0.0);
                assert!(libm::exp(lp) > 0.0 && libm::exp(lp) <= 1.0);
            }
        }
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let env = separable_env(4, 3);
        let mut rng = stream(3, Domain::Test, 0, 0);
        let p = PolicyParams::new(&env, &small_cfg(), &mut rng);
        let s0 = env.initial_state();
        let mut counts = [0usize; 4];
        let n = 40_000;
        for _ in 0..n {
            let (a, lp) = p.sample_action(&env, &s0, &mut rng).unwrap();
            assert_eq!(lp, p.forward_logprobs(&env, &s0).unwrap()[a.token as usize]);
            counts[a.token as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn saturated_logits_pick_the_dominant_token() {
        let logp = log_softmax(&[30.0, 0.0, 0.0, 0.0]);
        let mut rng = stream(4, Domain::Test, 0, 0);
        let n = 10_000;
        let hits = (0..n).filter(|_| sample_index(&logp, &mut rng) == 0).count();
        assert!(hits as f64 / n as f64 >= 0.999);
    }

    #[test]
    fn rollout_produces_consistent_trajectory() {
        let env = separable_env(4, 5);
        let mut rng = stream(5, Domain::Test, 0, 0);
        let cfg = PolicyConfig {
            zero_output_init: false,
            ..small_cfg()
        };
        let p = PolicyParams::new(&env, &cfg, &mut rng);
        let t = p.rollout(&env, &mut rng).unwrap();
        assert_eq!(t.len(), 5);
        assert!(t.state(0).is_initial() && t.terminal().is_terminal());
        for (step, (s, a)) in t.states().zip(t.actions()).enumerate() {
            let lp = p.forward_logprobs(&env, &s).unwrap()[a.token as usize];
            assert_eq!(lp, t.logpf_steps()[step]);
            assert_eq!(env.apply_action(&s, a).unwrap(), t.state(step + 1));
        }
        assert_eq!(t.reward(), env.reward(&t.terminal()).unwrap());
        let rebuilt = Trajectory::new(
            &env,
            t.tokens().to_vec(),
            t.logpf_steps().to_vec(),
            t.logpb_steps().to_vec(),
            t.reward(),
        );
        assert_eq!(rebuilt.unwrap(), t);
    }

    #[test]
    fn tensor_infos_align_with_tensors() {
        let env = separable_env(3, 3);
        let mut rng = stream(6, Domain::Test, 0, 0);
        let cfg = PolicyConfig {
            backward: BackwardMode::Learned,
            ..small_cfg()
        };
        let p = PolicyParams::new(&env, &cfg, &mut rng);
        let infos = p.tensor_infos();
        let tensors = p.tensors();
        assert_eq!(infos.len(), tensors.len());
        for (info, (group, t)) in infos.iter().zip(&tensors) {
            assert_eq!(info.group, *group);
            assert_eq!(info.shape.0 * info.shape.1, t.len());
        }
        assert_eq!(infos.last().unwrap().name, "log_z");
    }
}
