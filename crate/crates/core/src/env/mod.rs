//! The append-only sequence-construction MDP.
//!
//! States are token prefixes of length `0..=L`. The only action appends one
//! token, so every non-initial state has exactly one parent and the state
//! graph is a tree rooted at the empty prefix. Terminal states are the
//! `V^L` complete sequences; they are indexed in lexicographic order by
//! reading the tokens as a base-`V` number.

mod reward;

use alloc::vec::Vec;

pub use reward::{
    MotifParams, MotifReward, RewardMoments, RewardSource, RewardTable, SeparableParams, SeparableReward,
};

use crate::{Error, Result};

pub const DEFAULT_REWARD_FLOOR: f64 = 0.001;
pub const DEFAULT_ENUMERATION_CAP: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct State {
    prefix: Vec<u8>,
    terminal: bool,
}

impl State {
    pub fn prefix(&self) -> &[u8] {
        &self.prefix
    }

    pub fn len(&self) -> usize {
        self.prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefix.is_empty()
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn is_initial(&self) -> bool {
        self.prefix.is_empty()
    }

    /// The unique parent, or `None` for the initial state.
    pub fn parent(&self) -> Option<State> {
        let (_, rest) = self.prefix.split_last()?;
        Some(State {
            prefix: rest.to_vec(),
            terminal: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionId {
    pub token: u32,
}

impl ActionId {
    pub fn new(token: u32) -> Self {
        Self { token }
    }
}

/// A complete path `s_0 -> ... -> x` with the per-step log-probabilities it
/// was sampled with and the reward of its terminal.
///
/// Only the tokens are stored; `state(t)` is the prefix of length `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    tokens: Vec<u8>,
    logpf: Vec<f64>,
    logpb: Vec<f64>,
    reward: f64,
}

impl Trajectory {
    pub fn new(env: &EnvSpec, tokens: Vec<u8>, logpf: Vec<f64>, logpb: Vec<f64>, reward: f64) -> Result<Self> {
        let l = env.seq_len();
        if tokens.len() != l || logpf.len() != l || logpb.len() != l {
            return Err(Error::LengthMismatch("trajectory must have seq_len steps"));
        }
        if let Some(&t) = tokens.iter().find(|&&t| usize::from(t) >= env.vocab_size()) {
            return Err(Error::TokenOutOfRange {
                token: u32::from(t),
                vocab_size: env.vocab_size(),
            });
        }
        if logpf.iter().chain(&logpb).any(|lp| !lp.is_finite() || *lp > 0.0) {
            return Err(Error::InvalidEnv(
                "trajectory log-probabilities must be finite and <= 0",
            ));
        }
        if !(reward.is_finite() && reward > 0.0) {
            return Err(Error::NonPositiveReward(reward));
        }
        Ok(Self::from_parts(tokens, logpf, logpb, reward))
    }

    pub(crate) fn from_parts(tokens: Vec<u8>, logpf: Vec<f64>, logpb: Vec<f64>, reward: f64) -> Self {
        Self {
            tokens,
            logpf,
            logpb,
            reward,
        }
    }

    /// Number of actions, which is `L`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[u8] {
        &self.tokens
    }

    pub fn state(&self, t: usize) -> State {
        State {
            prefix: self.tokens[..t].to_vec(),
            terminal: t == self.tokens.len(),
        }
    }

    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        (0..=self.tokens.len()).map(|t| self.state(t))
    }

    pub fn terminal(&self) -> State {
        self.state(self.tokens.len())
    }

    pub fn actions(&self) -> impl Iterator<Item = ActionId> + '_ {
        self.tokens.iter().map(|&t| ActionId::new(u32::from(t)))
    }

    pub fn logpf_steps(&self) -> &[f64] {
        &self.logpf
    }

    pub fn logpb_steps(&self) -> &[f64] {
        &self.logpb
    }

    pub fn reward(&self) -> f64 {
        self.reward
    }

    /// `log P_F(x)` along this path, which for a tree-shaped DAG is the
    /// log-probability of sampling the terminal.
    pub fn log_pf_total(&self) -> f64 {
        self.logpf.iter().sum()
    }

    pub fn log_pb_total(&self) -> f64 {
        self.logpb.iter().sum()
    }
}

/// Alphabet size, sequence length and reward of a sequence MDP.
///
/// Immutable after construction, so it can be shared freely between
/// rollout workers.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    vocab_size: usize,
    seq_len: usize,
    reward: RewardSource,
    reward_floor: f64,
    enumeration_cap: u64,
    num_terminals: u64,
}

impl EnvSpec {
    pub fn new(vocab_size: usize, seq_len: usize, reward: RewardSource) -> Result<Self> {
        if !(2..=256).contains(&vocab_size) {
            return Err(Error::InvalidEnv("vocab_size must lie in 2..=256"));
        }
        if seq_len == 0 {
            return Err(Error::InvalidEnv("seq_len must be at least 1"));
        }
        let num_terminals = u32::try_from(seq_len)
            .ok()
            .and_then(|l| (vocab_size as u64).checked_pow(l))
            .ok_or(Error::InvalidEnv("vocab_size^seq_len must fit in 64 bits"))?;
        reward.check_shape(vocab_size, seq_len)?;
        Ok(Self {
            vocab_size,
            seq_len,
            reward,
            reward_floor: DEFAULT_REWARD_FLOOR,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            num_terminals,
        })
    }

    pub fn with_reward_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor.is_finite() && floor > 0.0) {
            return Err(Error::InvalidEnv("reward_floor must be finite and > 0"));
        }
        self.reward_floor = floor;
        Ok(self)
    }

    pub fn with_enumeration_cap(mut self, cap: u64) -> Self {
        self.enumeration_cap = cap;
        self
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn reward_source(&self) -> &RewardSource {
        &self.reward
    }

    pub fn reward_floor(&self) -> f64 {
        self.reward_floor
    }

    pub fn enumeration_cap(&self) -> u64 {
        self.enumeration_cap
    }

    /// `V^L`.
    pub fn num_terminals(&self) -> u64 {
        self.num_terminals
    }

    pub fn is_enumerable(&self) -> bool {
        self.num_terminals <= self.enumeration_cap
    }

    pub fn initial_state(&self) -> State {
        State {
            prefix: Vec::new(),
            terminal: false,
        }
    }

    pub fn apply_action(&self, s: &State, a: ActionId) -> Result<State> {
        if s.terminal {
            return Err(Error::ActionOnTerminal);
        }
        self.check_token(a.token)?;
        let mut prefix = Vec::with_capacity(s.prefix.len() + 1);
        prefix.extend_from_slice(&s.prefix);
        prefix.push(a.token as u8);
        let terminal = prefix.len() == self.seq_len;
        Ok(State { prefix, terminal })
    }

    /// Build a state from raw tokens.
    pub fn state(&self, prefix: &[u8]) -> Result<State> {
        if prefix.len() > self.seq_len {
            return Err(Error::InvalidEnv("prefix longer than seq_len"));
        }
        for &t in prefix {
            self.check_token(u32::from(t))?;
        }
        Ok(State {
            prefix: prefix.to_vec(),
            terminal: prefix.len() == self.seq_len,
        })
    }

    pub fn reward(&self, x: &State) -> Result<f64> {
        if !x.terminal {
            return Err(Error::NonTerminalReward);
        }
        self.reward_of_tokens(&x.prefix)
    }

    /// Reward of a complete token sequence, floor included.
    pub fn reward_of_tokens(&self, tokens: &[u8]) -> Result<f64> {
        if tokens.len() != self.seq_len {
            return Err(Error::NonTerminalReward);
        }
        let base = match &self.reward {
            RewardSource::Motif(m) => m.evaluate(tokens),
            RewardSource::Separable(s) => s.evaluate(tokens),
            RewardSource::Table(t) => {
                let idx = self.index_of_tokens(tokens);
                t.get(idx).ok_or(Error::MissingTableEntry(idx))?
            }
        };
        Ok(base + self.reward_floor)
    }

    /// Lexicographic index of a terminal.
    pub fn terminal_index(&self, x: &State) -> Result<u64> {
        if !x.terminal {
            return Err(Error::NonTerminalReward);
        }
        Ok(self.index_of_tokens(&x.prefix))
    }

    pub fn index_of_tokens(&self, tokens: &[u8]) -> u64 {
        let v = self.vocab_size as u64;
        tokens.iter().fold(0u64, |acc, &t| acc * v + u64::from(t))
    }

    pub fn terminal_from_index(&self, mut index: u64) -> State {
        let v = self.vocab_size as u64;
        let mut prefix = alloc::vec![0u8; self.seq_len];
        for slot in prefix.iter_mut().rev() {
            *slot = (index % v) as u8;
            index /= v;
        }
        State { prefix, terminal: true }
    }

    /// All terminals in lexicographic order.
    pub fn enumerate_terminals(&self) -> Result<impl Iterator<Item = State> + '_> {
        self.check_enumerable()?;
        Ok((0..self.num_terminals).map(move |i| self.terminal_from_index(i)))
    }

    /// Rewards of every terminal, indexed lexicographically.
    pub fn all_rewards(&self) -> Result<Vec<f64>> {
        self.check_enumerable()?;
        let mut tokens = alloc::vec![0u8; self.seq_len];
        let mut out = Vec::with_capacity(self.num_terminals as usize);
        for _ in 0..self.num_terminals {
            out.push(self.reward_of_tokens(&tokens)?);
            increment(&mut tokens, self.vocab_size as u8);
        }
        Ok(out)
    }

    /// `sum R` and `sum R^2` over all terminals. Closed form for separable
    /// rewards, enumeration otherwise.
    pub fn reward_moments(&self) -> Result<RewardMoments> {
        if let RewardSource::Separable(s) = &self.reward {
            return Ok(s.moments(self.reward_floor, self.num_terminals));
        }
        let rewards = self.all_rewards()?;
        let (sum, sum_sq) = rewards.iter().fold((0.0, 0.0), |(a, b), r| (a + r, b + r * r));
        Ok(RewardMoments {
            sum,
            sum_sq,
            count: self.num_terminals,
        })
    }

    pub(crate) fn check_enumerable(&self) -> Result<()> {
        if self.is_enumerable() {
            Ok(())
        } else {
            Err(Error::SpaceTooLarge {
                size: u128::from(self.num_terminals),
                cap: self.enumeration_cap,
            })
        }
    }

    fn check_token(&self, token: u32) -> Result<()> {
        if (token as usize) < self.vocab_size {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                token,
                vocab_size: self.vocab_size,
            })
        }
    }
}

/// Odometer increment in base `v`; wraps to all zeros after the last word.
fn increment(tokens: &mut [u8], v: u8) {
    for t in tokens.iter_mut().rev() {
        *t += 1;
        if *t < v {
            return;
        }
        *t = 0;
    }
}
