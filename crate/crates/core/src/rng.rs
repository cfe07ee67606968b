//! Counter-based random streams.
//!
//! Every stochastic decision in a run draws from a stream keyed by
//! `(master_seed, domain, round, slot)`. The key is packed verbatim into a
//! ChaCha8 seed, so distinct keys always give distinct streams and the
//! stream a slot sees does not depend on how work is split across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Separates e.g. rollout draws from revision
/// draws within the same `(round, slot)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u64)]
pub enum Domain {
    Init = 1,
    Rollout = 2,
    Revise = 3,
    Replay = 4,
    Eval = 5,
    Reward = 6,
    Test = 7,
}

/// Deterministic stream for one `(round, slot)` of a run.
pub fn seed_streams(master_seed: u64, round: u64, slot: u64) -> StreamRng {
    stream(master_seed, Domain::Rollout, round, slot)
}

pub fn stream(master_seed: u64, domain: Domain, round: u64, slot: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(&round.to_le_bytes());
    key[24..].copy_from_slice(&slot.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Source of one independent generator per batch slot.
pub trait SlotStreams {
    type Rng: rand::Rng;
    fn slot(&self, slot: usize) -> Self::Rng;
}

/// The streams of one `(seed, domain, round)` triple.
#[derive(Debug, Clone, Copy)]
pub struct RoundStreams {
    pub master_seed: u64,
    pub domain: Domain,
    pub round: u64,
}

impl RoundStreams {
    pub fn new(master_seed: u64, domain: Domain, round: u64) -> Self {
        Self {
            master_seed,
            domain,
            round,
        }
    }
}

impl SlotStreams for RoundStreams {
    type Rng = StreamRng;

    fn slot(&self, slot: usize) -> StreamRng {
        stream(self.master_seed, self.domain, self.round, slot as u64)
    }
}
