//! Reward-prioritized replay of past trajectories.

use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::env::Trajectory;
use crate::{Error, Result};

/// Ring buffer; once full, the oldest entry is overwritten. Draws are with
/// replacement with probability proportional to `reward^exponent`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    items: Vec<Trajectory>,
    capacity: usize,
    exponent: f64,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, exponent: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive"));
        }
        if !(exponent.is_finite() && exponent >= 0.0) {
            return Err(Error::InvalidConfig("replay exponent must be finite and >= 0"));
        }
        Ok(Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            exponent,
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, traj: Trajectory) {
        if self.items.len() < self.capacity {
            self.items.push(traj);
        } else {
            self.items[self.next] = traj;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn extend<I: IntoIterator<Item = Trajectory>>(&mut self, trajs: I) {
        for t in trajs {
            self.push(t);
        }
    }

    pub fn items(&self) -> &[Trajectory] {
        &self.items
    }

    pub fn priority(&self, traj: &Trajectory) -> f64 {
        libm::pow(traj.reward(), self.exponent)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Trajectory>> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let weights: Vec<f64> = self.items.iter().map(|t| self.priority(t)).collect();
        let dist =
            WeightedIndex::new(&weights).map_err(|_| Error::InvalidConfig("replay priorities are degenerate"))?;
        Ok((0..n).map(|_| dist.sample(rng)).collect())
    }
}

/// `n` prioritized draws with replacement.
pub fn replay_sample<R: Rng + ?Sized>(buffer: &ReplayBuffer, n: usize, rng: &mut R) -> Result<Vec<Trajectory>> {
    buffer.sample(n, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use alloc::vec;

    fn t(reward: f64, tok: u8) -> Trajectory {
        Trajectory::from_parts(vec![tok], vec![-1.0], vec![0.0], reward)
    }

    /// |observed - expected| within 3 binomial standard errors.
    fn within_3se(count: usize, n: usize, p: f64) -> bool {
        let se = libm::sqrt(p * (1.0 - p) / n as f64);
        (count as f64 / n as f64 - p).abs() <= 3.0 * se
    }

    #[test]
    fn empty_buffer_errors() {
        let b = ReplayBuffer::new(4, 1.0).unwrap();
        assert_eq!(
            replay_sample(&b, 1, &mut stream(0, Domain::Test, 0, 0)),
            Err(Error::EmptyBuffer)
        );
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(2, 1.0).unwrap();
        b.extend([t(1.0, 0), t(2.0, 1), t(3.0, 2)]);
        assert_eq!(b.len(), 2);
        let toks: Vec<u8> = b.items().iter().map(|x| x.tokens()[0]).collect();
        assert_eq!(toks, vec![2, 1]);
    }

    #[test]
    fn zero_exponent_is_uniform() {
        let mut b = ReplayBuffer::new(8, 0.0).unwrap();
        b.extend([t(1.0, 0), t(5.0, 1), t(0.01, 2), t(9.0, 3)]);
        let n = 100_000;
        let idx = b.sample_indices(n, &mut stream(1, Domain::Test, 0, 0)).unwrap();
        for k in 0..4 {
            assert!(within_3se(idx.iter().filter(|&&i| i == k).count(), n, 0.25));
        }
    }

    #[test]
    fn linear_priority_ratio() {
        let mut b = ReplayBuffer::new(8, 1.0).unwrap();
        b.extend([t(1.0, 0), t(3.0, 1)]);
        let n = 100_000;
        let idx = b.sample_indices(n, &mut stream(2, Domain::Test, 0, 0)).unwrap();
        assert!(within_3se(idx.iter().filter(|&&i| i == 1).count(), n, 0.75));
    }
}
