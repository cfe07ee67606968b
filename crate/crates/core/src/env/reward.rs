use alloc::vec::Vec;

use rand::Rng;

use crate::rng::{stream, Domain};
use crate::{Error, Result};

/// Where terminal rewards come from. The env adds its reward floor on top.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardSource {
    Motif(MotifReward),
    Separable(SeparableReward),
    Table(RewardTable),
}

impl RewardSource {
    pub(crate) fn check_shape(&self, vocab_size: usize, seq_len: usize) -> Result<()> {
        let ok = match self {
            RewardSource::Motif(m) => m
                .motifs
                .iter()
                .all(|s| s.len() == seq_len && s.iter().all(|&t| usize::from(t) < vocab_size)),
            RewardSource::Separable(s) => s.weights.len() == seq_len && s.weights.iter().all(|w| w.len() == vocab_size),
            RewardSource::Table(t) => t.vocab_size == vocab_size && t.seq_len == seq_len,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidEnv("reward source does not match vocab_size/seq_len"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardMoments {
    pub sum: f64,
    pub sum_sq: f64,
    pub count: u64,
}

impl RewardMoments {
    /// `E_{p'}[R]` for `p'(x) = R(x) / sum R`.
    pub fn target_mean(&self) -> f64 {
        self.sum_sq / self.sum
    }
}

/// `R(x) = base + sum_j A_j * [hamming(x, m_j) <= r_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotifReward {
    motifs: Vec<Vec<u8>>,
    amplitudes: Vec<f64>,
    radii: Vec<usize>,
    base: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotifParams {
    pub count: usize,
    pub base: f64,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    pub radius_min: usize,
    pub radius_max: usize,
    pub seed: u64,
}

impl Default for MotifParams {
    fn default() -> Self {
        Self {
            count: 8,
            base: 0.1,
            amplitude_min: 4.0,
            amplitude_max: 8.0,
            radius_min: 1,
            radius_max: 2,
            seed: 0,
        }
    }
}

const MOTIF_ATTEMPTS: usize = 10_000;

impl MotifReward {
    pub fn new(motifs: Vec<Vec<u8>>, amplitudes: Vec<f64>, radii: Vec<usize>, base: f64) -> Result<Self> {
        if motifs.len() != amplitudes.len() || motifs.len() != radii.len() {
            return Err(Error::InvalidEnv("motifs, amplitudes and radii must have equal length"));
        }
        if !(base.is_finite() && base >= 0.0) || amplitudes.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidEnv("motif base and amplitudes must be finite and >= 0"));
        }
        Ok(Self {
            motifs,
            amplitudes,
            radii,
            base,
        })
    }

    /// Draw motifs whose Hamming balls are pairwise disjoint.
    pub fn generate(vocab_size: usize, seq_len: usize, p: &MotifParams) -> Result<Self> {
        if p.amplitude_min > p.amplitude_max || p.radius_min > p.radius_max || vocab_size > 256 {
            return Err(Error::InvalidEnv("motif parameter ranges are inverted"));
        }
        let mut rng = stream(p.seed, Domain::Reward, 0, 0);
        let mut motifs: Vec<Vec<u8>> = Vec::with_capacity(p.count);
        let mut radii = Vec::with_capacity(p.count);
        let mut amplitudes = Vec::with_capacity(p.count);
        for _ in 0..p.count {
            let radius = rng.random_range(p.radius_min..=p.radius_max);
            let mut placed = false;
            for _ in 0..MOTIF_ATTEMPTS {
                let cand: Vec<u8> = (0..seq_len).map(|_| rng.random_range(0..vocab_size) as u8).collect();
                if motifs.iter().zip(&radii).all(|(m, &r)| hamming(m, &cand) > r + radius) {
                    motifs.push(cand);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::InvalidEnv("could not place well-separated motifs"));
            }
            radii.push(radius);
            let a = if p.amplitude_max > p.amplitude_min {
                rng.random_range(p.amplitude_min..p.amplitude_max)
            } else {
                p.amplitude_min
            };
            amplitudes.push(a);
        }
        Self::new(motifs, amplitudes, radii, p.base)
    }

    pub fn motifs(&self) -> &[Vec<u8>] {
        &self.motifs
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn radii(&self) -> &[usize] {
        &self.radii
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn evaluate(&self, x: &[u8]) -> f64 {
        self.motifs
            .iter()
            .zip(&self.amplitudes)
            .zip(&self.radii)
            .filter(|((m, _), &r)| hamming(m, x) <= r)
            .fold(self.base, |acc, ((_, a), _)| acc + a)
    }
}

pub fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// `R(x) = prod_t w_t(x_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableReward {
    weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparableParams {
    pub weight_min: f64,
    pub weight_max: f64,
    pub seed: u64,
}

impl Default for SeparableParams {
    fn default() -> Self {
        Self {
            weight_min: 0.5,
            weight_max: 1.5,
            seed: 0,
        }
    }
}

impl SeparableReward {
    /// `weights[t][v]` is the factor for token `v` at position `t`.
    pub fn new(weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.iter().flatten().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidEnv("separable weights must be finite and >= 0"));
        }
        Ok(Self { weights })
    }

    pub fn generate(vocab_size: usize, seq_len: usize, p: &SeparableParams) -> Result<Self> {
        if !(p.weight_min >= 0.0 && p.weight_min < p.weight_max) {
            return Err(Error::InvalidEnv("separable weight range must satisfy 0 <= min < max"));
        }
        let mut rng = stream(p.seed, Domain::Reward, 0, 1);
        let weights = (0..seq_len)
            .map(|_| {
                (0..vocab_size)
                    .map(|_| rng.random_range(p.weight_min..p.weight_max))
                    .collect()
            })
            .collect();
        Self::new(weights)
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn evaluate(&self, x: &[u8]) -> f64 {
        self.weights.iter().zip(x).map(|(w, &t)| w[usize::from(t)]).product()
    }

    pub(crate) fn moments(&self, floor: f64, count: u64) -> RewardMoments {
        let s1: f64 = self.weights.iter().map(|w| w.iter().sum::<f64>()).product();
        let s2: f64 = self
            .weights
            .iter()
            .map(|w| w.iter().map(|v| v * v).sum::<f64>())
            .product();
        let n = count as f64;
        RewardMoments {
            sum: s1 + floor * n,
            sum_sq: s2 + 2.0 * floor * s1 + floor * floor * n,
            count,
        }
    }
}

/// Explicit per-terminal rewards indexed lexicographically. Entries may be
/// missing; querying one is an error.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    vocab_size: usize,
    seq_len: usize,
    values: Vec<Option<f64>>,
}

impl RewardTable {
    pub fn from_values(vocab_size: usize, seq_len: usize, values: Vec<f64>) -> Result<Self> {
        let n = table_size(vocab_size, seq_len)?;
        if values.len() != n {
            return Err(Error::InvalidEnv("reward table size must equal vocab_size^seq_len"));
        }
        Self::from_entries(
            vocab_size,
            seq_len,
            values.into_iter().enumerate().map(|(i, r)| (i as u64, r)),
        )
    }

    pub fn from_entries(
        vocab_size: usize,
        seq_len: usize,
        entries: impl IntoIterator<Item = (u64, f64)>,
    ) -> Result<Self> {
        let n = table_size(vocab_size, seq_len)?;
        let mut values = alloc::vec![None; n];
        for (idx, r) in entries {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidEnv("table rewards must be finite and >= 0"));
            }
            let slot = values
                .get_mut(idx as usize)
                .ok_or(Error::InvalidEnv("table index out of range"))?;
            *slot = Some(r);
        }
        Ok(Self {
            vocab_size,
            seq_len,
            values,
        })
    }

    pub fn get(&self, index: u64) -> Option<f64> {
        self.values.get(index as usize).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn missing(&self) -> impl Iterator<Item = u64> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(i, _)| i as u64)
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }
}

fn table_size(vocab_size: usize, seq_len: usize) -> Result<usize> {
    u32::try_from(seq_len)
        .ok()
        .and_then(|l| vocab_size.checked_pow(l))
        .filter(|&n| n <= 1 << 28)
        .ok_or(Error::InvalidEnv("reward table too large"))
}
