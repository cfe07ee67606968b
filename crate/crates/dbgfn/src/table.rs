//! Reward tables on disk.
//!
//! A table is a UTF-8 CSV with the header `sequence,reward` and one row per
//! terminal. Sequences are spelled with a symbol alphabet; symbol `i` is
//! token `i`. The default alphabet is DNA (`ACGT`).

use std::fs::File;
use std::io::Read;
use std::path::Path;

use dbgfn_core::env::RewardTable;

use crate::error::{Error, Result};

pub const DNA: &str = "ACGT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolMap {
    symbols: Vec<char>,
}

impl SymbolMap {
    pub fn new(alphabet: &str) -> Result<Self> {
        let symbols: Vec<char> = alphabet.chars().collect();
        if symbols.len() < 2 || symbols.len() > 256 {
            return Err(Error::ConfigInvalid(format!(
                "alphabet {alphabet:?} must have 2..=256 symbols"
            )));
        }
        for (i, c) in symbols.iter().enumerate() {
            if symbols[..i].contains(c) {
                return Err(Error::ConfigInvalid(format!("alphabet {alphabet:?} repeats {c:?}")));
            }
        }
        Ok(Self { symbols })
    }

    pub fn dna() -> Self {
        Self::new(DNA).expect("DNA alphabet is valid")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Tokens for `sequence`, or the first symbol outside the alphabet.
    pub fn encode(&self, sequence: &str) -> Result<Vec<u8>, char> {
        sequence
            .chars()
            .map(|c| self.symbols.iter().position(|&s| s == c).map(|i| i as u8).ok_or(c))
            .collect()
    }

    pub fn decode(&self, tokens: &[u8]) -> String {
        tokens.iter().map(|&t| self.symbols[usize::from(t)]).collect()
    }
}

pub fn load_reward_table(path: &Path, seq_len: usize, symbols: &SymbolMap) -> Result<RewardTable> {
    let file = File::open(path).map_err(Error::io(path))?;
    read_reward_table(file, seq_len, symbols)
}

/// Parse a complete table for sequences of length `seq_len`.
pub fn read_reward_table<R: Read>(reader: R, seq_len: usize, symbols: &SymbolMap) -> Result<RewardTable> {
    let vocab = symbols.len();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(["sequence", "reward"]) {
        return Err(Error::TableFormat(format!(
            "header must be `sequence,reward`, found `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let size = (vocab as u128).checked_pow(seq_len as u32).filter(|&n| n <= 1 << 28);
    let Some(size) = size else {
        return Err(Error::TableFormat(format!(
            "{vocab}^{seq_len} rows is too many for a table"
        )));
    };
    let size = size as usize;
    let mut seen = vec![false; size];
    let mut entries = Vec::with_capacity(size);
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let (Some(sequence), Some(reward), None) = (record.get(0), record.get(1), record.get(2)) else {
            return Err(Error::TableFormat(format!("line {line}: expected two fields")));
        };
        let sequence = sequence.trim();
        let tokens = symbols.encode(sequence).map_err(|symbol| Error::BadSymbol {
            line,
            symbol,
            sequence: sequence.to_owned(),
        })?;
        if tokens.len() != seq_len {
            return Err(Error::TableFormat(format!(
                "line {line}: {sequence:?} has length {}, expected {seq_len}",
                tokens.len()
            )));
        }
        let reward: f64 = reward
            .trim()
            .parse()
            .map_err(|_| Error::TableFormat(format!("line {line}: reward {reward:?} is not a number")))?;
        if !reward.is_finite() {
            return Err(Error::TableFormat(format!("line {line}: reward must be finite")));
        }
        if reward < 0.0 {
            return Err(Error::NegativeReward { line, reward });
        }
        let idx = tokens.iter().fold(0usize, |acc, &t| acc * vocab + usize::from(t));
        if std::mem::replace(&mut seen[idx], true) {
            return Err(Error::DuplicateSequence {
                line,
                sequence: sequence.to_owned(),
            });
        }
        entries.push((idx as u64, reward));
    }
    if let Some(first) = seen.iter().position(|&s| !s) {
        let mut tokens = vec![0u8; seq_len];
        let mut rest = first;
        for slot in tokens.iter_mut().rev() {
            *slot = (rest % vocab) as u8;
            rest /= vocab;
        }
        return Err(Error::IncompleteTable {
            present: entries.len(),
            expected: size,
            first_missing: symbols.decode(&tokens),
        });
    }
    Ok(RewardTable::from_entries(vocab, seq_len, entries)?)
}
