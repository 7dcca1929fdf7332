//! Bit words, preambles, and bit-error accounting.
//!
//! Words are stored as integers; bit expansion (big-endian, MSB first)
//! happens only at error counting and at approximator inputs.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Modulation order in bits per symbol. Fixed for a whole experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitsPerSymbol(u8);

impl BitsPerSymbol {
    pub fn new(b: u8) -> Result<Self> {
        if (1..=4).contains(&b) {
            Ok(BitsPerSymbol(b))
        } else {
            Err(Error::invalid(format!("bits per symbol must be in 1..=4, got {b}")))
        }
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// Alphabet size 2^b.
    pub fn alphabet_size(self) -> usize {
        1usize << self.0
    }
}

/// An integer bit-word in `[0, 2^b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymbolWord(pub u16);

impl SymbolWord {
    pub fn value(self) -> u16 {
        self.0
    }

    pub fn in_range(self, b: BitsPerSymbol) -> bool {
        (self.0 as usize) < b.alphabet_size()
    }
}

/// A complex baseband sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqSymbol {
    pub re: f64,
    pub im: f64,
}

impl IqSymbol {
    pub fn new(re: f64, im: f64) -> Self {
        IqSymbol { re, im }
    }

    pub fn norm_sq(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn distance_sq(self, other: IqSymbol) -> f64 {
        let dr = self.re - other.re;
        let di = self.im - other.im;
        dr * dr + di * di
    }

    pub fn scale(self, k: f64) -> Self {
        IqSymbol::new(self.re * k, self.im * k)
    }
}

/// A block of random training words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preamble {
    words: Vec<SymbolWord>,
}

impl Preamble {
    pub fn words(&self) -> &[SymbolWord] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Draws `n` words uniformly over `[0, 2^b)`. Deterministic given the generator state.
pub fn random_preamble<R: Rng>(rng: &mut R, n: usize, b: BitsPerSymbol) -> Result<Preamble> {
    if n == 0 {
        return Err(Error::invalid("preamble length must be positive"));
    }
    let m = b.alphabet_size() as u16;
    let words = (0..n).map(|_| SymbolWord(rng.random_range(0..m))).collect();
    Ok(Preamble { words })
}

/// Big-endian bit expansion of a word: MSB first, length `b`.
pub fn word_to_bits(w: SymbolWord, b: BitsPerSymbol) -> Vec<u8> {
    (0..b.bits()).rev().map(|i| ((w.0 >> i) & 1) as u8).collect()
}

/// Inverse of [`word_to_bits`].
pub fn bits_to_word(bits: &[u8]) -> SymbolWord {
    let mut v = 0u16;
    for &bit in bits {
        v = (v << 1) | (bit as u16 & 1);
    }
    SymbolWord(v)
}

/// Bit expansion as 0.0/1.0 features for approximator input (MSB first).
pub fn bit_features(w: SymbolWord, b: BitsPerSymbol) -> Vec<f64> {
    (0..b.bits()).rev().map(|i| ((w.0 >> i) & 1) as f64).collect()
}

/// Per-word and total bit errors between two equal-length word sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitErrors {
    pub per_word: Vec<u32>,
    pub total: u64,
}

/// Hamming distance of the b-bit expansions, per word and summed.
pub fn bit_errors(a: &[SymbolWord], c: &[SymbolWord], _b: BitsPerSymbol) -> Result<BitErrors> {
    if a.len() != c.len() {
        return Err(Error::invalid(format!(
            "bit_errors length mismatch: {} vs {}",
            a.len(),
            c.len()
        )));
    }
    let per_word: Vec<u32> = a
        .iter()
        .zip(c)
        .map(|(x, y)| (x.0 ^ y.0).count_ones())
        .collect();
    let total = per_word.iter().map(|&e| e as u64).sum();
    Ok(BitErrors { per_word, total })
}
