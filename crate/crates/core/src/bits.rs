//! Fixed-length bit vectors.
//!
//! Bit `i` lives in word `i / 64` at position `63 - i % 64`, so the big-endian
//! bytes of the word array are exactly the MSB-first packing used by every
//! file and wire format in this crate. Padding bits past `len` are always zero.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

#[inline]
fn mask(i: usize) -> u64 {
    1u64 << (63 - (i % 64))
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut out = Self::zeros(len);
        for i in 0..len {
            if f(i) {
                out.words[i / 64] |= mask(i);
            }
        }
        out
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self::from_fn(bits.len(), |i| bits[i])
    }

    /// Unpacks `len` bits from MSB-first packed bytes. Padding bits in the
    /// last byte must be zero.
    pub fn from_packed(bytes: &[u8], len: usize) -> Result<Self> {
        let expected = len.div_ceil(8);
        if bytes.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: bytes.len(),
            });
        }
        let mut words = vec![0u64; len.div_ceil(64)];
        for (w, chunk) in words.iter_mut().zip(bytes.chunks(8)) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            *w = u64::from_be_bytes(buf);
        }
        let out = Self { words, len };
        if out.padding_dirty() {
            return Err(Error::Parse("nonzero padding bits".into()));
        }
        Ok(out)
    }

    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.words.len() * 8);
        for w in &self.words {
            out.extend_from_slice(&w.to_be_bytes());
        }
        out.truncate(self.len.div_ceil(8));
        out
    }

    pub fn from_hex(hex_str: &str, len: usize) -> Result<Self> {
        let bytes = hex::decode(hex_str).map_err(|e| Error::Parse(format!("bad hex: {e}")))?;
        Self::from_packed(&bytes, len)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_packed())
    }

    fn padding_dirty(&self) -> bool {
        let rem = self.len % 64;
        rem != 0 && (self.words[self.words.len() - 1] & (u64::MAX >> rem)) != 0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(
            i < self.len,
            "bit index {i} out of range for length {}",
            self.len
        );
        self.words[i / 64] & mask(i) != 0
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(
            i < self.len,
            "bit index {i} out of range for length {}",
            self.len
        );
        if value {
            self.words[i / 64] |= mask(i);
        } else {
            self.words[i / 64] &= !mask(i);
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(
            i < self.len,
            "bit index {i} out of range for length {}",
            self.len
        );
        self.words[i / 64] ^= mask(i);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn complement(&self) -> Self {
        let mut out = Self {
            words: self.words.iter().map(|w| !w).collect(),
            len: self.len,
        };
        let rem = self.len % 64;
        if rem != 0 {
            let last = out.words.len() - 1;
            out.words[last] &= !(u64::MAX >> rem);
        }
        out
    }

    /// Number of differing positions.
    pub fn hamming(&self, other: &Self) -> Result<usize> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                actual: other.len,
            });
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// Gathers the bits at `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::zeros(indices.len());
        for (pos, &i) in indices.iter().enumerate() {
            if self.get(i) {
                out.words[pos / 64] |= mask(pos);
            }
        }
        out
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "BitString({self})")
        } else {
            write!(
                f,
                "BitString(len={}, hex={}..)",
                self.len,
                &self.to_hex()[..16]
            )
        }
    }
}

/// Parses a string of `0`/`1` characters.
impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_bools(&bits))
    }
}
