//! Packed bit strings.
//!
//! Bit `i` lives in word `i / 64` at bit position `i % 64` (LSB first inside
//! each word). Bits past `len` in the last word are always zero, so
//! word-wise popcounts never need a tail mask.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; words_for(len)],
            len,
        }
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            words: Vec::with_capacity(words_for(bits)),
            len: 0,
        }
    }

    /// Builds from raw words, clearing anything past `len`.
    pub fn from_words(mut words: Vec<u64>, len: usize) -> Self {
        words.resize(words_for(len), 0);
        let mut out = Self { words, len };
        out.clear_tail();
        out
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut out = Self::new();
        for b in bits {
            out.push(b);
        }
        out
    }

    /// Parses a string of `'0'`/`'1'` characters, first character is bit 0.
    pub fn from_bit_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidArgument(format!("not a bit: {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_bools)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i & 63);
        if value {
            self.words[i >> 6] |= mask;
        } else {
            self.words[i >> 6] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i >> 6] ^= 1u64 << (i & 63);
    }

    pub fn push(&mut self, value: bool) {
        if self.len & 63 == 0 {
            self.words.push(0);
        }
        self.len += 1;
        if value {
            let i = self.len - 1;
            self.words[i >> 6] |= 1u64 << (i & 63);
        }
    }

    pub fn extend_from(&mut self, other: &BitString) {
        // TODO: word-level append when self.len is 64-aligned
        for b in other.iter() {
            self.push(b);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn parity(&self) -> bool {
        self.words.iter().fold(0u64, |acc, w| acc ^ w).count_ones() & 1 == 1
    }

    /// Parity of bits `start..end`, computed word-wise.
    pub fn range_parity(&self, start: usize, end: usize) -> bool {
        assert!(start <= end && end <= self.len, "bad range {start}..{end}");
        if start == end {
            return false;
        }
        let (first, last) = (start >> 6, (end - 1) >> 6);
        let lo_mask = u64::MAX << (start & 63);
        let hi_mask = u64::MAX >> (63 - ((end - 1) & 63));
        if first == last {
            return (self.words[first] & lo_mask & hi_mask).count_ones() & 1 == 1;
        }
        let mut acc = (self.words[first] & lo_mask) ^ (self.words[last] & hi_mask);
        for w in &self.words[first + 1..last] {
            acc ^= w;
        }
        acc.count_ones() & 1 == 1
    }

    /// The 64 bits starting at `offset`, zero-filled past the end.
    #[inline]
    pub fn word_at(&self, offset: usize) -> u64 {
        let q = offset >> 6;
        let r = offset & 63;
        let lo = self.words.get(q).copied().unwrap_or(0);
        if r == 0 {
            return lo;
        }
        let hi = self.words.get(q + 1).copied().unwrap_or(0);
        (lo >> r) | (hi << (64 - r))
    }

    pub fn xor(&self, other: &BitString) -> Result<BitString> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                left: self.len,
                right: other.len,
            });
        }
        Ok(BitString {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a ^ b)
                .collect(),
            len: self.len,
        })
    }

    pub fn hamming_distance(&self, other: &BitString) -> Result<usize> {
        Ok(self.xor(other)?.count_ones())
    }

    /// Bit order reversed: output bit `k` is input bit `len - 1 - k`.
    pub fn reversed(&self) -> BitString {
        let mut out = BitString::zeros(self.len);
        for i in 0..self.len {
            if self.get(i) {
                out.set(self.len - 1 - i, true);
            }
        }
        out
    }

    /// Bits at `positions`, in the given order.
    pub fn gather(&self, positions: &[usize]) -> BitString {
        let mut out = BitString::zeros(positions.len());
        for (k, &p) in positions.iter().enumerate() {
            if self.get(p) {
                out.set(k, true);
            }
        }
        out
    }

    /// Copy with the listed positions removed. `positions` must be sorted.
    pub fn without_sorted(&self, positions: &[usize]) -> BitString {
        let mut out = BitString::with_capacity(self.len.saturating_sub(positions.len()));
        let mut skip = positions.iter().peekable();
        for i in 0..self.len {
            if skip.peek() == Some(&&i) {
                skip.next();
                continue;
            }
            out.push(self.get(i));
        }
        out
    }

    /// Lowercase hex, bit 0 is the most significant bit of the first digit.
    /// A trailing partial nibble is padded with zero bits.
    pub fn to_hex(&self) -> String {
        const DIGITS: &[u8; 16] = b"0123456789abcdef";
        let mut out = String::with_capacity(self.len.div_ceil(4));
        for chunk in 0..self.len.div_ceil(4) {
            let mut nibble = 0usize;
            for k in 0..4 {
                let i = chunk * 4 + k;
                nibble <<= 1;
                if i < self.len && self.get(i) {
                    nibble |= 1;
                }
            }
            out.push(DIGITS[nibble] as char);
        }
        out
    }

    pub fn from_hex(hex: &str, len: usize) -> Result<BitString> {
        if hex.len() != len.div_ceil(4) {
            return Err(Error::InvalidArgument(format!(
                "hex length {} does not hold {len} bits",
                hex.len()
            )));
        }
        let mut out = BitString::zeros(len);
        for (chunk, c) in hex.chars().enumerate() {
            let nibble = c
                .to_digit(16)
                .ok_or_else(|| Error::InvalidArgument(format!("not a hex digit: {c:?}")))?;
            for k in 0..4 {
                let i = chunk * 4 + k;
                if nibble >> (3 - k) & 1 == 1 {
                    if i >= len {
                        return Err(Error::InvalidArgument("nonzero padding bits".into()));
                    }
                    out.set(i, true);
                }
            }
        }
        Ok(out)
    }

    fn clear_tail(&mut self) {
        let rem = self.len & 63;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            let s: String = self.iter().map(|b| if b { '1' } else { '0' }).collect();
            write!(f, "BitString({s})")
        } else {
            write!(f, "BitString(len={}, ones={})", self.len, self.count_ones())
        }
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Self::from_bools(iter)
    }
}
