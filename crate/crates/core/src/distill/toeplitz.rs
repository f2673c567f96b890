use rayon::prelude::*;

use super::{KeyBuffer, Stage};
use crate::error::{Error, Result};
use crate::BitString;

/// Output bits per parallel task.
const WORDS_PER_TASK: usize = 4;

pub fn toeplitz_seed_len(n: usize, out_len: usize) -> usize {
    (n + out_len).saturating_sub(1)
}

/// Multiplies `key` by the ℓ×n Toeplitz matrix M[i][j] = seed[i − j + n − 1]
/// over GF(2).
///
/// With the key reversed (r[k] = key[n−1−k]) row i becomes the dot product
/// of r with seed[i .. i+n], which is evaluated 64 bits at a time.
pub fn toeplitz_hash(key: &KeyBuffer, seed: &BitString, out_len: usize) -> Result<KeyBuffer> {
    let n = key.len();
    if out_len > n {
        return Err(Error::InvalidArgument(format!(
            "output length {out_len} exceeds key length {n}"
        )));
    }
    if out_len == 0 {
        return Ok(KeyBuffer::new(BitString::new(), Stage::Secret));
    }
    let expected = toeplitz_seed_len(n, out_len);
    if seed.len() != expected {
        return Err(Error::LengthMismatch {
            left: seed.len(),
            right: expected,
        });
    }
    let reversed = key.bits().reversed();
    let key_words = reversed.words();
    let row = |i: usize| -> bool {
        let mut acc = 0u64;
        for (k, w) in key_words.iter().enumerate() {
            acc ^= w & seed.word_at(i + 64 * k);
        }
        acc.count_ones() & 1 == 1
    };
    let n_words = out_len.div_ceil(64);
    let mut words = vec![0u64; n_words];
    words
        .par_chunks_mut(WORDS_PER_TASK)
        .enumerate()
        .for_each(|(task, chunk)| {
            for (w_off, word) in chunk.iter_mut().enumerate() {
                let base = (task * WORDS_PER_TASK + w_off) * 64;
                for bit in 0..64.min(out_len.saturating_sub(base)) {
                    if row(base + bit) {
                        *word |= 1u64 << bit;
                    }
                }
            }
        });
    Ok(KeyBuffer::new(
        BitString::from_words(words, out_len),
        Stage::Secret,
    ))
}
