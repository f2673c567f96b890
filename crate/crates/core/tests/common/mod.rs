#![allow(dead_code)]

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scwqkd_core::distill::{KeyBuffer, Stage};
use scwqkd_core::BitString;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_bits(rng: &mut ChaCha8Rng, n: usize) -> BitString {
    (0..n).map(|_| rng.random::<bool>()).collect()
}

/// Alice's random key and Bob's copy with exactly `errors` flipped bits.
pub fn keys_with_errors(n: usize, errors: usize, seed: u64) -> (KeyBuffer, KeyBuffer) {
    let mut r = rng(seed);
    let a = random_bits(&mut r, n);
    let mut b = a.clone();
    for i in sample(&mut r, n, errors) {
        b.flip(i);
    }
    (
        KeyBuffer::new(a, Stage::Estimated),
        KeyBuffer::new(b, Stage::Estimated),
    )
}

/// Dense ℓ×n Toeplitz product over GF(2), one entry at a time.
pub fn toeplitz_oracle(key: &[bool], seed: &[bool], out_len: usize) -> Vec<bool> {
    let n = key.len();
    (0..out_len)
        .map(|i| {
            let mut acc = false;
            for (j, &k) in key.iter().enumerate() {
                acc ^= seed[i + n - 1 - j] & k;
            }
            acc
        })
        .collect()
}

pub fn to_bools(bits: &BitString) -> Vec<bool> {
    bits.iter().collect()
}
