use rand::seq::index;

use super::{DistillParams, KeyBuffer, Stage};
use crate::error::{Error, Result};
use crate::rng;

/// ⌈fraction·n⌉.
pub fn sample_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).ceil() as usize).min(n)
}

/// Sorted positions drawn uniformly without replacement.
pub fn sample_positions(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut stream = rng::stream(seed);
    let mut picked = index::sample(&mut stream, n, k).into_vec();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEstimate {
    pub q_est: f64,
    pub positions: Vec<usize>,
    pub mismatches: usize,
    pub alice_remainder: KeyBuffer,
    pub bob_remainder: KeyBuffer,
    /// Set when `q_est` exceeds the abort threshold.
    pub abort: bool,
}

/// Discloses a seeded sample of positions, measures the mismatch fraction
/// there and removes the sample from both keys.
pub fn estimate_qber_sampled(
    a: &KeyBuffer,
    b: &KeyBuffer,
    params: &DistillParams,
    seed: u64,
) -> Result<SampleEstimate> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len();
    let k = sample_size(n, params.sample_fraction);
    if k == 0 {
        return Err(Error::KeyTooShort(format!(
            "cannot sample fraction {} of {n} bits",
            params.sample_fraction
        )));
    }
    let positions = sample_positions(n, k, seed);
    let mismatches = positions
        .iter()
        .filter(|&&p| a.bits().get(p) != b.bits().get(p))
        .count();
    let q_est = mismatches as f64 / k as f64;
    let alice_remainder = KeyBuffer::new(a.bits().without_sorted(&positions), Stage::Estimated);
    let bob_remainder = KeyBuffer::new(b.bits().without_sorted(&positions), Stage::Estimated);
    Ok(SampleEstimate {
        q_est,
        positions,
        mismatches,
        alice_remainder,
        bob_remainder,
        abort: q_est > params.qber_abort,
    })
}
