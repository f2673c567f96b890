//! Seed derivation.
//!
//! Every random draw in a run descends from one 64-bit root seed:
//!
//! * `derive(root, domain, index)` mixes a domain tag and an index into an
//!   independent 64-bit subseed (SplitMix64 finalizer chain).
//! * Sequential draws use a ChaCha8 stream seeded from a subseed.
//! * Per-cycle basis/bit choices are counter-based: `counter_u64(key, cycle)`
//!   is a pure function of (key, cycle), so an endpoint can recompute its
//!   own choice for any cycle without storing the whole block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Recorded in report metadata so runs can be reproduced.
pub const GENERATOR: &str = "chacha8-stream/splitmix64-counter v1";

pub type Stream = ChaCha8Rng;

/// Domain tags for [`derive`].
pub mod domain {
    pub const ALICE_SYMBOLS: u64 = 0x616c_6963_6500_0001;
    pub const BOB_SYMBOLS: u64 = 0x626f_6200_0000_0002;
    pub const CLICKS: u64 = 0x636c_6963_6b00_0003;
    pub const THINNING: u64 = 0x7468_696e_0000_0004;
    pub const ALICE_CLASSICAL: u64 = 0x616c_6963_6500_0005;
    pub const BOB_CLASSICAL: u64 = 0x626f_6200_0000_0006;
    pub const BLOCK: u64 = 0x626c_6f63_6b00_0007;
    pub const CHUNK: u64 = 0x6368_756e_6b00_0008;
}

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn derive(root: u64, domain: u64, index: u64) -> u64 {
    let a = mix64(root.wrapping_add(GOLDEN));
    let b = mix64(a ^ domain.wrapping_mul(GOLDEN));
    mix64(
        b.wrapping_add(index.wrapping_mul(GOLDEN))
            .wrapping_add(GOLDEN),
    )
}

#[inline]
pub fn counter_u64(key: u64, counter: u64) -> u64 {
    mix64(key ^ mix64(counter.wrapping_mul(GOLDEN).wrapping_add(GOLDEN)))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw on (0, 1].
#[inline]
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}
