//! Key verification by 64-bit polynomial fingerprints over GF(2^64).
//!
//! The fingerprint of a key with L words is a polynomial of degree L + 1 in
//! the seed-derived evaluation point, so two different keys collide with
//! probability at most (L + 1)/2^64, i.e. below 2^-50 for keys shorter than
//! 2^20 bits.

use super::KeyBuffer;
use crate::rng;

pub const FINGERPRINT_COLLISION_BOUND_LOG2: i32 = -50;

/// Seed used by [`verify_keys`] for the exchanged fingerprint.
const LOCAL_VERIFY_SEED: u64 = 0x5eed_f00d_cafe_d00d;

/// Multiplication in GF(2^64) modulo x^64 + x^4 + x^3 + x + 1.
fn gf64_mul(mut a: u64, mut b: u64) -> u64 {
    let mut acc = 0u64;
    while b != 0 {
        if b & 1 == 1 {
            acc ^= a;
        }
        b >>= 1;
        let carry = a >> 63;
        a <<= 1;
        if carry == 1 {
            a ^= 0x1b;
        }
    }
    acc
}

pub fn fingerprint(key: &KeyBuffer, seed: u64) -> u64 {
    let point = rng::mix64(seed) | 1;
    let mut acc = 0u64;
    for &w in key.bits().words() {
        acc = gf64_mul(acc ^ w, point);
    }
    gf64_mul(acc ^ key.len() as u64, point)
}

/// Compares fingerprints as the endpoints would, then the full keys.
pub fn verify_keys(a: &KeyBuffer, b: &KeyBuffer) -> bool {
    if a.stage() != b.stage() {
        log::warn!("verify_keys: stage {:?} vs {:?}", a.stage(), b.stage());
        return false;
    }
    fingerprint(a, LOCAL_VERIFY_SEED) == fingerprint(b, LOCAL_VERIFY_SEED) && a.bits() == b.bits()
}
