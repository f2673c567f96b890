//! Classical post-processing: sampled QBER estimation, Cascade
//! reconciliation, secret-length accounting and Toeplitz privacy
//! amplification.

mod cascade;
mod sampling;
mod toeplitz;
mod verify;

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{invalid, Error, Result};

pub use cascade::{
    cascade_correct, initial_block_size, CascadeAlice, CascadeBob, RangeQuery,
    ReconciliationReport, CASCADE_PASSES,
};
pub use sampling::{estimate_qber_sampled, sample_positions, sample_size, SampleEstimate};
pub use toeplitz::{toeplitz_hash, toeplitz_seed_len};
pub use verify::{fingerprint, verify_keys, FINGERPRINT_COLLISION_BOUND_LOG2};

/// Pipeline stage of a key buffer, in processing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw,
    Sifted,
    Estimated,
    Reconciled,
    Secret,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyBuffer {
    bits: BitString,
    stage: Stage,
}

impl KeyBuffer {
    pub fn new(bits: BitString, stage: Stage) -> Self {
        Self { bits, stage }
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    pub fn into_bits(self) -> BitString {
        self.bits
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Moves to a later stage; going backwards or standing still is an error.
    pub fn advance(self, to: Stage) -> Result<Self> {
        if to <= self.stage {
            return Err(Error::StageTransition {
                from: self.stage,
                to,
            });
        }
        Ok(Self {
            bits: self.bits,
            stage: to,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillParams {
    /// Fraction of the sifted key disclosed for QBER estimation.
    pub sample_fraction: f64,
    /// Reconciliation inefficiency used by the analytic rate model.
    pub f_ec: f64,
    /// Privacy-amplification failure parameter.
    pub epsilon_pa: f64,
    /// Blocks whose estimated QBER exceeds this are discarded.
    pub qber_abort: f64,
}

impl Default for DistillParams {
    fn default() -> Self {
        Self {
            sample_fraction: 0.1,
            f_ec: 1.15,
            epsilon_pa: 1e-10,
            qber_abort: 0.11,
        }
    }
}

impl DistillParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 0.5) {
            return Err(invalid("distill.sample_fraction", "must be in (0, 0.5]"));
        }
        if !(self.f_ec >= 1.0 && self.f_ec.is_finite()) {
            return Err(invalid("distill.f_ec", "must be >= 1"));
        }
        if !(self.epsilon_pa > 0.0 && self.epsilon_pa < 1.0) {
            return Err(invalid("distill.epsilon_pa", "must be in (0, 1)"));
        }
        if !(self.qber_abort > 0.0 && self.qber_abort <= MAX_CASCADE_QBER) {
            return Err(invalid("distill.qber_abort", "must be in (0, 0.25]"));
        }
        Ok(())
    }

    /// 2·log2(1/ε_pa).
    pub fn pa_penalty_bits(&self) -> f64 {
        2.0 * (1.0 / self.epsilon_pa).log2()
    }
}

/// Highest estimated QBER Cascade accepts.
pub const MAX_CASCADE_QBER: f64 = 0.25;

/// h2(q) = −q·log2 q − (1−q)·log2(1−q), with h2(0) = h2(1) = 0.
pub fn binary_entropy(q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "h2 needs q in [0, 1], got {q}"
        )));
    }
    if q == 0.0 || q == 1.0 {
        return Ok(0.0);
    }
    Ok(-q * q.log2() - (1.0 - q) * (1.0 - q).log2())
}

/// ℓ = ⌊n·(1 − h2(q)) − leaked − 2·log2(1/ε_pa)⌋, clamped to [0, n].
pub fn secret_length(
    n_remaining: usize,
    q_est: f64,
    leaked_bits: usize,
    params: &DistillParams,
) -> usize {
    let h = binary_entropy(q_est.clamp(0.0, 1.0)).unwrap_or(1.0);
    let raw = n_remaining as f64 * (1.0 - h) - leaked_bits as f64 - params.pa_penalty_bits();
    if raw <= 0.0 {
        return 0;
    }
    (raw.floor() as usize).min(n_remaining)
}
