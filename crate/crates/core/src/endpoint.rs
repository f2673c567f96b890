//! Alice and Bob as reactive state machines.
//!
//! Each endpoint holds only its own data: Alice her per-cycle choices,
//! Bob his observed clicks and his own choices. Everything that crosses
//! between them is a [`Message`]. A block runs
//!
//! ```text
//! Bob   -> basis_announce (clicked cycles, Bob's bases)
//! Alice -> basis_announce (same cycles, Alice's bases)      [carry if < 64 sifted]
//! Alice -> sample_indices
//! Bob   -> sample_bits
//! Alice -> sample_bits, then abort | shuffle_seed
//! Bob   -> parity_request ... Alice -> parity_response ...  (Cascade)
//! Bob   -> fingerprint
//! Alice -> fingerprint, hash_seed                            (or abort)
//! ```

use std::collections::HashMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::channel::{
    abort_code, decode_queries, encode_queries, join_u64, split_u64, Message, Party,
};
use crate::distill::{
    fingerprint, sample_positions, sample_size, secret_length, toeplitz_hash, toeplitz_seed_len,
    CascadeAlice, CascadeBob, DistillParams, KeyBuffer, Stage, MAX_CASCADE_QBER,
};
use crate::error::{Error, Result};
use crate::protocol::{PhaseSymbol, SymbolSource};
use crate::rng::{self, Stream};
use crate::BitString;

/// Sifted buffers shorter than this are carried into the next block.
pub const MIN_RECONCILE_BITS: usize = 64;

/// Disclosed sample bits and mismatches accumulated over a session.
///
/// Cascade block sizes come from this pooled estimate rather than the
/// current block's small sample. A clean record counts as half an error
/// so the first pass never collapses to a single whole-key block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleTally {
    pub bits: usize,
    pub errors: usize,
}

impl SampleTally {
    pub fn add(&mut self, bits: usize, errors: usize) {
        self.bits += bits;
        self.errors += errors;
    }

    pub fn cascade_qber(&self) -> f64 {
        let errors = if self.errors == 0 {
            0.5
        } else {
            self.errors as f64
        };
        (errors / self.bits.max(1) as f64).min(MAX_CASCADE_QBER)
    }
}

/// Alice's private record of her per-cycle choices.
pub trait SymbolRecord {
    fn lookup(&self, cycle: u64) -> Option<PhaseSymbol>;
}

impl SymbolRecord for SymbolSource {
    fn lookup(&self, cycle: u64) -> Option<PhaseSymbol> {
        Some(self.symbol(cycle))
    }
}

impl SymbolRecord for HashMap<u64, PhaseSymbol> {
    fn lookup(&self, cycle: u64) -> Option<PhaseSymbol> {
        self.get(&cycle).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    QberAboveThreshold,
    VerificationFailed,
}

/// What one endpoint knows at the end of a block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutcome {
    pub block: u64,
    pub announced_clicks: usize,
    pub sifted_new: usize,
    /// Sifted buffer that entered distillation; `None` when carried over.
    pub processed: Option<BitString>,
    pub q_est: Option<f64>,
    pub sample_errors: usize,
    pub leaked_bits: usize,
    /// Bits Bob flipped during reconciliation (always 0 for Alice).
    pub corrected: usize,
    pub aborted: Option<AbortReason>,
    pub secret: BitString,
}

impl BlockOutcome {
    fn new(block: u64) -> Self {
        Self {
            block,
            announced_clicks: 0,
            sifted_new: 0,
            processed: None,
            q_est: None,
            sample_errors: 0,
            leaked_bits: 0,
            corrected: 0,
            aborted: None,
            secret: BitString::new(),
        }
    }

    pub fn carried(&self) -> bool {
        self.processed.is_none()
    }
}

fn unexpected(party: Party, phase: &str, msg: &Message) -> Error {
    Error::Protocol(format!(
        "{party:?} in {phase} got unexpected {}",
        msg.kind()
    ))
}

fn check_block(party: Party, current: Option<u64>, msg: &Message) -> Result<u64> {
    match current {
        Some(b) if b == msg.block() => Ok(b),
        Some(b) => Err(Error::Protocol(format!(
            "{party:?} on block {b} got {} for block {}",
            msg.kind(),
            msg.block()
        ))),
        None => Err(Error::Protocol(format!(
            "{party:?} idle got {}",
            msg.kind()
        ))),
    }
}

fn bits_to_u8(bits: &BitString) -> Vec<u8> {
    bits.iter().map(u8::from).collect()
}

fn u8_to_bits(values: &[u8]) -> Result<BitString> {
    values
        .iter()
        .map(|&v| match v {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Protocol(format!("bit value {other}"))),
        })
        .collect()
}

fn pack_words32(bits: &BitString) -> Vec<u32> {
    let n_words = bits.len().div_ceil(32);
    bits.words()
        .iter()
        .flat_map(|&w| [w as u32, (w >> 32) as u32])
        .take(n_words)
        .collect()
}

fn unpack_words32(words: &[u32], len: usize) -> Result<BitString> {
    if words.len() != len.div_ceil(32) {
        return Err(Error::Protocol(format!(
            "{} words cannot hold exactly {len} bits",
            words.len()
        )));
    }
    let packed = words
        .chunks(2)
        .map(|c| u64::from(c[0]) | c.get(1).map_or(0, |&hi| u64::from(hi) << 32))
        .collect();
    Ok(BitString::from_words(packed, len))
}

fn random_bits(stream: &mut Stream, len: usize) -> BitString {
    let words = (0..len.div_ceil(64)).map(|_| stream.next_u64()).collect();
    BitString::from_words(words, len)
}

/// Key material both sides hold after sampling.
struct Estimated {
    q_est: f64,
    remainder: BitString,
}

enum AlicePhase {
    Idle,
    AwaitAnnounce,
    AwaitSampleBits {
        positions: Vec<usize>,
        processed: BitString,
    },
    Reconciling {
        est: Estimated,
        cascade: CascadeAlice,
    },
    Done,
}

pub struct Alice {
    params: DistillParams,
    root_seed: u64,
    carry: BitString,
    tally: SampleTally,
    record: Option<Box<dyn SymbolRecord + Send>>,
    stream: Stream,
    phase: AlicePhase,
    outcome: BlockOutcome,
}

impl Alice {
    pub fn new(params: DistillParams, root_seed: u64) -> Self {
        Self {
            params,
            root_seed,
            carry: BitString::new(),
            tally: SampleTally::default(),
            record: None,
            stream: rng::stream(0),
            phase: AlicePhase::Idle,
            outcome: BlockOutcome::new(0),
        }
    }

    pub fn begin_block(
        &mut self,
        block: u64,
        record: Box<dyn SymbolRecord + Send>,
    ) -> Vec<Message> {
        self.record = Some(record);
        self.stream = rng::stream(rng::derive(
            self.root_seed,
            rng::domain::ALICE_CLASSICAL,
            block,
        ));
        self.phase = AlicePhase::AwaitAnnounce;
        self.outcome = BlockOutcome::new(block);
        Vec::new()
    }

    pub fn block_done(&self) -> bool {
        matches!(self.phase, AlicePhase::Done)
    }

    pub fn outcome(&self) -> &BlockOutcome {
        &self.outcome
    }

    fn current_block(&self) -> Option<u64> {
        match self.phase {
            AlicePhase::Idle | AlicePhase::Done => None,
            _ => Some(self.outcome.block),
        }
    }

    pub fn handle(&mut self, msg: Message) -> Result<Vec<Message>> {
        let block = check_block(Party::Alice, self.current_block(), &msg)?;
        match (std::mem::replace(&mut self.phase, AlicePhase::Done), msg) {
            (AlicePhase::AwaitAnnounce, Message::BasisAnnounce { cycles, bases, .. }) => {
                self.on_announce(block, cycles, bases)
            }
            (
                AlicePhase::AwaitSampleBits {
                    positions,
                    processed,
                },
                Message::SampleBits { bits, .. },
            ) => self.on_sample_bits(block, positions, processed, bits),
            (AlicePhase::Reconciling { est, cascade }, Message::ParityRequest { ranges, .. }) => {
                let answers = cascade.answer(&decode_queries(&ranges)?)?;
                self.outcome.leaked_bits += answers.len();
                self.phase = AlicePhase::Reconciling { est, cascade };
                Ok(vec![Message::ParityResponse {
                    block,
                    parities: answers.into_iter().map(u8::from).collect(),
                }])
            }
            (AlicePhase::Reconciling { est, .. }, Message::Fingerprint { seed, value, .. }) => {
                self.on_fingerprint(block, est, seed, value)
            }
            (phase, msg) => {
                let name = match phase {
                    AlicePhase::Idle => "idle",
                    AlicePhase::AwaitAnnounce => "await_announce",
                    AlicePhase::AwaitSampleBits { .. } => "await_sample_bits",
                    AlicePhase::Reconciling { .. } => "reconciling",
                    AlicePhase::Done => "done",
                };
                Err(unexpected(Party::Alice, name, &msg))
            }
        }
    }

    fn on_announce(
        &mut self,
        block: u64,
        cycles: Vec<u64>,
        bob_bases: Vec<u8>,
    ) -> Result<Vec<Message>> {
        if cycles.len() != bob_bases.len() {
            return Err(Error::Protocol("basis announcement length mismatch".into()));
        }
        let record = self.record.as_ref().expect("record set in begin_block");
        let mut mine = Vec::with_capacity(cycles.len());
        for (&c, &bob_basis) in cycles.iter().zip(&bob_bases) {
            let s = record
                .lookup(c)
                .ok_or_else(|| Error::Protocol(format!("Alice has no record of cycle {c}")))?;
            if s.basis() == bob_basis {
                self.carry.push(s.bit() == 1);
                self.outcome.sifted_new += 1;
            }
            mine.push(s.basis());
        }
        self.outcome.announced_clicks = cycles.len();
        let mut out = vec![Message::BasisAnnounce {
            block,
            cycles,
            bases: mine,
        }];
        if self.carry.len() < MIN_RECONCILE_BITS {
            self.phase = AlicePhase::Done;
            return Ok(out);
        }
        let processed = std::mem::take(&mut self.carry);
        let k = sample_size(processed.len(), self.params.sample_fraction);
        let positions = sample_positions(processed.len(), k, self.stream.next_u64());
        out.push(Message::SampleIndices {
            block,
            indices: positions.iter().map(|&p| p as u64).collect(),
        });
        self.phase = AlicePhase::AwaitSampleBits {
            positions,
            processed,
        };
        Ok(out)
    }

    fn on_sample_bits(
        &mut self,
        block: u64,
        positions: Vec<usize>,
        processed: BitString,
        bob_bits: Vec<u8>,
    ) -> Result<Vec<Message>> {
        let bob_bits = u8_to_bits(&bob_bits)?;
        if bob_bits.len() != positions.len() {
            return Err(Error::Protocol("sample bit count mismatch".into()));
        }
        let mine = processed.gather(&positions);
        let errors = mine.hamming_distance(&bob_bits)?;
        let q_est = errors as f64 / positions.len() as f64;
        let remainder = processed.without_sorted(&positions);
        self.tally.add(positions.len(), errors);
        self.outcome.q_est = Some(q_est);
        self.outcome.sample_errors = errors;
        self.outcome.processed = Some(processed);

        let mut out = vec![Message::SampleBits {
            block,
            bits: bits_to_u8(&mine),
        }];
        if q_est > self.params.qber_abort {
            self.outcome.aborted = Some(AbortReason::QberAboveThreshold);
            out.push(Message::Abort {
                block,
                reason: vec![abort_code::QBER_ABOVE_THRESHOLD],
            });
            self.phase = AlicePhase::Done;
            return Ok(out);
        }
        let shuffle = self.stream.next_u64();
        let cascade = CascadeAlice::new(&remainder, self.tally.cascade_qber(), shuffle);
        out.push(Message::ShuffleSeed {
            block,
            seed: split_u64(shuffle),
        });
        self.phase = AlicePhase::Reconciling {
            est: Estimated { q_est, remainder },
            cascade,
        };
        Ok(out)
    }

    fn on_fingerprint(
        &mut self,
        block: u64,
        est: Estimated,
        seed: Vec<u32>,
        value: Vec<u32>,
    ) -> Result<Vec<Message>> {
        let seed = join_u64(&seed)?;
        let theirs = join_u64(&value)?;
        let key = KeyBuffer::new(est.remainder, Stage::Reconciled);
        let mine = fingerprint(&key, seed);
        self.phase = AlicePhase::Done;
        if mine != theirs {
            self.outcome.aborted = Some(AbortReason::VerificationFailed);
            return Ok(vec![Message::Abort {
                block,
                reason: vec![abort_code::VERIFICATION_FAILED],
            }]);
        }
        let mut out = vec![Message::Fingerprint {
            block,
            seed: split_u64(seed),
            value: split_u64(mine),
        }];
        let ell = secret_length(key.len(), est.q_est, self.outcome.leaked_bits, &self.params);
        if ell > 0 {
            let hash_seed = random_bits(&mut self.stream, toeplitz_seed_len(key.len(), ell));
            self.outcome.secret = toeplitz_hash(&key, &hash_seed, ell)?.into_bits();
            out.push(Message::HashSeed {
                block,
                words: pack_words32(&hash_seed),
            });
        }
        Ok(out)
    }
}

enum BobPhase {
    Idle,
    AwaitBases {
        observed: Vec<(u64, PhaseSymbol)>,
    },
    AwaitSampleIndices {
        processed: BitString,
    },
    AwaitSampleBits {
        positions: Vec<usize>,
        processed: BitString,
    },
    AwaitShuffle {
        est: Estimated,
        q_cascade: f64,
    },
    Reconciling {
        q_est: f64,
        cascade: CascadeBob,
    },
    AwaitFingerprint {
        q_est: f64,
        key: BitString,
        seed: u64,
        value: u64,
    },
    AwaitHashSeed {
        key: BitString,
        ell: usize,
    },
    Done,
}

impl BobPhase {
    fn name(&self) -> &'static str {
        match self {
            BobPhase::Idle => "idle",
            BobPhase::AwaitBases { .. } => "await_bases",
            BobPhase::AwaitSampleIndices { .. } => "await_sample_indices",
            BobPhase::AwaitSampleBits { .. } => "await_sample_bits",
            BobPhase::AwaitShuffle { .. } => "await_shuffle",
            BobPhase::Reconciling { .. } => "reconciling",
            BobPhase::AwaitFingerprint { .. } => "await_fingerprint",
            BobPhase::AwaitHashSeed { .. } => "await_hash_seed",
            BobPhase::Done => "done",
        }
    }
}

pub struct Bob {
    params: DistillParams,
    root_seed: u64,
    carry: BitString,
    tally: SampleTally,
    stream: Stream,
    phase: BobPhase,
    outcome: BlockOutcome,
}

impl Bob {
    pub fn new(params: DistillParams, root_seed: u64) -> Self {
        Self {
            params,
            root_seed,
            carry: BitString::new(),
            tally: SampleTally::default(),
            stream: rng::stream(0),
            phase: BobPhase::Idle,
            outcome: BlockOutcome::new(0),
        }
    }

    /// `observed` lists Bob's clicked cycles (increasing) with his own
    /// modulation choice for each.
    pub fn begin_block(&mut self, block: u64, observed: Vec<(u64, PhaseSymbol)>) -> Vec<Message> {
        self.stream = rng::stream(rng::derive(
            self.root_seed,
            rng::domain::BOB_CLASSICAL,
            block,
        ));
        self.outcome = BlockOutcome::new(block);
        self.outcome.announced_clicks = observed.len();
        let msg = Message::BasisAnnounce {
            block,
            cycles: observed.iter().map(|(c, _)| *c).collect(),
            bases: observed.iter().map(|(_, s)| s.basis()).collect(),
        };
        self.phase = BobPhase::AwaitBases { observed };
        vec![msg]
    }

    pub fn block_done(&self) -> bool {
        matches!(self.phase, BobPhase::Done)
    }

    pub fn outcome(&self) -> &BlockOutcome {
        &self.outcome
    }

    fn current_block(&self) -> Option<u64> {
        match self.phase {
            BobPhase::Idle | BobPhase::Done => None,
            _ => Some(self.outcome.block),
        }
    }

    pub fn handle(&mut self, msg: Message) -> Result<Vec<Message>> {
        let block = check_block(Party::Bob, self.current_block(), &msg)?;
        let phase = std::mem::replace(&mut self.phase, BobPhase::Done);
        match (phase, msg) {
            (BobPhase::AwaitBases { observed }, Message::BasisAnnounce { cycles, bases, .. }) => {
                if bases.len() != observed.len()
                    || cycles.iter().zip(&observed).any(|(c, (o, _))| c != o)
                {
                    return Err(Error::Protocol(
                        "basis reply does not match announcement".into(),
                    ));
                }
                for ((_, s), &alice_basis) in observed.iter().zip(&bases) {
                    if s.basis() == alice_basis {
                        self.carry.push(s.bit() == 1);
                        self.outcome.sifted_new += 1;
                    }
                }
                if self.carry.len() >= MIN_RECONCILE_BITS {
                    self.phase = BobPhase::AwaitSampleIndices {
                        processed: std::mem::take(&mut self.carry),
                    };
                }
                Ok(Vec::new())
            }
            (
                BobPhase::AwaitSampleIndices { processed },
                Message::SampleIndices { indices, .. },
            ) => {
                let n = processed.len();
                let positions: Vec<usize> = indices.iter().map(|&i| i as usize).collect();
                if positions.len() != sample_size(n, self.params.sample_fraction)
                    || positions.windows(2).any(|w| w[0] >= w[1])
                    || positions.last().is_some_and(|&p| p >= n)
                {
                    return Err(Error::Protocol("invalid sample indices".into()));
                }
                let mine = processed.gather(&positions);
                self.phase = BobPhase::AwaitSampleBits {
                    positions,
                    processed,
                };
                Ok(vec![Message::SampleBits {
                    block,
                    bits: bits_to_u8(&mine),
                }])
            }
            (
                BobPhase::AwaitSampleBits {
                    positions,
                    processed,
                },
                Message::SampleBits { bits, .. },
            ) => {
                let alice = u8_to_bits(&bits)?;
                if alice.len() != positions.len() {
                    return Err(Error::Protocol("sample bit count mismatch".into()));
                }
                let errors = processed.gather(&positions).hamming_distance(&alice)?;
                let q_est = errors as f64 / positions.len() as f64;
                self.outcome.q_est = Some(q_est);
                self.outcome.sample_errors = errors;
                let remainder = processed.without_sorted(&positions);
                self.outcome.processed = Some(processed);
                self.phase = BobPhase::AwaitShuffle {
                    est: Estimated { q_est, remainder },
                    q_cascade: {
                        self.tally.add(positions.len(), errors);
                        self.tally.cascade_qber()
                    },
                };
                Ok(Vec::new())
            }
            (BobPhase::AwaitShuffle { est, .. }, Message::Abort { .. }) => {
                if est.q_est <= self.params.qber_abort {
                    return Err(Error::Protocol("abort below the QBER threshold".into()));
                }
                self.outcome.aborted = Some(AbortReason::QberAboveThreshold);
                Ok(Vec::new())
            }
            (BobPhase::AwaitShuffle { est, q_cascade }, Message::ShuffleSeed { seed, .. }) => {
                if est.q_est > self.params.qber_abort {
                    return Err(Error::Protocol(
                        "reconciliation above the QBER threshold".into(),
                    ));
                }
                let (cascade, first) =
                    CascadeBob::start(est.remainder, q_cascade, join_u64(&seed)?);
                let first = first.ok_or_else(|| Error::Protocol("nothing to reconcile".into()))?;
                self.phase = BobPhase::Reconciling {
                    q_est: est.q_est,
                    cascade,
                };
                Ok(vec![Message::ParityRequest {
                    block,
                    ranges: encode_queries(&first),
                }])
            }
            (
                BobPhase::Reconciling { q_est, mut cascade },
                Message::ParityResponse { parities, .. },
            ) => {
                let answers = u8_to_bits(&parities)?;
                let answers: Vec<bool> = answers.iter().collect();
                if let Some(next) = cascade.respond(&answers)? {
                    self.phase = BobPhase::Reconciling { q_est, cascade };
                    return Ok(vec![Message::ParityRequest {
                        block,
                        ranges: encode_queries(&next),
                    }]);
                }
                let (key, report) = cascade.finish();
                self.outcome.leaked_bits = report.leaked_bits;
                self.outcome.corrected = report.corrected_positions.len();
                let seed = self.stream.next_u64();
                let value = fingerprint(&KeyBuffer::new(key.clone(), Stage::Reconciled), seed);
                self.phase = BobPhase::AwaitFingerprint {
                    q_est,
                    key,
                    seed,
                    value,
                };
                Ok(vec![Message::Fingerprint {
                    block,
                    seed: split_u64(seed),
                    value: split_u64(value),
                }])
            }
            (BobPhase::AwaitFingerprint { .. }, Message::Abort { .. }) => {
                self.outcome.aborted = Some(AbortReason::VerificationFailed);
                Ok(Vec::new())
            }
            (
                BobPhase::AwaitFingerprint {
                    q_est,
                    key,
                    seed,
                    value,
                },
                Message::Fingerprint {
                    seed: s, value: v, ..
                },
            ) => {
                if join_u64(&s)? != seed {
                    return Err(Error::Protocol("fingerprint seed changed".into()));
                }
                if join_u64(&v)? != value {
                    self.outcome.aborted = Some(AbortReason::VerificationFailed);
                    return Ok(Vec::new());
                }
                let ell = secret_length(key.len(), q_est, self.outcome.leaked_bits, &self.params);
                if ell > 0 {
                    self.phase = BobPhase::AwaitHashSeed { key, ell };
                }
                Ok(Vec::new())
            }
            (BobPhase::AwaitHashSeed { key, ell }, Message::HashSeed { words, .. }) => {
                let seed = unpack_words32(&words, toeplitz_seed_len(key.len(), ell))?;
                let key = KeyBuffer::new(key, Stage::Reconciled);
                self.outcome.secret = toeplitz_hash(&key, &seed, ell)?.into_bits();
                Ok(Vec::new())
            }
            (phase, msg) => Err(unexpected(Party::Bob, phase.name(), &msg)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words32_roundtrip() {
        for len in [1usize, 31, 32, 33, 64, 65, 100] {
            let bits = BitString::from_bools((0..len).map(|i| i % 3 != 1));
            let words = pack_words32(&bits);
            assert_eq!(words.len(), len.div_ceil(32));
            assert_eq!(unpack_words32(&words, len).unwrap(), bits);
        }
        assert!(unpack_words32(&[1, 2, 3], 33).is_err());
    }

    #[test]
    fn messages_for_wrong_block_rejected() {
        let mut alice = Alice::new(DistillParams::default(), 1);
        let record: HashMap<u64, PhaseSymbol> = HashMap::new();
        alice.begin_block(4, Box::new(record));
        let err = alice
            .handle(Message::BasisAnnounce {
                block: 5,
                cycles: vec![],
                bases: vec![],
            })
            .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn small_blocks_carry_over() {
        let mut alice = Alice::new(DistillParams::default(), 1);
        let mut bob = Bob::new(DistillParams::default(), 2);
        let sym = PhaseSymbol::new(0, 1).unwrap();
        let record: HashMap<u64, PhaseSymbol> = (0..10).map(|c| (c, sym)).collect();
        alice.begin_block(0, Box::new(record));
        let out = bob.begin_block(0, (0..10).map(|c| (c, sym)).collect());
        let reply = alice.handle(out.into_iter().next().unwrap()).unwrap();
        assert_eq!(reply.len(), 1);
        assert!(alice.block_done());
        assert!(alice.outcome().carried());
        assert!(bob
            .handle(reply.into_iter().next().unwrap())
            .unwrap()
            .is_empty());
        assert!(bob.block_done());
        assert_eq!(bob.outcome().sifted_new, 10);
        assert_eq!(bob.carry.len(), 10);
    }
}
