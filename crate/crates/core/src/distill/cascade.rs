//! Cascade reconciliation.
//!
//! Bob drives the protocol. Each pass shuffles the key with a seeded
//! permutation, splits it into blocks (initial size max(8, round(0.73/q)),
//! doubling every pass) and asks Alice for the block parities. Blocks whose
//! parities disagree are bisected in parallel, one disclosed parity per
//! level. Every correction flips the parity of the block containing that
//! bit in each earlier pass, so odd blocks are re-searched, lowest pass
//! first, until all processed passes agree.
//!
//! Queries and answers are batched so one batch maps onto one
//! request/response message pair. Alice's disclosed parities are cached per
//! pass and never requested twice.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{KeyBuffer, Stage, MAX_CASCADE_QBER};
use crate::error::{Error, Result};
use crate::rng;
use crate::BitString;

pub const CASCADE_PASSES: usize = 4;

const SHUFFLE_DOMAIN: u64 = 0x6361_7363_6164_6500;

pub fn initial_block_size(q_est: f64, n: usize) -> usize {
    let k = if q_est <= 0.0 {
        n
    } else {
        ((0.73 / q_est).round() as usize).max(8)
    };
    k.clamp(1, n.max(1))
}

/// Parity request for positions `start..end` of a pass's shuffled order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RangeQuery {
    pub pass: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReconciliationReport {
    /// Every parity bit Alice disclosed, binary-search steps included.
    pub leaked_bits: usize,
    pub passes: usize,
    pub corrected_positions: Vec<usize>,
}

struct Layout {
    /// Shuffled position -> original position.
    perm: Vec<usize>,
    /// Original position -> shuffled position.
    inv: Vec<usize>,
    block: usize,
}

impl Layout {
    fn new(n: usize, base_block: usize, shuffle_seed: u64, pass: usize) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut stream = rng::stream(rng::derive(shuffle_seed, SHUFFLE_DOMAIN, pass as u64));
        perm.shuffle(&mut stream);
        let mut inv = vec![0; n];
        for (k, &x) in perm.iter().enumerate() {
            inv[x] = k;
        }
        let block = base_block
            .checked_shl(pass as u32)
            .unwrap_or(usize::MAX)
            .min(n.max(1));
        Self { perm, inv, block }
    }

    fn n_blocks(&self) -> usize {
        self.perm.len().div_ceil(self.block)
    }

    fn block_range(&self, b: usize) -> (usize, usize) {
        let start = b * self.block;
        (start, (start + self.block).min(self.perm.len()))
    }

    fn permute(&self, key: &BitString) -> BitString {
        key.gather(&self.perm)
    }
}

/// Alice's side: answers parity queries from her shuffled key copies.
pub struct CascadeAlice {
    shuffled: Vec<BitString>,
}

impl CascadeAlice {
    pub fn new(key: &BitString, q_est: f64, shuffle_seed: u64) -> Self {
        let n = key.len();
        let base = initial_block_size(q_est, n);
        let shuffled = (0..CASCADE_PASSES)
            .map(|p| Layout::new(n, base, shuffle_seed, p).permute(key))
            .collect();
        Self { shuffled }
    }

    pub fn answer(&self, queries: &[RangeQuery]) -> Result<Vec<bool>> {
        queries
            .iter()
            .map(|q| {
                let bits = self
                    .shuffled
                    .get(q.pass)
                    .ok_or_else(|| Error::Protocol(format!("parity query for pass {}", q.pass)))?;
                if q.start >= q.end || q.end > bits.len() {
                    return Err(Error::Protocol(format!(
                        "parity query range {}..{} outside key of {} bits",
                        q.start,
                        q.end,
                        bits.len()
                    )));
                }
                Ok(bits.range_parity(q.start, q.end))
            })
            .collect()
    }
}

struct BobPass {
    layout: Layout,
    bits: BitString,
    alice_top: Vec<bool>,
    bob_top: Vec<bool>,
    /// Alice's parities already disclosed for sub-ranges of this pass.
    known: HashMap<(usize, usize), bool>,
}

impl BobPass {
    fn odd_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        self.alice_top
            .iter()
            .zip(&self.bob_top)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy)]
struct Search {
    start: usize,
    end: usize,
    alice_parity: bool,
}

impl Search {
    fn mid(&self) -> usize {
        self.start + (self.end - self.start) / 2
    }

    /// Keeps the half whose parities disagree.
    fn step(&mut self, alice_left: bool, bob_left: bool) {
        let mid = self.mid();
        if alice_left != bob_left {
            self.end = mid;
            self.alice_parity = alice_left;
        } else {
            self.start = mid;
            self.alice_parity ^= alice_left;
        }
    }
}

enum State {
    /// Top-level parities for this pass are outstanding.
    AwaitTop(usize),
    /// Bisecting odd blocks of `pass` while processing pass `current`.
    AwaitSearch {
        pass: usize,
        current: usize,
        searches: Vec<Search>,
    },
    Done,
}

/// Bob's side of Cascade.
pub struct CascadeBob {
    key: BitString,
    base_block: usize,
    shuffle_seed: u64,
    passes: Vec<BobPass>,
    state: State,
    pending: Vec<RangeQuery>,
    leaked: usize,
    corrected: Vec<usize>,
}

impl CascadeBob {
    /// Returns the machine and its first batch of queries (empty only for an
    /// empty key).
    pub fn start(key: BitString, q_est: f64, shuffle_seed: u64) -> (Self, Option<Vec<RangeQuery>>) {
        let base_block = initial_block_size(q_est, key.len());
        let mut bob = Self {
            key,
            base_block,
            shuffle_seed,
            passes: Vec::with_capacity(CASCADE_PASSES),
            state: State::Done,
            pending: Vec::new(),
            leaked: 0,
            corrected: Vec::new(),
        };
        let first = if bob.key.is_empty() {
            None
        } else {
            bob.begin_pass(0)
        };
        (bob, first)
    }

    pub fn is_done(&self) -> bool {
        matches!(self.state, State::Done)
    }

    pub fn leaked_bits(&self) -> usize {
        self.leaked
    }

    /// Consumes Alice's answers to the last batch; returns the next batch or
    /// `None` once reconciliation is finished.
    pub fn respond(&mut self, parities: &[bool]) -> Result<Option<Vec<RangeQuery>>> {
        if self.is_done() {
            return Err(Error::Protocol(
                "parity response after Cascade finished".into(),
            ));
        }
        if parities.len() != self.pending.len() {
            return Err(Error::Protocol(format!(
                "expected {} parities, got {}",
                self.pending.len(),
                parities.len()
            )));
        }
        self.leaked += parities.len();
        self.pending.clear();
        match std::mem::replace(&mut self.state, State::Done) {
            State::AwaitTop(pass) => {
                let layer = &mut self.passes[pass];
                for (b, &p) in parities.iter().enumerate() {
                    layer.known.insert(layer.layout.block_range(b), p);
                }
                layer.alice_top = parities.to_vec();
                Ok(self.advance(pass))
            }
            State::AwaitSearch {
                pass,
                current,
                searches,
            } => {
                let layer = &mut self.passes[pass];
                for (s, &alice_left) in searches.iter().zip(parities) {
                    layer.known.insert((s.start, s.mid()), alice_left);
                }
                match self.pump(pass, current, searches) {
                    Some(queries) => Ok(Some(queries)),
                    None => Ok(self.advance(current)),
                }
            }
            State::Done => unreachable!(),
        }
    }

    pub fn finish(self) -> (BitString, ReconciliationReport) {
        (
            self.key,
            ReconciliationReport {
                leaked_bits: self.leaked,
                passes: CASCADE_PASSES,
                corrected_positions: self.corrected,
            },
        )
    }

    fn begin_pass(&mut self, pass: usize) -> Option<Vec<RangeQuery>> {
        let layout = Layout::new(self.key.len(), self.base_block, self.shuffle_seed, pass);
        let bits = layout.permute(&self.key);
        let bob_top = (0..layout.n_blocks())
            .map(|b| {
                let (s, e) = layout.block_range(b);
                bits.range_parity(s, e)
            })
            .collect::<Vec<_>>();
        let queries = (0..layout.n_blocks())
            .map(|b| {
                let (start, end) = layout.block_range(b);
                RangeQuery { pass, start, end }
            })
            .collect::<Vec<_>>();
        self.passes.push(BobPass {
            layout,
            bits,
            alice_top: Vec::new(),
            bob_top,
            known: HashMap::new(),
        });
        self.state = State::AwaitTop(pass);
        self.pending = queries.clone();
        Some(queries)
    }

    /// Finds the next batch of work after pass `current`'s parities are in.
    /// Finds the next batch of work after pass `current`'s parities are in.
    fn advance(&mut self, current: usize) -> Option<Vec<RangeQuery>> {
        loop {
            let odd = self.passes.iter().enumerate().find_map(|(p, layer)| {
                let blocks: Vec<usize> = layer.odd_blocks().collect();
                (!blocks.is_empty()).then_some((p, blocks))
            });
            let Some((pass, blocks)) = odd else {
                if current + 1 >= CASCADE_PASSES {
                    self.state = State::Done;
                    return None;
                }
                return self.begin_pass(current + 1);
            };
            let layer = &self.passes[pass];
            let searches = blocks
                .into_iter()
                .map(|b| {
                    let (start, end) = layer.layout.block_range(b);
                    Search {
                        start,
                        end,
                        alice_parity: layer.alice_top[b],
                    }
                })
                .collect();
            if let Some(queries) = self.pump(pass, current, searches) {
                return Some(queries);
            }
        }
    }

    /// Advances every search as far as cached parities allow and applies the
    /// corrections found. Returns the queries still needed, if any.
    fn pump(
        &mut self,
        pass: usize,
        current: usize,
        searches: Vec<Search>,
    ) -> Option<Vec<RangeQuery>> {
        let layer = &self.passes[pass];
        let mut waiting = Vec::new();
        let mut found = Vec::new();
        for mut s in searches {
            loop {
                if s.end - s.start == 1 {
                    found.push(layer.layout.perm[s.start]);
                    break;
                }
                let mid = s.mid();
                let alice_left = match (
                    layer.known.get(&(s.start, mid)),
                    layer.known.get(&(mid, s.end)),
                ) {
                    (Some(&left), _) => left,
                    (None, Some(&right)) => s.alice_parity ^ right,
                    (None, None) => {
                        waiting.push(s);
                        break;
                    }
                };
                s.step(alice_left, layer.bits.range_parity(s.start, mid));
            }
        }
        for x in found {
            self.flip(x);
        }
        if waiting.is_empty() {
            return None;
        }
        let queries: Vec<RangeQuery> = waiting
            .iter()
            .map(|s| RangeQuery {
                pass,
                start: s.start,
                end: s.mid(),
            })
            .collect();
        self.state = State::AwaitSearch {
            pass,
            current,
            searches: waiting,
        };
        self.pending = queries.clone();
        Some(queries)
    }

    fn flip(&mut self, x: usize) {
        self.key.flip(x);
        for layer in &mut self.passes {
            let k = layer.layout.inv[x];
            layer.bits.flip(k);
            let b = k / layer.layout.block;
            layer.bob_top[b] ^= true;
        }
        self.corrected.push(x);
    }
}

/// Runs Cascade with Alice answering in-process. Alice's key is read only.
pub fn cascade_correct(
    a: &KeyBuffer,
    b: &KeyBuffer,
    q_est: f64,
    seed: u64,
) -> Result<(KeyBuffer, ReconciliationReport)> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 8 {
        return Err(Error::KeyTooShort(format!(
            "Cascade needs at least 8 bits, got {}",
            a.len()
        )));
    }
    if !(0.0..=MAX_CASCADE_QBER).contains(&q_est) {
        return Err(Error::InvalidArgument(format!(
            "q_est must be in [0, {MAX_CASCADE_QBER}], got {q_est}"
        )));
    }
    let alice = CascadeAlice::new(a.bits(), q_est, seed);
    let (mut bob, mut next) = CascadeBob::start(b.bits().clone(), q_est, seed);
    while let Some(queries) = next {
        let answers = alice.answer(&queries)?;
        next = bob.respond(&answers)?;
    }
    let (bits, report) = bob.finish();
    Ok((KeyBuffer::new(bits, Stage::Reconciled), report))
}
