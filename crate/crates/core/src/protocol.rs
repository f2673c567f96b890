//! Four-state phase encoding, Monte Carlo detection and sifting.
//!
//! Both parties' per-cycle choices are counter-based draws keyed by a
//! per-party subseed, so each endpoint can recompute its own symbol for any
//! cycle. The click process is simulated by candidate thinning: candidate
//! cycles are drawn with geometric gaps at the maximum click probability
//! and each candidate is accepted with probability p(Δφ)/p_max. This is
//! exact for independent per-cycle Bernoulli clicks and costs O(clicks)
//! rather than O(cycles).

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distill::{KeyBuffer, Stage};
use crate::error::{Error, Result};
use crate::linkmodel::LinkBudget;
use crate::rng::{self, domain};
use crate::BitString;

/// Cycles simulated from one ChaCha stream. Chunks are independent, so
/// they can run in parallel without changing the result.
pub const CHUNK_CYCLES: u64 = 1 << 24;

pub const LOG_MAGIC: &str = "# scwqkd-log v1";

/// A (basis, bit) pair; phase = basis·π/2 + bit·π.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhaseSymbol {
    basis: u8,
    bit: u8,
}

impl PhaseSymbol {
    pub fn new(basis: u8, bit: u8) -> Result<Self> {
        if basis > 1 || bit > 1 {
            return Err(Error::InvalidArgument(format!(
                "symbol ({basis}, {bit}) outside {{0,1}}x{{0,1}}"
            )));
        }
        Ok(Self { basis, bit })
    }

    /// From the low two bits of `v`: bit 0 is the basis, bit 1 the value.
    #[inline]
    pub fn from_low_bits(v: u64) -> Self {
        Self {
            basis: (v & 1) as u8,
            bit: ((v >> 1) & 1) as u8,
        }
    }

    #[inline]
    pub fn basis(self) -> u8 {
        self.basis
    }

    #[inline]
    pub fn bit(self) -> u8 {
        self.bit
    }

    /// Phase in units of π/2, in 0..4.
    #[inline]
    pub fn quarter_turns(self) -> u8 {
        self.basis + 2 * self.bit
    }
}

pub fn encode_phase(symbol: PhaseSymbol) -> f64 {
    symbol.quarter_turns() as f64 * FRAC_PI_2
}

/// Counter-based source of one party's per-cycle choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymbolSource {
    key: u64,
}

impl SymbolSource {
    pub fn new(key: u64) -> Self {
        Self { key }
    }

    #[inline]
    pub fn symbol(&self, cycle: u64) -> PhaseSymbol {
        PhaseSymbol::from_low_bits(rng::counter_u64(self.key, cycle))
    }
}

/// Subseeds for one simulated block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSeeds {
    pub alice: u64,
    pub bob: u64,
    pub clicks: u64,
}

impl BlockSeeds {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            alice: rng::derive(seed, domain::ALICE_SYMBOLS, 0),
            bob: rng::derive(seed, domain::BOB_SYMBOLS, 0),
            clicks: rng::derive(seed, domain::CLICKS, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Click {
    pub cycle: u64,
    pub alice: PhaseSymbol,
    pub bob: PhaseSymbol,
}

/// Sparse record of the cycles in which the detector clicked.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectionLog {
    pub n_cycles: u64,
    pub clicks: Vec<Click>,
}

impl DetectionLog {
    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<u64> = None;
        for (k, c) in self.clicks.iter().enumerate() {
            if c.cycle >= self.n_cycles {
                return Err(Error::InvalidArgument(format!(
                    "click {k}: cycle {} >= n_cycles {}",
                    c.cycle, self.n_cycles
                )));
            }
            if prev.is_some_and(|p| c.cycle <= p) {
                return Err(Error::InvalidArgument(format!(
                    "click {k}: cycle {} not strictly increasing",
                    c.cycle
                )));
            }
            prev = Some(c.cycle);
        }
        Ok(())
    }

    /// Keeps each click independently with probability `keep`.
    pub fn thinned(&self, keep: f64, seed: u64) -> DetectionLog {
        if keep >= 1.0 {
            return self.clone();
        }
        let mut stream = rng::stream(seed);
        let clicks = self
            .clicks
            .iter()
            .filter(|_| stream.random::<f64>() < keep)
            .copied()
            .collect();
        DetectionLog {
            n_cycles: self.n_cycles,
            clicks,
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W, comments: &[String]) -> Result<()> {
        writeln!(out, "{LOG_MAGIC}, n_cycles={}", self.n_cycles)?;
        for line in comments {
            writeln!(out, "# {line}")?;
        }
        for c in &self.clicks {
            writeln!(
                out,
                "{},{},{},{},{}",
                c.cycle, c.alice.basis, c.alice.bit, c.bob.basis, c.bob.bit
            )?;
        }
        out.flush()?;
        Ok(())
    }

    /// Every line, including the last, must end in a newline; an
    /// unterminated final line is reported as truncation.
    pub fn read_from<R: BufRead>(mut input: R) -> Result<DetectionLog> {
        let mut line = String::new();
        let mut lineno = 0usize;
        let mut next_line = |line: &mut String| -> Result<Option<usize>> {
            line.clear();
            if input.read_line(line)? == 0 {
                return Ok(None);
            }
            lineno += 1;
            if !line.ends_with('\n') {
                return Err(Error::MalformedLog {
                    line: lineno,
                    reason: "unterminated line (file truncated?)".into(),
                });
            }
            Ok(Some(lineno))
        };
        if next_line(&mut line)?.is_none() {
            return Err(Error::MalformedLog {
                line: 1,
                reason: "empty file".into(),
            });
        }
        let n_cycles = parse_header(line.trim_end()).ok_or_else(|| Error::MalformedLog {
            line: 1,
            reason: format!("expected `{LOG_MAGIC}, n_cycles=<N>`"),
        })?;
        let mut clicks = Vec::new();
        while let Some(lineno) = next_line(&mut line)? {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let click = parse_click(trimmed).map_err(|reason| Error::MalformedLog {
                line: lineno,
                reason,
            })?;
            if click.cycle >= n_cycles {
                return Err(Error::MalformedLog {
                    line: lineno,
                    reason: format!("cycle {} >= n_cycles {n_cycles}", click.cycle),
                });
            }
            if clicks
                .last()
                .is_some_and(|p: &Click| click.cycle <= p.cycle)
            {
                return Err(Error::MalformedLog {
                    line: lineno,
                    reason: format!("cycle {} not strictly increasing", click.cycle),
                });
            }
            clicks.push(click);
        }
        Ok(DetectionLog { n_cycles, clicks })
    }
}

fn parse_header(line: &str) -> Option<u64> {
    let rest = line.strip_prefix(LOG_MAGIC)?.trim_start();
    let rest = rest.strip_prefix(',')?.trim();
    rest.strip_prefix("n_cycles=")?.trim().parse().ok()
}

fn parse_click(line: &str) -> std::result::Result<Click, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 fields, found {}", fields.len()));
    }
    let cycle = fields[0]
        .parse::<u64>()
        .map_err(|e| format!("cycle_index: {e}"))?;
    let mut v = [0u8; 4];
    for (slot, f) in v.iter_mut().zip(&fields[1..]) {
        *slot = f.parse::<u8>().map_err(|e| format!("{f:?}: {e}"))?;
    }
    let alice = PhaseSymbol::new(v[0], v[1]).map_err(|e| e.to_string())?;
    let bob = PhaseSymbol::new(v[2], v[3]).map_err(|e| e.to_string())?;
    Ok(Click { cycle, alice, bob })
}

impl fmt::Display for DetectionLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} clicks in {} cycles",
            self.clicks.len(),
            self.n_cycles
        )
    }
}

/// Click probability indexed by (φ_A − φ_B) in quarter turns, with exact
/// cosines so Δφ = π/2 contributes exactly μ′/2.
fn class_probabilities(budget: &LinkBudget) -> [f64; 4] {
    let base = |cos: f64| {
        (budget.p_dark + budget.mu_detected * (1.0 + budget.visibility * cos) / 2.0).clamp(0.0, 1.0)
    };
    [base(1.0), base(0.0), base(-1.0), base(0.0)]
}

pub fn simulate_block(budget: &LinkBudget, n_cycles: u64, seed: u64) -> Result<DetectionLog> {
    simulate_block_with(budget, n_cycles, &BlockSeeds::from_seed(seed))
}

pub fn simulate_block_with(
    budget: &LinkBudget,
    n_cycles: u64,
    seeds: &BlockSeeds,
) -> Result<DetectionLog> {
    if n_cycles == 0 {
        return Err(Error::InvalidArgument("n_cycles must be >= 1".into()));
    }
    budget.validate()?;
    let probs = class_probabilities(budget);
    let p_max = probs.iter().copied().fold(0.0, f64::max);
    if p_max <= 0.0 {
        return Ok(DetectionLog {
            n_cycles,
            clicks: Vec::new(),
        });
    }
    let alice = SymbolSource::new(seeds.alice);
    let bob = SymbolSource::new(seeds.bob);
    let n_chunks = n_cycles.div_ceil(CHUNK_CYCLES);
    let chunks: Vec<Vec<Click>> = (0..n_chunks)
        .into_par_iter()
        .map(|k| {
            let start = k * CHUNK_CYCLES;
            let end = (start + CHUNK_CYCLES).min(n_cycles);
            let mut stream = rng::stream(rng::derive(seeds.clicks, domain::CHUNK, k));
            simulate_range(start, end, &probs, p_max, &alice, &bob, &mut stream)
        })
        .collect();
    Ok(DetectionLog {
        n_cycles,
        clicks: chunks.into_iter().flatten().collect(),
    })
}

fn simulate_range(
    start: u64,
    end: u64,
    probs: &[f64; 4],
    p_max: f64,
    alice: &SymbolSource,
    bob: &SymbolSource,
    stream: &mut rng::Stream,
) -> Vec<Click> {
    let mut clicks = Vec::new();
    let log_miss = (-p_max).ln_1p();
    let mut cycle = start;
    loop {
        if p_max < 1.0 {
            let gap = (rng::open_unit(stream).ln() / log_miss).floor();
            if gap >= (end - cycle) as f64 {
                break;
            }
            cycle += gap as u64;
        }
        if cycle >= end {
            break;
        }
        let a = alice.symbol(cycle);
        let b = bob.symbol(cycle);
        let class = ((4 + a.quarter_turns() - b.quarter_turns()) % 4) as usize;
        let p = probs[class];
        if p >= p_max || stream.random::<f64>() * p_max < p {
            clicks.push(Click {
                cycle,
                alice: a,
                bob: b,
            });
        }
        cycle += 1;
    }
    clicks
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiftResult {
    pub alice_key: KeyBuffer,
    pub bob_key: KeyBuffer,
    pub kept_indices: Vec<u64>,
}

/// Keeps clicks whose bases match. Alice's bit is her encoded bit, Bob's
/// is his own modulation-choice bit.
pub fn sift(log: &DetectionLog) -> SiftResult {
    let mut alice = BitString::new();
    let mut bob = BitString::new();
    let mut kept = Vec::new();
    for c in log.clicks.iter().filter(|c| c.alice.basis == c.bob.basis) {
        alice.push(c.alice.bit == 1);
        bob.push(c.bob.bit == 1);
        kept.push(c.cycle);
    }
    SiftResult {
        alice_key: KeyBuffer::new(alice, Stage::Sifted),
        bob_key: KeyBuffer::new(bob, Stage::Sifted),
        kept_indices: kept,
    }
}

/// Hamming distance over length.
pub fn measured_qber(a: &KeyBuffer, b: &KeyBuffer) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::KeyTooShort("QBER of empty keys".into()));
    }
    Ok(a.bits().hamming_distance(b.bits())? as f64 / a.len() as f64)
}
