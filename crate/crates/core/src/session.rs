//! Block-wise orchestration of the full pipeline.
//!
//! Per block the orchestrator simulates the detector, thins clicks by
//! ε_sys and hands each endpoint only its own view: Alice her symbol
//! source, Bob his clicked cycles with his own choices. The endpoints then
//! talk over the classical channel, either interleaved on one thread or as
//! two threads over a duplex queue. Ground-truth QBER is computed afterwards
//! from both sides' sifted buffers.

use std::collections::HashMap;
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::channel::{duplex, Mailboxes, Message, Party, Tapped, Transport, Wiretap};
use crate::distill::DistillParams;
use crate::endpoint::{AbortReason, Alice, BlockOutcome, Bob, SymbolRecord};
use crate::error::{invalid, Error, Result};
use crate::linkmodel::{
    analytic_rates, build_link_budget, sideband_photons_per_cycle, AnalyticRates, ChannelConfig,
    LinkBudget, ReceiverConfig, SourceConfig,
};
use crate::protocol::{simulate_block_with, BlockSeeds, DetectionLog, PhaseSymbol, SymbolSource};
use crate::rng::{self, domain};
use crate::BitString;

pub const HISTOGRAM_BINS: usize = 20;

/// Reported sessions: 700 kbit over 16.5 h at about 12 bps.
pub mod reference {
    pub const TOTAL_BITS: f64 = 7.0e5;
    pub const DURATION_S: f64 = 16.5 * 3600.0;
    pub const SECRET_RATE_BPS: f64 = 12.0;
    pub const KEYS_PER_MINUTE: u64 = 2;
    pub const KEY_BITS: u32 = 256;
    pub const SIDEBAND_PHOTONS: (f64, f64) = (0.195, 0.213);
    pub const QBER_BAND: (f64, f64) = (0.005, 0.035);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub block_cycles: u64,
    pub n_blocks: u64,
    pub seed: u64,
    pub source: SourceConfig,
    pub channel: ChannelConfig,
    pub receiver: ReceiverConfig,
    pub distill: DistillParams,
    /// Fraction of clicks that survive system overheads.
    pub epsilon_sys: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            block_cycles: 6_000_000_000,
            n_blocks: 990,
            seed: 0,
            source: SourceConfig::default(),
            channel: ChannelConfig::default(),
            receiver: ReceiverConfig::default(),
            distill: DistillParams::default(),
            epsilon_sys: 1.0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_cycles < 1 {
            return Err(invalid("session.block_cycles", "must be ≥ 1"));
        }
        if self.n_blocks < 1 {
            return Err(invalid("session.n_blocks", "must be ≥ 1"));
        }
        if !(self.epsilon_sys > 0.0 && self.epsilon_sys <= 1.0) {
            return Err(invalid("session.epsilon_sys", "must be in (0, 1]"));
        }
        self.distill.validate()?;
        self.budget().map(|_| ())
    }

    pub fn budget(&self) -> Result<LinkBudget> {
        build_link_budget(&self.source, &self.channel, &self.receiver)
    }

    pub fn block_duration_s(&self) -> f64 {
        self.block_cycles as f64 / self.source.repetition_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.block_duration_s() * self.n_blocks as f64
    }

    pub fn analytic(&self) -> Result<AnalyticRates> {
        analytic_rates(
            &self.budget()?,
            self.source.repetition_rate,
            self.distill.f_ec,
            self.epsilon_sys,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Interleaved,
    Concurrent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockResult {
    pub block_index: u64,
    /// Clicks after ε_sys thinning.
    pub clicks: u64,
    /// Sifted bits produced in this block.
    pub sifted_bits: u64,
    /// Bits that entered distillation (sifted plus carry; 0 when carried).
    pub processed_bits: u64,
    /// True error fraction of the processed buffer; `None` when carried.
    pub qber: Option<f64>,
    pub qber_estimate: Option<f64>,
    pub leaked_bits: u64,
    pub corrected_bits: u64,
    pub secret_bits: u64,
    pub aborted: bool,
    pub abort_reason: Option<AbortReason>,
    /// Both endpoints ended with the same secret.
    pub keys_match: bool,
}

impl BlockResult {
    pub fn is_empty(&self) -> bool {
        self.qber.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub low: f64,
    pub high: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over the observed range; a degenerate range puts
    /// everything in the first bin.
    pub fn build(values: &[f64], bins: usize) -> Option<Histogram> {
        let low = values.iter().copied().reduce(f64::min)?;
        let high = values.iter().copied().reduce(f64::max)?;
        let mut counts = vec![0u64; bins.max(1)];
        let width = (high - low) / counts.len() as f64;
        for &v in values {
            let k = if width > 0.0 {
                (((v - low) / width) as usize).min(counts.len() - 1)
            } else {
                0
            };
            counts[k] += 1;
        }
        Some(Histogram { low, high, counts })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub n_blocks: u64,
    pub non_empty_blocks: u64,
    pub aborted_blocks: u64,
    pub mismatched_blocks: u64,
    pub total_clicks: u64,
    pub total_sifted_bits: u64,
    pub total_leaked_bits: u64,
    pub total_secret_bits: u64,
    pub duration_s: f64,
    pub block_duration_s: f64,
    pub mean_qber: Option<f64>,
    pub min_qber: Option<f64>,
    pub max_qber: Option<f64>,
    pub mean_sift_rate_bps: f64,
    pub mean_secret_rate_bps: f64,
    pub min_secret_rate_bps: f64,
    pub max_secret_rate_bps: f64,
    pub qber_histogram: Option<Histogram>,
    pub secret_rate_histogram: Option<Histogram>,
    /// Closed-form prediction at the configured ε_sys.
    pub analytic: Option<AnalyticRates>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub generator: String,
    pub rng: String,
    pub seed: u64,
    pub config: SessionConfig,
    /// Config fields that are calibrated or assumed rather than measured.
    #[serde(default)]
    pub calibrated: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub metadata: ReportMetadata,
    pub blocks: Vec<BlockResult>,
    pub summary: SessionSummary,
}

impl SessionReport {
    pub fn from_blocks(config: SessionConfig, blocks: Vec<BlockResult>) -> Self {
        let block_duration_s = config.block_duration_s();
        let duration_s = block_duration_s * blocks.len() as f64;
        let qbers: Vec<f64> = blocks.iter().filter_map(|b| b.qber).collect();
        let rates: Vec<f64> = blocks
            .iter()
            .map(|b| b.secret_bits as f64 / block_duration_s)
            .collect();
        let sum = |f: fn(&BlockResult) -> u64| blocks.iter().map(f).sum::<u64>();
        let total_secret_bits = sum(|b| b.secret_bits);
        let total_sifted_bits = sum(|b| b.sifted_bits);
        let per_second = |bits: u64| {
            if duration_s > 0.0 {
                bits as f64 / duration_s
            } else {
                0.0
            }
        };
        let summary = SessionSummary {
            n_blocks: blocks.len() as u64,
            non_empty_blocks: qbers.len() as u64,
            aborted_blocks: blocks.iter().filter(|b| b.aborted).count() as u64,
            mismatched_blocks: blocks.iter().filter(|b| !b.keys_match).count() as u64,
            total_clicks: sum(|b| b.clicks),
            total_sifted_bits,
            total_leaked_bits: sum(|b| b.leaked_bits),
            total_secret_bits,
            duration_s,
            block_duration_s,
            mean_qber: (!qbers.is_empty()).then(|| qbers.iter().sum::<f64>() / qbers.len() as f64),
            min_qber: qbers.iter().copied().reduce(f64::min),
            max_qber: qbers.iter().copied().reduce(f64::max),
            mean_sift_rate_bps: per_second(total_sifted_bits),
            mean_secret_rate_bps: per_second(total_secret_bits),
            min_secret_rate_bps: rates.iter().copied().reduce(f64::min).unwrap_or(0.0),
            max_secret_rate_bps: rates.iter().copied().reduce(f64::max).unwrap_or(0.0),
            qber_histogram: Histogram::build(&qbers, HISTOGRAM_BINS),
            secret_rate_histogram: Histogram::build(&rates, HISTOGRAM_BINS),
            analytic: config.analytic().ok(),
        };
        SessionReport {
            metadata: ReportMetadata {
                generator: concat!("scwqkd ", env!("CARGO_PKG_VERSION")).to_string(),
                rng: rng::GENERATOR.to_string(),
                seed: config.seed,
                config,
                calibrated: Vec::new(),
            },
            blocks,
            summary,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

/// Everything the orchestrator derives for one block.
struct BlockInputs {
    alice_symbols: SymbolSource,
    bob_view: Vec<(u64, PhaseSymbol)>,
}

fn block_seeds(config: &SessionConfig, block: u64) -> BlockSeeds {
    BlockSeeds::from_seed(rng::derive(config.seed, domain::BLOCK, block))
}

/// Detection log of one session block after ε_sys thinning.
pub fn block_log(config: &SessionConfig, budget: &LinkBudget, block: u64) -> Result<DetectionLog> {
    Ok(
        simulate_block_with(budget, config.block_cycles, &block_seeds(config, block))?.thinned(
            config.epsilon_sys,
            rng::derive(config.seed, domain::THINNING, block),
        ),
    )
}

fn block_inputs(config: &SessionConfig, budget: &LinkBudget, block: u64) -> Result<BlockInputs> {
    let log = block_log(config, budget, block)?;
    Ok(BlockInputs {
        alice_symbols: SymbolSource::new(block_seeds(config, block).alice),
        bob_view: log.clicks.iter().map(|c| (c.cycle, c.bob)).collect(),
    })
}

fn block_result(alice: &BlockOutcome, bob: &BlockOutcome) -> Result<BlockResult> {
    let qber = match (&alice.processed, &bob.processed) {
        (Some(a), Some(b)) if !a.is_empty() => Some(a.hamming_distance(b)? as f64 / a.len() as f64),
        (None, None) => None,
        _ => {
            return Err(Error::Protocol(format!(
                "block {}: endpoints disagree on carry",
                alice.block
            )))
        }
    };
    let aborted = alice.aborted.or(bob.aborted);
    let keys_match = alice.secret == bob.secret;
    Ok(BlockResult {
        block_index: alice.block,
        clicks: bob.announced_clicks as u64,
        sifted_bits: alice.sifted_new as u64,
        processed_bits: alice.processed.as_ref().map_or(0, |p| p.len() as u64),
        qber,
        qber_estimate: alice.q_est,
        leaked_bits: alice.leaked_bits as u64,
        corrected_bits: bob.corrected as u64,
        secret_bits: if keys_match {
            alice.secret.len() as u64
        } else {
            0
        },
        aborted: aborted.is_some(),
        abort_reason: aborted,
        keys_match,
    })
}

pub fn run_session(config: &SessionConfig) -> Result<SessionReport> {
    run_session_with(config, Schedule::Interleaved, None)
}

/// Runs a session under `schedule`, optionally recording every classical
/// message in `tap`.
pub fn run_session_with(
    config: &SessionConfig,
    schedule: Schedule,
    tap: Option<&Wiretap>,
) -> Result<SessionReport> {
    config.validate()?;
    let budget = config.budget()?;
    let blocks = match schedule {
        Schedule::Interleaved => run_interleaved(config, &budget, tap)?,
        Schedule::Concurrent => run_concurrent(config, &budget, tap)?,
    };
    Ok(SessionReport::from_blocks(*config, blocks))
}

fn post(boxes: &mut Mailboxes, tap: Option<&Wiretap>, from: Party, msgs: Vec<Message>) {
    for m in msgs {
        if let Some(t) = tap {
            t.record(from, &m);
        }
        match from {
            Party::Alice => boxes.to_bob.push_back(m),
            Party::Bob => boxes.to_alice.push_back(m),
        }
    }
}

/// Runs one block on a single thread, delivering queued messages until
/// both endpoints are done.
fn exchange_block(
    alice: &mut Alice,
    bob: &mut Bob,
    block: u64,
    alice_record: Box<dyn SymbolRecord + Send>,
    bob_view: Vec<(u64, PhaseSymbol)>,
    tap: Option<&Wiretap>,
) -> Result<()> {
    let mut boxes = Mailboxes::default();
    let out = alice.begin_block(block, alice_record);
    post(&mut boxes, tap, Party::Alice, out);
    let out = bob.begin_block(block, bob_view);
    post(&mut boxes, tap, Party::Bob, out);
    while !(alice.block_done() && bob.block_done()) {
        if let Some(m) = boxes.to_alice.pop_front() {
            let out = alice.handle(m)?;
            post(&mut boxes, tap, Party::Alice, out);
        } else if let Some(m) = boxes.to_bob.pop_front() {
            let out = bob.handle(m)?;
            post(&mut boxes, tap, Party::Bob, out);
        } else {
            return Err(Error::Protocol(format!("block {block}: endpoints stalled")));
        }
    }
    if !(boxes.to_alice.is_empty() && boxes.to_bob.is_empty()) {
        return Err(Error::Protocol(format!(
            "block {block}: messages left undelivered"
        )));
    }
    Ok(())
}

fn run_interleaved(
    config: &SessionConfig,
    budget: &LinkBudget,
    tap: Option<&Wiretap>,
) -> Result<Vec<BlockResult>> {
    let mut alice = Alice::new(config.distill, config.seed);
    let mut bob = Bob::new(config.distill, config.seed);
    let mut results = Vec::with_capacity(config.n_blocks as usize);
    for block in 0..config.n_blocks {
        let inputs = block_inputs(config, budget, block)?;
        exchange_block(
            &mut alice,
            &mut bob,
            block,
            Box::new(inputs.alice_symbols),
            inputs.bob_view,
            tap,
        )?;
        results.push(block_result(alice.outcome(), bob.outcome())?);
    }
    Ok(results)
}

/// Result of distilling a recorded detection log as a single block.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDistillation {
    pub result: BlockResult,
    pub alice_key: BitString,
    pub bob_key: BitString,
}

impl LogDistillation {
    pub fn verified(&self) -> bool {
        !self.result.aborted && self.result.qber.is_some() && self.alice_key == self.bob_key
    }
}

/// Replays `log` through both endpoints. Alice gets her recorded symbols,
/// Bob his clicks and choices.
pub fn distill_log(
    log: &DetectionLog,
    params: &DistillParams,
    seed: u64,
    tap: Option<&Wiretap>,
) -> Result<LogDistillation> {
    log.validate()?;
    params.validate()?;
    let record: HashMap<u64, PhaseSymbol> = log.clicks.iter().map(|c| (c.cycle, c.alice)).collect();
    let view = log.clicks.iter().map(|c| (c.cycle, c.bob)).collect();
    let mut alice = Alice::new(*params, seed);
    let mut bob = Bob::new(*params, seed);
    exchange_block(&mut alice, &mut bob, 0, Box::new(record), view, tap)?;
    Ok(LogDistillation {
        result: block_result(alice.outcome(), bob.outcome())?,
        alice_key: alice.outcome().secret.clone(),
        bob_key: bob.outcome().secret.clone(),
    })
}

fn send_all<T: Transport>(t: &mut T, msgs: Vec<Message>) -> Result<()> {
    msgs.into_iter().try_for_each(|m| t.send(m))
}

fn alice_loop<T: Transport>(
    mut alice: Alice,
    mut transport: T,
    inputs: mpsc::Receiver<(u64, SymbolSource)>,
) -> Result<Vec<BlockOutcome>> {
    let mut outcomes = Vec::new();
    for (block, symbols) in inputs {
        send_all(&mut transport, alice.begin_block(block, Box::new(symbols)))?;
        while !alice.block_done() {
            let msg = transport.recv()?;
            let out = alice.handle(msg)?;
            send_all(&mut transport, out)?;
        }
        outcomes.push(alice.outcome().clone());
    }
    Ok(outcomes)
}

fn bob_loop<T: Transport>(
    mut bob: Bob,
    mut transport: T,
    inputs: mpsc::Receiver<(u64, Vec<(u64, PhaseSymbol)>)>,
) -> Result<Vec<BlockOutcome>> {
    let mut outcomes = Vec::new();
    for (block, view) in inputs {
        send_all(&mut transport, bob.begin_block(block, view))?;
        while !bob.block_done() {
            let msg = transport.recv()?;
            let out = bob.handle(msg)?;
            send_all(&mut transport, out)?;
        }
        outcomes.push(bob.outcome().clone());
    }
    Ok(outcomes)
}

fn run_concurrent(
    config: &SessionConfig,
    budget: &LinkBudget,
    tap: Option<&Wiretap>,
) -> Result<Vec<BlockResult>> {
    let (a_end, b_end) = duplex();
    match tap {
        Some(t) => run_threads(
            config,
            budget,
            Tapped::new(a_end, t.clone(), Party::Alice),
            Tapped::new(b_end, t.clone(), Party::Bob),
        ),
        None => run_threads(config, budget, a_end, b_end),
    }
}

/// Runs the session with each endpoint on its own thread, talking over the
/// given transports (for example a socket pair).
pub fn run_session_over<A, B>(
    config: &SessionConfig,
    alice_transport: A,
    bob_transport: B,
) -> Result<SessionReport>
where
    A: Transport + Send,
    B: Transport + Send,
{
    config.validate()?;
    let blocks = run_threads(config, &config.budget()?, alice_transport, bob_transport)?;
    Ok(SessionReport::from_blocks(*config, blocks))
}

fn run_threads<A, B>(
    config: &SessionConfig,
    budget: &LinkBudget,
    a_end: A,
    b_end: B,
) -> Result<Vec<BlockResult>>
where
    A: Transport + Send,
    B: Transport + Send,
{
    let (a_tx, a_rx) = mpsc::sync_channel(1);
    let (b_tx, b_rx) = mpsc::sync_channel(1);
    let alice = Alice::new(config.distill, config.seed);
    let bob = Bob::new(config.distill, config.seed);

    let (alice_out, bob_out, fed) = thread::scope(|s| {
        let alice_thread = s.spawn(move || alice_loop(alice, a_end, a_rx));
        let bob_thread = s.spawn(move || bob_loop(bob, b_end, b_rx));
        let fed = (|| -> Result<()> {
            for block in 0..config.n_blocks {
                let inputs = block_inputs(config, budget, block)?;
                // A closed input queue means that endpoint already failed;
                // its own error is reported below.
                if a_tx.send((block, inputs.alice_symbols)).is_err()
                    || b_tx.send((block, inputs.bob_view)).is_err()
                {
                    break;
                }
            }
            Ok(())
        })();
        drop(a_tx);
        drop(b_tx);
        let join = |h: thread::ScopedJoinHandle<'_, Result<Vec<BlockOutcome>>>| {
            h.join()
                .unwrap_or_else(|_| Err(Error::Protocol("endpoint thread panicked".into())))
        };
        (join(alice_thread), join(bob_thread), fed)
    });
    fed?;
    let (alice_out, bob_out) = match (alice_out, bob_out) {
        (Ok(a), Ok(b)) => (a, b),
        // The peer of a failed endpoint only sees the channel closing.
        (Err(Error::ChannelClosed), Err(e)) | (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    alice_out
        .iter()
        .zip(&bob_out)
        .map(|(a, b)| block_result(a, b))
        .collect()
}

/// Indices of non-empty blocks whose QBER lies outside [low, high].
pub fn stability_monitor(report: &SessionReport, low: f64, high: f64) -> Vec<u64> {
    report
        .blocks
        .iter()
        .filter(|b| b.qber.is_some_and(|q| !(low..=high).contains(&q)))
        .map(|b| b.block_index)
        .collect()
}

/// ⌊rate·60 / key_bits⌋.
pub fn keys_per_minute(secret_rate_bps: f64, key_bits: u32) -> u64 {
    if !(secret_rate_bps > 0.0) || key_bits == 0 {
        return 0;
    }
    (secret_rate_bps * 60.0 / f64::from(key_bits)).floor() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCheck {
    pub name: String,
    pub status: CheckStatus,
    pub value: Option<f64>,
    pub detail: String,
}

/// Cross-checks of a report against the published long-run figures.
pub fn consistency_report(report: &SessionReport) -> Vec<ConsistencyCheck> {
    let names = ["bits/duration", "photon budget", "keys per minute"];
    if report.summary.non_empty_blocks == 0 {
        return names
            .iter()
            .map(|n| ConsistencyCheck {
                name: n.to_string(),
                status: CheckStatus::NotApplicable,
                value: None,
                detail: "no non-empty blocks".into(),
            })
            .collect();
    }
    let status = |ok: bool| {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    };
    let rate = report.summary.mean_secret_rate_bps;

    let quoted = reference::TOTAL_BITS / reference::DURATION_S;
    let quoted_ok = (quoted / reference::SECRET_RATE_BPS - 1.0).abs() <= 0.02;
    let session_ok = (rate / reference::SECRET_RATE_BPS - 1.0).abs() <= 0.2;
    let bits = ConsistencyCheck {
        name: names[0].into(),
        status: status(quoted_ok && session_ok),
        value: Some(quoted),
        detail: format!(
            "{:.0} bits / {:.0} s = {quoted:.4} bps vs {} bps (within 2%: {quoted_ok}); session {rate:.4} bps (within 20%: {session_ok})",
            reference::TOTAL_BITS,
            reference::DURATION_S,
            reference::SECRET_RATE_BPS
        ),
    };

    let mu = sideband_photons_per_cycle(&report.metadata.config.source);
    let (lo, hi) = reference::SIDEBAND_PHOTONS;
    let photons = ConsistencyCheck {
        name: names[1].into(),
        status: status((lo..=hi).contains(&mu)),
        value: Some(mu),
        detail: format!("{mu:.4} photons per cycle vs 0.2 (accepted [{lo}, {hi}])"),
    };

    let kpm = keys_per_minute(rate, reference::KEY_BITS);
    let keys = ConsistencyCheck {
        name: names[2].into(),
        status: status(kpm == reference::KEYS_PER_MINUTE),
        value: Some(kpm as f64),
        detail: format!(
            "{kpm} keys of {} bits per minute at {rate:.4} bps vs {}",
            reference::KEY_BITS,
            reference::KEYS_PER_MINUTE
        ),
    };
    vec![bits, photons, keys]
}
