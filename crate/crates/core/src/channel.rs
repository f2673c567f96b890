//! Authenticated classical channel between the endpoints.
//!
//! Messages are single JSON objects tagged by `type`, one per line on the
//! wire. The in-process duplex and the line-framed stream transport carry
//! the same [`Message`] values, so either can back a session.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::distill::RangeQuery;
use crate::error::{Error, Result};

/// Abort reason codes carried in [`Message::Abort`].
pub mod abort_code {
    pub const QBER_ABOVE_THRESHOLD: u32 = 1;
    pub const VERIFICATION_FAILED: u32 = 2;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    /// Clicked cycle indices and the sender's bases for them.
    BasisAnnounce {
        block: u64,
        cycles: Vec<u64>,
        bases: Vec<u8>,
    },
    /// Positions in the sifted buffer disclosed for estimation.
    SampleIndices {
        block: u64,
        indices: Vec<u64>,
    },
    SampleBits {
        block: u64,
        bits: Vec<u8>,
    },
    /// Flattened (pass, start, end) triples.
    ParityRequest {
        block: u64,
        ranges: Vec<u64>,
    },
    ParityResponse {
        block: u64,
        parities: Vec<u8>,
    },
    /// 64-bit seed as two 32-bit words, low word first.
    ShuffleSeed {
        block: u64,
        seed: Vec<u32>,
    },
    /// Toeplitz seed bits packed into 32-bit words, bit 0 = LSB of word 0.
    HashSeed {
        block: u64,
        words: Vec<u32>,
    },
    /// Seed and value, each as two 32-bit words, low word first.
    Fingerprint {
        block: u64,
        seed: Vec<u32>,
        value: Vec<u32>,
    },
    Abort {
        block: u64,
        reason: Vec<u32>,
    },
}

impl Message {
    pub fn block(&self) -> u64 {
        match self {
            Message::BasisAnnounce { block, .. }
            | Message::SampleIndices { block, .. }
            | Message::SampleBits { block, .. }
            | Message::ParityRequest { block, .. }
            | Message::ParityResponse { block, .. }
            | Message::ShuffleSeed { block, .. }
            | Message::HashSeed { block, .. }
            | Message::Fingerprint { block, .. }
            | Message::Abort { block, .. } => *block,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::BasisAnnounce { .. } => "basis_announce",
            Message::SampleIndices { .. } => "sample_indices",
            Message::SampleBits { .. } => "sample_bits",
            Message::ParityRequest { .. } => "parity_request",
            Message::ParityResponse { .. } => "parity_response",
            Message::ShuffleSeed { .. } => "shuffle_seed",
            Message::HashSeed { .. } => "hash_seed",
            Message::Fingerprint { .. } => "fingerprint",
            Message::Abort { .. } => "abort",
        }
    }

    /// Parity bits this message discloses about the key.
    pub fn disclosed_parities(&self) -> usize {
        match self {
            Message::ParityResponse { parities, .. } => parities.len(),
            _ => 0,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("message serialization is infallible")
    }

    pub fn from_line(line: &str) -> Result<Message> {
        serde_json::from_str(line.trim_end_matches(['\r', '\n']))
            .map_err(|e| Error::Protocol(format!("bad message line: {e}")))
    }
}

pub fn split_u64(v: u64) -> Vec<u32> {
    vec![v as u32, (v >> 32) as u32]
}

pub fn join_u64(words: &[u32]) -> Result<u64> {
    match words {
        [lo, hi] => Ok(u64::from(*lo) | (u64::from(*hi) << 32)),
        _ => Err(Error::Protocol(format!(
            "expected 2 words for a 64-bit value, got {}",
            words.len()
        ))),
    }
}

pub fn encode_queries(queries: &[RangeQuery]) -> Vec<u64> {
    queries
        .iter()
        .flat_map(|q| [q.pass as u64, q.start as u64, q.end as u64])
        .collect()
}

pub fn decode_queries(ranges: &[u64]) -> Result<Vec<RangeQuery>> {
    if ranges.len() % 3 != 0 {
        return Err(Error::Protocol(format!(
            "parity request has {} integers, not a multiple of 3",
            ranges.len()
        )));
    }
    Ok(ranges
        .chunks_exact(3)
        .map(|t| RangeQuery {
            pass: t[0] as usize,
            start: t[1] as usize,
            end: t[2] as usize,
        })
        .collect())
}

/// Ordered, reliable message transport.
pub trait Transport {
    fn send(&mut self, msg: Message) -> Result<()>;
    fn recv(&mut self) -> Result<Message>;
}

/// One end of an in-process duplex queue.
pub struct ChannelEnd {
    tx: Sender<Message>,
    rx: Receiver<Message>,
}

pub fn duplex() -> (ChannelEnd, ChannelEnd) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        ChannelEnd { tx: a_tx, rx: a_rx },
        ChannelEnd { tx: b_tx, rx: b_rx },
    )
}

impl Transport for ChannelEnd {
    fn send(&mut self, msg: Message) -> Result<()> {
        self.tx.send(msg).map_err(|_| Error::ChannelClosed)
    }

    fn recv(&mut self) -> Result<Message> {
        self.rx.recv().map_err(|_| Error::ChannelClosed)
    }
}

/// Newline-delimited JSON over any byte stream (sockets, pipes).
pub struct LineTransport<R: Read, W: Write> {
    reader: BufReader<R>,
    writer: W,
    line: String,
}

impl<R: Read, W: Write> LineTransport<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self {
            reader: BufReader::new(reader),
            writer,
            line: String::new(),
        }
    }
}

impl<R: Read, W: Write> Transport for LineTransport<R, W> {
    fn send(&mut self, msg: Message) -> Result<()> {
        let mut line = msg.to_line();
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Message> {
        self.line.clear();
        if self.reader.read_line(&mut self.line)? == 0 {
            return Err(Error::ChannelClosed);
        }
        Message::from_line(&self.line)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Alice,
    Bob,
}

/// Shared record of every message, tagged with its sender.
#[derive(Debug, Clone, Default)]
pub struct Wiretap {
    log: Arc<Mutex<Vec<(Party, Message)>>>,
}

impl Wiretap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, from: Party, msg: &Message) {
        self.log.lock().unwrap().push((from, msg.clone()));
    }

    pub fn messages(&self) -> Vec<(Party, Message)> {
        self.log.lock().unwrap().clone()
    }

    pub fn sent_by(&self, from: Party) -> Vec<Message> {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|(p, _)| *p == from)
            .map(|(_, m)| m.clone())
            .collect()
    }

    /// Parity bits an observer of the channel saw, per block.
    pub fn disclosed_parities(&self, block: u64) -> usize {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|(_, m)| m.block() == block)
            .map(|(_, m)| m.disclosed_parities())
            .sum()
    }
}

/// Transport wrapper that copies outgoing messages to a [`Wiretap`].
pub struct Tapped<T> {
    inner: T,
    tap: Wiretap,
    party: Party,
}

impl<T> Tapped<T> {
    pub fn new(inner: T, tap: Wiretap, party: Party) -> Self {
        Self { inner, tap, party }
    }
}

impl<T: Transport> Transport for Tapped<T> {
    fn send(&mut self, msg: Message) -> Result<()> {
        self.tap.record(self.party, &msg);
        self.inner.send(msg)
    }

    fn recv(&mut self) -> Result<Message> {
        self.inner.recv()
    }
}

/// Single-threaded pair of FIFO queues for interleaved scheduling.
#[derive(Debug, Default)]
pub struct Mailboxes {
    pub to_alice: VecDeque<Message>,
    pub to_bob: VecDeque<Message>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format_is_tagged_json() {
        let m = Message::ParityResponse {
            block: 3,
            parities: vec![1, 0, 1],
        };
        let line = m.to_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["type"], "parity_response");
        assert_eq!(v["block"], 3);
        assert_eq!(v["parities"], serde_json::json!([1, 0, 1]));
        assert!(!line.contains('\n'));
    }

    #[test]
    fn field_order_not_significant() {
        let a =
            Message::from_line(r#"{"block":7,"indices":[1,2],"type":"sample_indices"}"#).unwrap();
        let b =
            Message::from_line(r#"{"type":"sample_indices","indices":[1,2],"block":7}"#).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.kind(), "sample_indices");
        assert!(Message::from_line(r#"{"type":"bogus","block":1}"#).is_err());
    }

    #[test]
    fn queries_and_words_roundtrip() {
        let q = vec![
            RangeQuery {
                pass: 0,
                start: 0,
                end: 37,
            },
            RangeQuery {
                pass: 3,
                start: 296,
                end: 444,
            },
        ];
        assert_eq!(decode_queries(&encode_queries(&q)).unwrap(), q);
        assert!(decode_queries(&[1, 2]).is_err());
        assert_eq!(
            join_u64(&split_u64(0xdead_beef_0bad_f00d)).unwrap(),
            0xdead_beef_0bad_f00d
        );
        assert!(join_u64(&[1]).is_err());
    }

    #[test]
    fn duplex_preserves_order() {
        let (mut a, mut b) = duplex();
        for i in 0..5 {
            a.send(Message::Abort {
                block: i,
                reason: vec![],
            })
            .unwrap();
        }
        for i in 0..5 {
            assert_eq!(b.recv().unwrap().block(), i);
        }
        drop(a);
        assert!(matches!(b.recv(), Err(Error::ChannelClosed)));
    }

    #[cfg(unix)]
    #[test]
    fn line_transport_over_socket_pair() {
        use std::os::unix::net::UnixStream;
        let (left, right) = UnixStream::pair().unwrap();
        let mut a = LineTransport::new(left.try_clone().unwrap(), left);
        let mut b = LineTransport::new(right.try_clone().unwrap(), right);
        let msg = Message::HashSeed {
            block: 9,
            words: vec![1, u32::MAX],
        };
        a.send(msg.clone()).unwrap();
        assert_eq!(b.recv().unwrap(), msg);
    }
}
