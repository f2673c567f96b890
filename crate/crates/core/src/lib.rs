//! Simulator and key-distillation pipeline for one-way subcarrier-wave
//! phase-coded BB84 over lossy fiber.
//!
//! * [`linkmodel`] turns hardware parameters into per-cycle click
//!   probabilities and closed-form rate/QBER predictions.
//! * [`protocol`] encodes phases, simulates detection blocks and sifts.
//! * [`distill`] estimates QBER, reconciles with Cascade and amplifies
//!   privacy with Toeplitz hashing.
//! * [`channel`] and [`endpoint`] run Alice and Bob as separate state
//!   machines that only exchange [`channel::Message`]s.
//! * [`session`] drives blocks through the whole pipeline and summarizes
//!   them; [`presets`] and [`config`] supply configurations.

pub mod bits;
pub mod channel;
pub mod config;
pub mod distill;
pub mod endpoint;
pub mod error;
pub mod linkmodel;
pub mod presets;
pub mod protocol;
pub mod rng;
pub mod session;

pub use bits::BitString;
pub use error::{Error, Result};
