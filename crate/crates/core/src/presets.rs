//! Built-in scenarios for the two Kazan links.

use crate::distill::DistillParams;
use crate::linkmodel::{ChannelConfig, ReceiverConfig, SourceConfig};
use crate::session::SessionConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPreset {
    pub name: &'static str,
    pub description: &'static str,
    pub config: SessionConfig,
    /// Parameters that are calibrated or assumed rather than measured.
    pub calibrated: &'static [&'static str],
}

pub const APASTOVO: &str = "kazan-apastovo-143km";
pub const CITY: &str = "kazan-city-12km";

/// 143 km intercity link: 37 dB, SSPD, QBER about 2%, 12 bps.
pub fn kazan_apastovo() -> ScenarioPreset {
    ScenarioPreset {
        name: APASTOVO,
        description: "Kazan-Apastovo intercity link, 143 km, 37 dB, SSPD",
        config: SessionConfig {
            block_cycles: 60_000_000_000,
            n_blocks: 99,
            seed: 0,
            source: SourceConfig::default(),
            channel: ChannelConfig {
                loss_db: 37.0,
                length_km: 143.0,
            },
            receiver: ReceiverConfig::default(),
            distill: DistillParams::default(),
            epsilon_sys: 0.068,
        },
        calibrated: &[
            "session.epsilon_sys",
            "session.block_cycles",
            "distill.f_ec",
        ],
    }
}

/// 12 km city link: 7 dB, SPAD, QBER about 4%, about 2e4 bps.
pub fn kazan_city() -> ScenarioPreset {
    ScenarioPreset {
        name: CITY,
        description: "Kazan city link, 12 km, 7 dB, SPAD (hardware values are stand-ins)",
        config: SessionConfig {
            block_cycles: 100_000_000,
            n_blocks: 60,
            seed: 0,
            source: SourceConfig::default(),
            channel: ChannelConfig {
                loss_db: 7.0,
                length_km: 12.0,
            },
            receiver: ReceiverConfig {
                detector_efficiency: 0.1,
                dark_count_rate: 500.0,
                visibility: 0.9245055284289267,
                ..ReceiverConfig::default()
            },
            distill: DistillParams::default(),
            epsilon_sys: 0.8138148444010627,
        },
        calibrated: &[
            "receiver.detector_efficiency",
            "receiver.dark_count_rate",
            "receiver.visibility",
            "session.epsilon_sys",
        ],
    }
}

pub fn all() -> Vec<ScenarioPreset> {
    vec![kazan_apastovo(), kazan_city()]
}

pub fn by_name(name: &str) -> Option<ScenarioPreset> {
    all().into_iter().find(|p| p.name == name)
}
