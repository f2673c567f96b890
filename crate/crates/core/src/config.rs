//! Session configuration files.
//!
//! Files are TOML with one table per module. Every key is optional and
//! overrides the base (defaults, or the preset named by a top-level
//! `preset` key); unknown keys are rejected.
//!
//! ```toml
//! preset = "kazan-apastovo-143km"
//!
//! [channel]
//! loss_db = 30.0
//!
//! [session]
//! n_blocks = 10
//! seed = 7
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::presets;
use crate::session::SessionConfig;

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    repetition_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pulse_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output_power: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wavelength: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    modulation_index: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    subcarrier_frequency: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    loss_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    length_km: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReceiverSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    sideband_selection_loss_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    insertion_loss_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detector_efficiency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dark_count_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    visibility: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistillSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    sample_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f_ec: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon_pa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    qber_abort: Option<f64>,
}

/// TOML integers are signed, so seeds above 2^63 − 1 are written as
/// decimal strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum SeedValue {
    Int(i64),
    Text(String),
}

impl SeedValue {
    fn from_u64(seed: u64) -> Self {
        i64::try_from(seed).map_or_else(|_| SeedValue::Text(seed.to_string()), SeedValue::Int)
    }

    fn to_u64(&self) -> std::result::Result<u64, String> {
        match self {
            SeedValue::Int(v) => u64::try_from(*v).map_err(|_| format!("must be ≥ 0, got {v}")),
            SeedValue::Text(s) => {
                let parsed = match s.strip_prefix("0x") {
                    Some(hex) => u64::from_str_radix(hex, 16),
                    None => s.parse(),
                };
                parsed.map_err(|_| format!("is not a 64-bit unsigned integer: {s:?}"))
            }
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    block_cycles: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_blocks: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<SeedValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon_sys: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(default)]
    source: SourceSection,
    #[serde(default)]
    channel: ChannelSection,
    #[serde(default)]
    receiver: ReceiverSection,
    #[serde(default)]
    distill: DistillSection,
    #[serde(default)]
    session: SessionSection,
}

fn set<T>(target: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *target = v;
    }
}

/// Line (1-based) where `key` is assigned inside `[section]`, if any.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = "";
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim();
        } else if current == section && line.split_once('=').is_some_and(|(k, _)| k.trim() == key) {
            return Some(i + 1);
        }
    }
    None
}

/// Parses a config file and validates the resolved configuration.
/// Diagnostics name the offending field and, when known, its line.
pub fn parse_config(text: &str) -> Result<SessionConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::InvalidConfig {
        field: "file",
        reason: e.to_string().trim_end().replace('\n', " | "),
    })?;
    let mut c = match &file.preset {
        Some(name) => {
            presets::by_name(name)
                .ok_or_else(|| Error::InvalidConfig {
                    field: "preset",
                    reason: format!("unknown preset {name:?}"),
                })?
                .config
        }
        None => SessionConfig::default(),
    };

    let s = file.source;
    set(&mut c.source.repetition_rate, s.repetition_rate);
    set(&mut c.source.pulse_width, s.pulse_width);
    set(&mut c.source.output_power, s.output_power);
    set(&mut c.source.wavelength, s.wavelength);
    set(&mut c.source.modulation_index, s.modulation_index);
    set(&mut c.source.subcarrier_frequency, s.subcarrier_frequency);
    set(&mut c.channel.loss_db, file.channel.loss_db);
    set(&mut c.channel.length_km, file.channel.length_km);
    let r = file.receiver;
    set(
        &mut c.receiver.sideband_selection_loss_db,
        r.sideband_selection_loss_db,
    );
    set(&mut c.receiver.insertion_loss_db, r.insertion_loss_db);
    set(&mut c.receiver.detector_efficiency, r.detector_efficiency);
    set(&mut c.receiver.dark_count_rate, r.dark_count_rate);
    set(&mut c.receiver.visibility, r.visibility);
    let d = file.distill;
    set(&mut c.distill.sample_fraction, d.sample_fraction);
    set(&mut c.distill.f_ec, d.f_ec);
    set(&mut c.distill.epsilon_pa, d.epsilon_pa);
    set(&mut c.distill.qber_abort, d.qber_abort);
    let ss = file.session;
    set(&mut c.block_cycles, ss.block_cycles);
    set(&mut c.n_blocks, ss.n_blocks);
    set(&mut c.epsilon_sys, ss.epsilon_sys);
    if let Some(seed) = ss.seed {
        c.seed = seed.to_u64().map_err(|reason| Error::InvalidConfig {
            field: "session.seed",
            reason,
        })?;
    }

    c.validate().map_err(|e| match e {
        Error::InvalidConfig { field, reason } => {
            let line = field
                .split_once('.')
                .and_then(|(sec, key)| locate(text, sec, key));
            match line {
                Some(n) => Error::InvalidConfig {
                    field,
                    reason: format!("{reason} (line {n})"),
                },
                None => Error::InvalidConfig { field, reason },
            }
        }
        other => other,
    })?;
    Ok(c)
}

/// Writes every field of `config` in the file format.
pub fn config_to_text(config: &SessionConfig) -> String {
    let c = config;
    let file = ConfigFile {
        preset: None,
        source: SourceSection {
            repetition_rate: Some(c.source.repetition_rate),
            pulse_width: Some(c.source.pulse_width),
            output_power: Some(c.source.output_power),
            wavelength: Some(c.source.wavelength),
            modulation_index: Some(c.source.modulation_index),
            subcarrier_frequency: Some(c.source.subcarrier_frequency),
        },
        channel: ChannelSection {
            loss_db: Some(c.channel.loss_db),
            length_km: Some(c.channel.length_km),
        },
        receiver: ReceiverSection {
            sideband_selection_loss_db: Some(c.receiver.sideband_selection_loss_db),
            insertion_loss_db: Some(c.receiver.insertion_loss_db),
            detector_efficiency: Some(c.receiver.detector_efficiency),
            dark_count_rate: Some(c.receiver.dark_count_rate),
            visibility: Some(c.receiver.visibility),
        },
        distill: DistillSection {
            sample_fraction: Some(c.distill.sample_fraction),
            f_ec: Some(c.distill.f_ec),
            epsilon_pa: Some(c.distill.epsilon_pa),
            qber_abort: Some(c.distill.qber_abort),
        },
        session: SessionSection {
            block_cycles: Some(c.block_cycles),
            n_blocks: Some(c.n_blocks),
            seed: Some(SeedValue::from_u64(c.seed)),
            epsilon_sys: Some(c.epsilon_sys),
        },
    };
    toml::to_string(&file).expect("config serialization is infallible")
}
