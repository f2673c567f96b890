//! Analytic physics of the subcarrier-wave link.
//!
//! Hardware parameters are reduced to a [`LinkBudget`]: mean sideband photon
//! number at the sender, channel transmittance, mean photon number reaching
//! the click decision, and the per-cycle dark-count probability. Every
//! probability below reads only budget fields.

use serde::{Deserialize, Serialize};

use crate::distill::binary_entropy;
use crate::error::{invalid, Error, Result};

/// Planck constant, J·s (exact SI value).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Speed of light in vacuum, m/s (exact SI value).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Amount by which a composed probability may leave [0, 1] before a
/// warning is logged.
const CLAMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    /// Cycles per second.
    pub repetition_rate: f64,
    /// Seconds. Documentation only; does not enter the probabilities.
    pub pulse_width: f64,
    /// Watts, total optical output.
    pub output_power: f64,
    /// Meters.
    pub wavelength: f64,
    /// Fraction of optical power carried by the two first-order sidebands.
    pub modulation_index: f64,
    /// Hz. Documentation only.
    pub subcarrier_frequency: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            repetition_rate: 1.0e8,
            pulse_width: 2.5e-9,
            output_power: 79.3e-12,
            wavelength: 1.55e-6,
            modulation_index: 0.033,
            subcarrier_frequency: 4.8e9,
        }
    }
}

impl SourceConfig {
    /// Output power may be zero (dark line); every other field must be
    /// strictly positive.
    pub fn validate(&self) -> Result<()> {
        if !(self.repetition_rate.is_finite() && self.repetition_rate > 0.0) {
            return Err(invalid("source.repetition_rate", "must be > 0"));
        }
        if !(self.pulse_width.is_finite() && self.pulse_width > 0.0) {
            return Err(invalid("source.pulse_width", "must be > 0"));
        }
        if self.pulse_width > 1.0 / self.repetition_rate {
            return Err(invalid(
                "source.pulse_width",
                "must not exceed the cycle period 1/repetition_rate",
            ));
        }
        if !(self.output_power.is_finite() && self.output_power >= 0.0) {
            return Err(invalid("source.output_power", "must be >= 0"));
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(invalid("source.wavelength", "must be > 0"));
        }
        if !(self.modulation_index >= 0.0 && self.modulation_index <= 1.0) {
            return Err(invalid("source.modulation_index", "must be in [0, 1]"));
        }
        if !(self.subcarrier_frequency.is_finite() && self.subcarrier_frequency > 0.0) {
            return Err(invalid("source.subcarrier_frequency", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub loss_db: f64,
    /// Informational only.
    pub length_km: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            loss_db: 37.0,
            length_km: 143.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss_db.is_finite() && self.loss_db >= 0.0) {
            return Err(invalid("channel.loss_db", "must be >= 0"));
        }
        if !(self.length_km.is_finite() && self.length_km >= 0.0) {
            return Err(invalid("channel.length_km", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverConfig {
    /// Penalty for detecting a single sideband.
    pub sideband_selection_loss_db: f64,
    /// Bob's modulator, filter and polarization chain.
    pub insertion_loss_db: f64,
    pub detector_efficiency: f64,
    /// Counts per second.
    pub dark_count_rate: f64,
    pub visibility: f64,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            sideband_selection_loss_db: 3.0,
            insertion_loss_db: 0.0,
            detector_efficiency: 0.5,
            dark_count_rate: 0.5,
            visibility: 0.96,
        }
    }
}

impl ReceiverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sideband_selection_loss_db.is_finite() && self.sideband_selection_loss_db >= 0.0)
        {
            return Err(invalid(
                "receiver.sideband_selection_loss_db",
                "must be >= 0",
            ));
        }
        if !(self.insertion_loss_db.is_finite() && self.insertion_loss_db >= 0.0) {
            return Err(invalid("receiver.insertion_loss_db", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.detector_efficiency) {
            return Err(invalid("receiver.detector_efficiency", "must be in [0, 1]"));
        }
        if !(self.dark_count_rate.is_finite() && self.dark_count_rate >= 0.0) {
            return Err(invalid("receiver.dark_count_rate", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(invalid("receiver.visibility", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Per-cycle quantities derived from the three configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// Mean sideband photons per cycle at the sender's output.
    pub mu_sideband: f64,
    pub transmittance: f64,
    /// Mean photons per cycle reaching an ideal click decision.
    pub mu_detected: f64,
    /// Dark-count probability per cycle.
    pub p_dark: f64,
    pub visibility: f64,
}

impl LinkBudget {
    /// Budget built directly from per-cycle numbers, bypassing the hardware
    /// chain. Used for grids and toy cases.
    pub fn from_parts(mu_detected: f64, p_dark: f64, visibility: f64) -> Result<Self> {
        let budget = Self {
            mu_sideband: mu_detected,
            transmittance: 1.0,
            mu_detected,
            p_dark,
            visibility,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p_dark) && self.p_dark != 1.0 {
            return Err(invalid("budget.p_dark", "must be in [0, 1]"));
        }
        if !(self.mu_detected.is_finite() && self.mu_detected >= 0.0) {
            return Err(invalid("budget.mu_detected", "must be >= 0"));
        }
        if self.mu_detected > self.mu_sideband {
            return Err(invalid("budget.mu_detected", "must not exceed mu_sideband"));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(invalid("budget.visibility", "must be in [0, 1]"));
        }
        Ok(())
    }

    /// Largest per-cycle click probability over all phase differences.
    pub fn max_click_probability(&self) -> f64 {
        click_probability(self, 0.0)
    }

    /// Average click probability under uniform four-state choices.
    pub fn mean_click_probability(&self) -> f64 {
        clamp_probability(self.p_dark + self.mu_detected / 2.0)
    }
}

/// Total photons per modulation cycle (carrier plus sidebands):
/// P·λ / (h·c·R).
pub fn photons_per_cycle(source: &SourceConfig) -> f64 {
    source.output_power * source.wavelength / (PLANCK * SPEED_OF_LIGHT * source.repetition_rate)
}

pub fn sideband_photons_per_cycle(source: &SourceConfig) -> f64 {
    photons_per_cycle(source) * source.modulation_index
}

pub fn transmittance(loss_db: f64) -> Result<f64> {
    if !(loss_db >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "loss must be >= 0 dB, got {loss_db}"
        )));
    }
    Ok(10f64.powf(-loss_db / 10.0))
}

pub fn build_link_budget(
    source: &SourceConfig,
    channel: &ChannelConfig,
    receiver: &ReceiverConfig,
) -> Result<LinkBudget> {
    source.validate()?;
    channel.validate()?;
    receiver.validate()?;

    let mu_sideband = sideband_photons_per_cycle(source);
    let t = transmittance(channel.loss_db)?;
    let mu_detected = mu_sideband
        * t
        * transmittance(receiver.sideband_selection_loss_db)?
        * transmittance(receiver.insertion_loss_db)?
        * receiver.detector_efficiency;
    let p_dark = receiver.dark_count_rate / source.repetition_rate;
    if p_dark >= 1.0 {
        return Err(invalid(
            "receiver.dark_count_rate",
            "must be below the repetition rate",
        ));
    }
    Ok(LinkBudget {
        mu_sideband,
        transmittance: t,
        mu_detected,
        p_dark,
        visibility: receiver.visibility,
    })
}

fn clamp_probability(p: f64) -> f64 {
    if !(-CLAMP_TOLERANCE..=1.0 + CLAMP_TOLERANCE).contains(&p) {
        log::warn!("click probability {p} clamped to [0, 1]; config is unphysical");
    }
    p.clamp(0.0, 1.0)
}

/// p = p_dark + μ′·(1 + V·cos Δφ)/2, clamped to [0, 1].
pub fn click_probability(budget: &LinkBudget, delta_phi: f64) -> f64 {
    clamp_probability(
        budget.p_dark + budget.mu_detected * (1.0 + budget.visibility * delta_phi.cos()) / 2.0,
    )
}

/// Error fraction among basis-matched clicks:
/// (p_dark + μ′(1−V)/2) / (2·p_dark + μ′).
pub fn analytic_qber(budget: &LinkBudget) -> Result<f64> {
    let denom = 2.0 * budget.p_dark + budget.mu_detected;
    if denom <= 0.0 {
        return Err(Error::InvalidArgument(
            "QBER undefined: no signal and no dark counts".into(),
        ));
    }
    let q = (budget.p_dark + budget.mu_detected * (1.0 - budget.visibility) / 2.0) / denom;
    Ok(q.clamp(0.0, 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticRates {
    pub sift_rate_bps: f64,
    pub secret_rate_bps: f64,
    pub qber: Option<f64>,
}

/// Closed-form sift and secret rates.
///
/// sift = R·(2·p_dark + μ′)/4·ε_sys and
/// secret = sift·max(0, 1 − h2(Q) − f_ec·h2(Q)).
pub fn analytic_rates(
    budget: &LinkBudget,
    repetition_rate: f64,
    f_ec: f64,
    epsilon_sys: f64,
) -> Result<AnalyticRates> {
    if !(f_ec >= 1.0 && f_ec.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "f_ec must be >= 1, got {f_ec}"
        )));
    }
    if !(epsilon_sys > 0.0 && epsilon_sys <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon_sys must be in (0, 1], got {epsilon_sys}"
        )));
    }
    if !(repetition_rate > 0.0 && repetition_rate.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "repetition rate must be > 0, got {repetition_rate}"
        )));
    }
    let matched = 2.0 * budget.p_dark + budget.mu_detected;
    if matched <= 0.0 {
        return Ok(AnalyticRates {
            sift_rate_bps: 0.0,
            secret_rate_bps: 0.0,
            qber: None,
        });
    }
    let sift = repetition_rate * matched / 4.0 * epsilon_sys;
    let q = analytic_qber(budget)?;
    let h = binary_entropy(q)?;
    let fraction = (1.0 - h - f_ec * h).max(0.0);
    Ok(AnalyticRates {
        sift_rate_bps: sift,
        secret_rate_bps: sift * fraction,
        qber: Some(q),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn paper_budget() -> LinkBudget {
        build_link_budget(
            &SourceConfig::default(),
            &ChannelConfig::default(),
            &ReceiverConfig::default(),
        )
        .unwrap()
    }

    // Frozen from a 40-digit evaluation with CODATA-exact h and c.
    const PHOTONS_PER_CYCLE: f64 = 6.187_684_378_995_121;
    const MU_SIDEBAND: f64 = 0.204_193_584_506_839;
    const MU_DETECTED: f64 = 1.020_967_922_534_195e-5;
    const T_37: f64 = 1.995_262_314_968_879_6e-4;
    const T_7: f64 = 0.199_526_231_496_887_96;
    const P_CLICK_ZERO: f64 = 1.001_048_564_083_511e-5;
    const QBER: f64 = 0.020_469_682_060_871_08;
    const SIFT_BPS: f64 = 255.491_980_633_548_75;
    const SECRET_BPS: f64 = 176.353_424_092_829_8;

    #[test]
    fn photons_per_cycle_defaults() {
        let s = SourceConfig::default();
        assert_relative_eq!(
            photons_per_cycle(&s),
            PHOTONS_PER_CYCLE,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            sideband_photons_per_cycle(&s),
            MU_SIDEBAND,
            max_relative = 1e-12
        );
    }

    #[test]
    fn photons_per_cycle_zero_and_linear() {
        let s = SourceConfig::default();
        let zero = SourceConfig {
            output_power: 0.0,
            ..s
        };
        assert_eq!(photons_per_cycle(&zero), 0.0);
        let double = SourceConfig {
            output_power: 2.0 * s.output_power,
            ..s
        };
        assert_eq!(photons_per_cycle(&double), 2.0 * photons_per_cycle(&s));
    }

    #[test]
    fn sideband_index_edges() {
        let s = SourceConfig::default();
        let none = SourceConfig {
            modulation_index: 0.0,
            ..s
        };
        assert_eq!(sideband_photons_per_cycle(&none), 0.0);
        let all = SourceConfig {
            modulation_index: 1.0,
            ..s
        };
        assert_eq!(sideband_photons_per_cycle(&all), photons_per_cycle(&s));
    }

    #[test]
    fn transmittance_values() {
        assert_eq!(transmittance(0.0).unwrap(), 1.0);
        assert_relative_eq!(transmittance(37.0).unwrap(), T_37, max_relative = 1e-14);
        assert_relative_eq!(transmittance(7.0).unwrap(), T_7, max_relative = 1e-14);
        assert!(transmittance(-1.0).is_err());
        assert!(transmittance(f64::NAN).is_err());
    }

    #[test]
    fn paper_budget_chain() {
        let b = paper_budget();
        assert_relative_eq!(b.mu_sideband, MU_SIDEBAND, max_relative = 1e-12);
        assert_relative_eq!(b.transmittance, T_37, max_relative = 1e-12);
        assert_relative_eq!(b.mu_detected, MU_DETECTED, max_relative = 1e-12);
        assert_relative_eq!(b.p_dark, 5e-9, max_relative = 1e-15);
        assert_eq!(b.visibility, 0.96);
    }

    #[test]
    fn identity_chain_and_no_dark() {
        let rx = ReceiverConfig {
            sideband_selection_loss_db: 0.0,
            detector_efficiency: 1.0,
            dark_count_rate: 0.0,
            ..ReceiverConfig::default()
        };
        let ch = ChannelConfig {
            loss_db: 0.0,
            ..ChannelConfig::default()
        };
        let b = build_link_budget(&SourceConfig::default(), &ch, &rx).unwrap();
        assert_eq!(b.mu_detected, b.mu_sideband);
        assert_eq!(b.p_dark, 0.0);
    }

    #[test]
    fn config_validation() {
        let bad = SourceConfig {
            pulse_width: 2e-8,
            ..SourceConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ReceiverConfig {
            visibility: 1.5,
            ..ReceiverConfig::default()
        };
        assert!(
            build_link_budget(&SourceConfig::default(), &ChannelConfig::default(), &bad).is_err()
        );
        let bad = ChannelConfig {
            loss_db: -3.0,
            ..ChannelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn click_probability_cases() {
        let perfect = LinkBudget::from_parts(1e-3, 0.0, 1.0).unwrap();
        assert_eq!(click_probability(&perfect, PI), 0.0);

        let b = paper_budget();
        assert_relative_eq!(
            click_probability(&b, PI / 2.0),
            b.p_dark + b.mu_detected / 2.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            click_probability(&b, 0.0),
            P_CLICK_ZERO,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            click_probability(&b, PI),
            b.p_dark + b.mu_detected * (1.0 - b.visibility) / 2.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn click_probability_clamps() {
        let b = LinkBudget {
            mu_sideband: 3.0,
            transmittance: 1.0,
            mu_detected: 3.0,
            p_dark: 0.0,
            visibility: 1.0,
        };
        assert_eq!(click_probability(&b, 0.0), 1.0);
    }

    #[test]
    fn click_probability_decreasing_on_half_turn() {
        let b = paper_budget();
        let mut prev = f64::INFINITY;
        for k in 0..=100 {
            let p = click_probability(&b, PI * k as f64 / 100.0);
            assert!(p <= prev);
            prev = p;
        }
    }

    #[test]
    fn qber_cases() {
        assert_eq!(
            analytic_qber(&LinkBudget::from_parts(1e-3, 0.0, 1.0).unwrap()).unwrap(),
            0.0
        );
        assert_eq!(
            analytic_qber(&LinkBudget::from_parts(0.0, 1e-6, 0.9).unwrap()).unwrap(),
            0.5
        );
        assert_relative_eq!(
            analytic_qber(&paper_budget()).unwrap(),
            QBER,
            max_relative = 1e-12
        );
        assert!(analytic_qber(&LinkBudget::from_parts(0.0, 0.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn rates_paper_defaults() {
        let r = analytic_rates(&paper_budget(), 1e8, 1.15, 1.0).unwrap();
        assert_relative_eq!(r.sift_rate_bps, SIFT_BPS, max_relative = 1e-10);
        assert_relative_eq!(r.secret_rate_bps, SECRET_BPS, max_relative = 1e-10);

        let cal = analytic_rates(&paper_budget(), 1e8, 1.15, 0.068).unwrap();
        assert!((cal.secret_rate_bps - 12.0).abs() < 0.05, "{cal:?}");
    }

    #[test]
    fn rates_dark_line_and_validation() {
        let dark = LinkBudget::from_parts(0.0, 0.0, 1.0).unwrap();
        let r = analytic_rates(&dark, 1e8, 1.15, 1.0).unwrap();
        assert_eq!((r.sift_rate_bps, r.secret_rate_bps), (0.0, 0.0));
        let b = paper_budget();
        assert!(analytic_rates(&b, 1e8, 0.9, 1.0).is_err());
        assert!(analytic_rates(&b, 1e8, 1.15, 0.0).is_err());
        assert!(analytic_rates(&b, 1e8, 1.15, 1.5).is_err());
    }
}
