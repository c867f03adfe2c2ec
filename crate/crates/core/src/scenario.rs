//! Simulation inputs and the TOML scenario file format.
//!
//! ```toml
//! duration_s = 23400
//! seed = 1
//! strategy = "adaptive"        # or "fixed_rate" together with round_s
//!
//! [slot]
//! rx_delay_ms = 1000
//! tb1_ms = 180
//! tb2_ms = 180
//! # t_tx_ms / t_rx_ms override the air-times derived from [uplink] / [downlink]
//!
//! [uplink]
//! sf = 7
//! bw_hz = 125000
//! cr = 1
//! payload = 193
//! crc = true
//!
//! [downlink]
//! sf = 8
//! bw_hz = 125000
//! cr = 1
//! payload = 19
//!
//! [[device]]
//! id = 1
//! clock = { model = "feather-like" }
//! tx_period_s = 30
//! ```

use std::collections::BTreeSet;

use serde::Deserialize;
use thiserror::Error;

use crate::airtime::{ParamError, RadioParams};
use crate::clock::{ClockError, ClockModel};
use crate::frame::MAX_UPLINK_PAYLOAD;
use crate::protocol::{SyncStrategy, BASELINE_SYNC_BYTES};
use crate::slot::{SlotConfig, SlotError};
use crate::{Nanos, NS_PER_MS, NS_PER_S};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Slot(#[from] SlotError),
    #[error(transparent)]
    Radio(#[from] ParamError),
    #[error("device {id}: {source}")]
    Clock { id: u32, source: ClockError },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

/// A clock model, or a named preset whose random stream is derived from the
/// scenario seed.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "model", deny_unknown_fields)]
pub enum ClockSpec {
    #[serde(rename = "ideal")]
    Ideal,
    #[serde(rename = "constant_ppm")]
    ConstantPpm { offset_ppm: f64 },
    #[serde(rename = "random_walk")]
    RandomWalk {
        step_interval_s: f64,
        step_std_ppm: f64,
        initial_ppm: f64,
        seed: u64,
    },
    #[serde(rename = "piecewise")]
    Piecewise { segments: Vec<(f64, f64)> },
    #[serde(rename = "warm_up")]
    WarmUp {
        initial_ppm: f64,
        settled_ppm: f64,
        time_constant_s: f64,
        noise_std_ppm: f64,
        noise_correlation_s: f64,
        step_interval_s: f64,
        seed: u64,
    },
    #[serde(rename = "feather-like")]
    FeatherLike,
    #[serde(rename = "ttgo-like")]
    TtgoLike,
}

impl ClockSpec {
    pub fn resolve(&self, derived_seed: u64) -> ClockModel {
        match self {
            ClockSpec::Ideal => ClockModel::Ideal,
            ClockSpec::ConstantPpm { offset_ppm } => ClockModel::ConstantPpm {
                offset_ppm: *offset_ppm,
            },
            ClockSpec::RandomWalk {
                step_interval_s,
                step_std_ppm,
                initial_ppm,
                seed,
            } => ClockModel::RandomWalk {
                step_interval_s: *step_interval_s,
                step_std_ppm: *step_std_ppm,
                initial_ppm: *initial_ppm,
                seed: *seed,
            },
            ClockSpec::Piecewise { segments } => ClockModel::Piecewise {
                segments: segments.clone(),
            },
            ClockSpec::WarmUp {
                initial_ppm,
                settled_ppm,
                time_constant_s,
                noise_std_ppm,
                noise_correlation_s,
                step_interval_s,
                seed,
            } => ClockModel::WarmUp {
                initial_ppm: *initial_ppm,
                settled_ppm: *settled_ppm,
                time_constant_s: *time_constant_s,
                noise_std_ppm: *noise_std_ppm,
                noise_correlation_s: *noise_correlation_s,
                step_interval_s: *step_interval_s,
                seed: *seed,
            },
            ClockSpec::FeatherLike => ClockModel::feather_like(derived_seed),
            ClockSpec::TtgoLike => ClockModel::ttgo_like(),
        }
    }
}

impl From<ClockModel> for ClockSpec {
    fn from(m: ClockModel) -> Self {
        match m {
            ClockModel::Ideal => ClockSpec::Ideal,
            ClockModel::ConstantPpm { offset_ppm } => ClockSpec::ConstantPpm { offset_ppm },
            ClockModel::RandomWalk {
                step_interval_s,
                step_std_ppm,
                initial_ppm,
                seed,
            } => ClockSpec::RandomWalk {
                step_interval_s,
                step_std_ppm,
                initial_ppm,
                seed,
            },
            ClockModel::Piecewise { segments } => ClockSpec::Piecewise { segments },
            ClockModel::WarmUp {
                initial_ppm,
                settled_ppm,
                time_constant_s,
                noise_std_ppm,
                noise_correlation_s,
                step_interval_s,
                seed,
            } => ClockSpec::WarmUp {
                initial_ppm,
                settled_ppm,
                time_constant_s,
                noise_std_ppm,
                noise_correlation_s,
                step_interval_s,
                seed,
            },
        }
    }
}

/// How a device picks its next slot once its period has elapsed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotPick {
    /// First grid slot at least one period after the previous uplink.
    #[default]
    Earliest,
    /// Uniformly random slot among those inside the next period window.
    RandomInWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub id: u32,
    pub clock: ClockSpec,
    pub tx_period_ns: Nanos,
    pub payload_bytes: usize,
    /// Device-local time of the very first uplink. Drawn uniformly (whole
    /// milliseconds within one period) when unset.
    pub first_tx_ns: Option<Nanos>,
}

impl DeviceSpec {
    pub fn new(id: u32, clock: impl Into<ClockSpec>, tx_period_ns: Nanos) -> Self {
        Self {
            id,
            clock: clock.into(),
            tx_period_ns,
            payload_bytes: 0,
            first_tx_ns: None,
        }
    }

    pub fn with_first_tx(mut self, local_ns: Nanos) -> Self {
        self.first_tx_ns = Some(local_ns);
        self
    }

    pub fn with_payload(mut self, bytes: usize) -> Self {
        self.payload_bytes = bytes;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub duration_ns: Nanos,
    pub slot: SlotConfig,
    /// Downlink radio settings; `pl_bytes` is the plain acknowledgement size.
    /// Used to cost the extra symbols that synchronization bytes add.
    pub downlink: RadioParams,
    pub devices: Vec<DeviceSpec>,
    pub strategy: SyncStrategy,
    pub seed: u64,
    pub duty_cycle_limit: f64,
    pub downlink_loss: f64,
    pub slot_pick: SlotPick,
}

/// 868 MHz experiment: SF7 uplink of 193 bytes, SF8 downlink of 19 bytes,
/// 125 kHz, CR 4/5, 8 preamble symbols.
pub fn experiment_uplink() -> RadioParams {
    RadioParams::new(7, 125_000, 1, 193).expect("valid")
}

pub fn experiment_downlink() -> RadioParams {
    RadioParams::new(8, 125_000, 1, 19)
        .expect("valid")
        .with_crc(false)
}

impl Scenario {
    /// Two boards, one unstable and one stable, each sending every 30 s for
    /// 6.5 hours with 180 ms guards and a 1 s receive delay.
    pub fn experiment(strategy: SyncStrategy, seed: u64) -> Self {
        let up = experiment_uplink();
        let down = experiment_downlink();
        let slot = SlotConfig::from_radio(&up, &down, 1000, 180, 180).expect("valid slot");
        let period = 30 * NS_PER_S;
        Self {
            duration_ns: 23_400 * NS_PER_S,
            slot,
            downlink: down,
            devices: vec![
                DeviceSpec::new(1, ClockSpec::FeatherLike, period).with_payload(193),
                DeviceSpec::new(2, ClockSpec::TtgoLike, period).with_payload(193),
            ],
            strategy,
            seed,
            duty_cycle_limit: 0.01,
            downlink_loss: 0.0,
            slot_pick: SlotPick::Earliest,
        }
    }

    pub fn with_strategy(&self, strategy: SyncStrategy) -> Self {
        Self {
            strategy,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration_ns <= 0 {
            return invalid("duration must be positive");
        }
        if let SyncStrategy::FixedRate { round_ns } = self.strategy {
            if round_ns <= 0 {
                return invalid("fixed-rate round must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.duty_cycle_limit) || self.duty_cycle_limit == 0.0 {
            return invalid("duty_cycle_limit must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.downlink_loss) {
            return invalid("downlink_loss must be in [0, 1]");
        }
        self.downlink.validate()?;
        if self.downlink.pl_bytes as u64 + BASELINE_SYNC_BYTES > 255 {
            return invalid("downlink payload leaves no room for synchronization bytes");
        }
        if self.devices.is_empty() {
            return invalid("at least one device is required");
        }
        let mut seen = BTreeSet::new();
        for (i, d) in self.devices.iter().enumerate() {
            if !seen.insert(d.id) {
                return invalid(format!("duplicate device id {}", d.id));
            }
            if d.tx_period_ns <= 0 {
                return invalid(format!("device {}: tx period must be positive", d.id));
            }
            if d.payload_bytes > MAX_UPLINK_PAYLOAD {
                return invalid(format!(
                    "device {}: payload of {} bytes exceeds {MAX_UPLINK_PAYLOAD}",
                    d.id, d.payload_bytes
                ));
            }
            if d.first_tx_ns.is_some_and(|t| t < 0) {
                return invalid(format!("device {}: first_tx must not be negative", d.id));
            }
            d.clock
                .resolve(self.device_seed(i, 0))
                .validate()
                .map_err(|source| ScenarioError::Clock { id: d.id, source })?;
        }
        Ok(())
    }

    /// Independent random stream seed for device `index`. The same
    /// `(seed, index, stream)` always yields the same value, so paired runs
    /// share clock realizations and first-transmission phases.
    pub fn device_seed(&self, index: usize, stream: u64) -> u64 {
        let mut z = self.seed
            ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
        // splitmix64 finaliser
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn from_toml_str(src: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(src)?;
        file.into_scenario()
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum StrategyName {
    #[default]
    Adaptive,
    FixedRate,
}

fn default_duty_cycle() -> f64 {
    0.01
}

fn default_rx_delay() -> i64 {
    1000
}

fn default_period() -> f64 {
    30.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    duration_s: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    strategy: StrategyName,
    round_s: Option<f64>,
    #[serde(default = "default_duty_cycle")]
    duty_cycle_limit: f64,
    #[serde(default)]
    downlink_loss: f64,
    #[serde(default)]
    slot_pick: SlotPick,
    slot: SlotSection,
    uplink: Option<RadioParams>,
    downlink: Option<RadioParams>,
    #[serde(rename = "device", default)]
    devices: Vec<DeviceSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SlotSection {
    #[serde(default = "default_rx_delay")]
    rx_delay_ms: i64,
    tb1_ms: i64,
    tb2_ms: i64,
    t_tx_ms: Option<i64>,
    t_rx_ms: Option<i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceSection {
    id: u32,
    clock: ClockSpec,
    #[serde(default = "default_period")]
    tx_period_s: f64,
    payload_bytes: Option<usize>,
    first_tx_ms: Option<i64>,
}

fn secs(s: f64, what: &str) -> Result<Nanos, ScenarioError> {
    if !s.is_finite() || s <= 0.0 {
        return invalid(format!("{what} must be a positive number of seconds"));
    }
    Ok((s * NS_PER_S as f64).round() as Nanos)
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        let downlink = self.downlink.unwrap_or_else(experiment_downlink);
        let t_tx_ms = match (self.slot.t_tx_ms, &self.uplink) {
            (Some(ms), _) => ms,
            (None, Some(up)) => crate::airtime::time_on_air(up)?.t_packet_ms_rounded() as i64,
            (None, None) => return invalid("[slot] needs t_tx_ms or an [uplink] section"),
        };
        let t_rx_ms = match self.slot.t_rx_ms {
            Some(ms) => ms,
            None => crate::airtime::time_on_air(&downlink)?.t_packet_ms_rounded() as i64,
        };
        let slot = SlotConfig::from_ms(
            t_tx_ms,
            self.slot.rx_delay_ms,
            t_rx_ms,
            self.slot.tb1_ms,
            self.slot.tb2_ms,
        )?;
        let strategy = match (self.strategy, self.round_s) {
            (StrategyName::Adaptive, None) => SyncStrategy::Adaptive,
            (StrategyName::Adaptive, Some(_)) => {
                return invalid("round_s only applies to strategy = \"fixed_rate\"")
            }
            (StrategyName::FixedRate, Some(r)) => SyncStrategy::FixedRate {
                round_ns: secs(r, "round_s")?,
            },
            (StrategyName::FixedRate, None) => {
                return invalid("strategy = \"fixed_rate\" requires round_s")
            }
        };
        let default_payload = self.uplink.map_or(0, |u| u.pl_bytes as usize);
        let devices = self
            .devices
            .into_iter()
            .map(|d| {
                Ok(DeviceSpec {
                    id: d.id,
                    clock: d.clock,
                    tx_period_ns: secs(d.tx_period_s, "tx_period_s")?,
                    payload_bytes: d.payload_bytes.unwrap_or(default_payload),
                    first_tx_ns: d.first_tx_ms.map(|ms| ms * NS_PER_MS),
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let sc = Scenario {
            duration_ns: secs(self.duration_s, "duration_s")?,
            slot,
            downlink,
            devices,
            strategy,
            seed: self.seed,
            duty_cycle_limit: self.duty_cycle_limit,
            downlink_loss: self.downlink_loss,
            slot_pick: self.slot_pick,
        };
        sc.validate()?;
        Ok(sc)
    }
}
