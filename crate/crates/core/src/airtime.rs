//! LoRa time-on-air.
//!
//! Implements the Semtech SX127x packet duration equations:
//!
//! ```text
//! Ts         = 2^SF / BW
//! T_preamble = (n_preamble + 4.25) * Ts
//! n_bits     = ceil((8PL - 4SF + 28 + 16CRC - 20IH) / (4(SF - 2DE)))
//! n_payload  = 8 + max(n_bits * (CR + 4), 0)
//! T_payload  = n_payload * Ts
//! T_packet   = T_preamble + T_payload
//! ```
//!
//! Every LoRaWAN bandwidth divides `2^SF * 10^6` evenly for SF >= 5, so symbol
//! periods (and their quarter multiples) are whole microseconds. All results
//! here are exact integers; nothing is rounded until [`round_us_to_ms`] is
//! called at a presentation boundary.

use serde::Deserialize;
use thiserror::Error;

/// Bandwidths used by LoRaWAN regional plans, in Hz.
pub const LORAWAN_BANDWIDTHS_HZ: [u32; 3] = [125_000, 250_000, 500_000];

/// Largest LoRa PHY payload.
pub const MAX_PAYLOAD_BYTES: u16 = 255;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamError {
    #[error("spreading factor {0} outside 5..=12")]
    SpreadingFactor(u8),
    #[error("bandwidth {0} Hz is not one of 125000, 250000, 500000")]
    Bandwidth(u32),
    #[error("coding rate index {0} outside 1..=4")]
    CodingRate(u8),
    #[error("preamble length must be at least 1 symbol")]
    Preamble,
    #[error("payload of {0} bytes exceeds the 255 byte limit")]
    Payload(u16),
}

/// Physical-layer parameters feeding the air-time equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "RawRadioParams")]
pub struct RadioParams {
    pub sf: u8,
    pub bw_hz: u32,
    /// Coding rate index: 1..=4 for 4/5..4/8.
    pub cr: u8,
    pub n_preamble: u16,
    pub pl_bytes: u16,
    pub crc_on: bool,
    pub implicit_header: bool,
    pub low_datarate_opt: bool,
}

impl RadioParams {
    /// Explicit header, CRC on, no low-data-rate optimisation, 8 preamble symbols.
    pub fn new(sf: u8, bw_hz: u32, cr: u8, pl_bytes: u16) -> Result<Self, ParamError> {
        let p = Self {
            sf,
            bw_hz,
            cr,
            n_preamble: 8,
            pl_bytes,
            crc_on: true,
            implicit_header: false,
            low_datarate_opt: false,
        };
        p.validate()?;
        Ok(p)
    }

    /// The longest air-time reachable on a LoRaWAN channel: SF12, 125 kHz,
    /// CR 4/8, 255 byte payload.
    pub fn longest_airtime() -> Self {
        Self::new(12, 125_000, 4, MAX_PAYLOAD_BYTES).expect("static parameters are valid")
    }

    pub fn with_crc(mut self, on: bool) -> Self {
        self.crc_on = on;
        self
    }

    pub fn with_payload(mut self, pl_bytes: u16) -> Self {
        self.pl_bytes = pl_bytes;
        self
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(5..=12).contains(&self.sf) {
            return Err(ParamError::SpreadingFactor(self.sf));
        }
        if !LORAWAN_BANDWIDTHS_HZ.contains(&self.bw_hz) {
            return Err(ParamError::Bandwidth(self.bw_hz));
        }
        if !(1..=4).contains(&self.cr) {
            return Err(ParamError::CodingRate(self.cr));
        }
        if self.n_preamble == 0 {
            return Err(ParamError::Preamble);
        }
        if self.pl_bytes > MAX_PAYLOAD_BYTES {
            return Err(ParamError::Payload(self.pl_bytes));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRadioParams {
    sf: u8,
    bw_hz: u32,
    cr: u8,
    #[serde(default = "default_preamble")]
    preamble: u16,
    payload: u16,
    #[serde(default)]
    crc: bool,
    #[serde(default)]
    implicit_header: bool,
    #[serde(default)]
    low_datarate_opt: bool,
}

fn default_preamble() -> u16 {
    8
}

impl TryFrom<RawRadioParams> for RadioParams {
    type Error = ParamError;

    fn try_from(raw: RawRadioParams) -> Result<Self, Self::Error> {
        let p = RadioParams {
            sf: raw.sf,
            bw_hz: raw.bw_hz,
            cr: raw.cr,
            n_preamble: raw.preamble,
            pl_bytes: raw.payload,
            crc_on: raw.crc,
            implicit_header: raw.implicit_header,
            low_datarate_opt: raw.low_datarate_opt,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Packet duration breakdown, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AirTime {
    pub t_preamble_us: u64,
    pub t_payload_us: u64,
    pub t_packet_us: u64,
    pub n_payload_symbols: u32,
}

impl AirTime {
    pub fn t_packet_ns(&self) -> i64 {
        self.t_packet_us as i64 * 1_000
    }

    /// Total air-time rounded half-up to whole milliseconds.
    pub fn t_packet_ms_rounded(&self) -> u64 {
        round_us_to_ms(self.t_packet_us)
    }
}

/// Symbol period `2^SF / BW`, in microseconds.
pub fn symbol_duration_us(p: &RadioParams) -> Result<u64, ParamError> {
    p.validate()?;
    let scaled = (1u64 << p.sf) * 1_000_000;
    debug_assert_eq!(scaled % p.bw_hz as u64, 0);
    Ok(scaled / p.bw_hz as u64)
}

/// Ceiling of the payload bit-block count; may be zero or negative.
fn payload_bit_blocks(p: &RadioParams) -> i64 {
    let num = 8 * p.pl_bytes as i64 - 4 * p.sf as i64 + 28 + 16 * p.crc_on as i64
        - 20 * p.implicit_header as i64;
    let den = 4 * (p.sf as i64 - 2 * p.low_datarate_opt as i64);
    -(-num).div_euclid(den)
}

/// Number of payload symbols, header included. Never less than 8.
pub fn payload_symbol_count(p: &RadioParams) -> Result<u32, ParamError> {
    p.validate()?;
    let blocks = payload_bit_blocks(p);
    Ok(8 + (blocks * (p.cr as i64 + 4)).max(0) as u32)
}

pub fn time_on_air(p: &RadioParams) -> Result<AirTime, ParamError> {
    let ts = symbol_duration_us(p)?;
    let n_payload = payload_symbol_count(p)?;
    // (n + 4.25) * Ts == (4n + 17) * Ts / 4; Ts is a multiple of 4 µs.
    let t_preamble_us = (4 * p.n_preamble as u64 + 17) * ts / 4;
    let t_payload_us = n_payload as u64 * ts;
    Ok(AirTime {
        t_preamble_us,
        t_payload_us,
        t_packet_us: t_preamble_us + t_payload_us,
        n_payload_symbols: n_payload,
    })
}

/// Round-half-up from microseconds to milliseconds.
pub fn round_us_to_ms(us: u64) -> u64 {
    (us + 500) / 1_000
}

/// Bits needed to encode any value in `0..max_slot_ms`, i.e. `ceil(log2(max_slot_ms))`.
pub fn remaining_time_bit_width(max_slot_ms: u32) -> u32 {
    assert!(max_slot_ms >= 1, "slot length must be at least 1 ms");
    u32::BITS - (max_slot_ms - 1).leading_zeros()
}

/// Room left for `tb1 + tb2` once a slot of `t_airtime_ms` is carried in a
/// 16-bit millisecond field.
pub fn guard_headroom_ms(t_airtime_ms: u32) -> Option<u32> {
    (u16::MAX as u32).checked_sub(t_airtime_ms)
}
