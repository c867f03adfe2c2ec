//! Slot geometry and modular timeline arithmetic.
//!
//! A slot is laid out as
//!
//! ```text
//! |<- t_tx ->|<- rx_delay ->|<- t_rx ->|<- tb1 + tb2 ->|
//! ^ slot start                                          ^ next slot start
//! ```
//!
//! Uplinks start on the slot boundary, so a perfectly aligned uplink ends at
//! offset `t_tx`. The guard pair sits at the tail: a device may end up to
//! `tb1` early or `tb2` late without touching its neighbours.

use thiserror::Error;

use crate::airtime::{self, ParamError, RadioParams};
use crate::clock::is_in_sync;
use crate::{Nanos, NS_PER_MS};

/// Largest slot whose remaining time still fits the 16-bit millisecond field.
pub const MAX_SLOT_MS: i64 = u16::MAX as i64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SlotError {
    #[error("{0} must not be negative")]
    Negative(&'static str),
    #[error("uplink air-time ({t_tx} ns) must exceed tb1 ({tb1} ns)")]
    TxShorterThanGuard { t_tx: Nanos, tb1: Nanos },
    #[error("guard {name} ({value} ns) must be shorter than half a slot ({t_slot} ns)")]
    GuardTooLong {
        name: &'static str,
        value: Nanos,
        t_slot: Nanos,
    },
    #[error("slot length {0} ns does not fit a 16-bit millisecond field")]
    SlotTooLong(Nanos),
    #[error("time {time} ns precedes the timeline reference {reference} ns")]
    BeforeReference { time: Nanos, reference: Nanos },
    #[error(transparent)]
    Radio(#[from] ParamError),
}

/// Slot geometry; all fields in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotConfig {
    t_tx: Nanos,
    rx_delay: Nanos,
    t_rx: Nanos,
    tb1: Nanos,
    tb2: Nanos,
    t_slot: Nanos,
}

impl SlotConfig {
    pub fn new(
        t_tx: Nanos,
        rx_delay: Nanos,
        t_rx: Nanos,
        tb1: Nanos,
        tb2: Nanos,
    ) -> Result<Self, SlotError> {
        for (name, v) in [
            ("t_tx", t_tx),
            ("rx_delay", rx_delay),
            ("t_rx", t_rx),
            ("tb1", tb1),
            ("tb2", tb2),
        ] {
            if v < 0 {
                return Err(SlotError::Negative(name));
            }
        }
        if t_tx <= tb1 {
            return Err(SlotError::TxShorterThanGuard { t_tx, tb1 });
        }
        let t_slot = t_tx + rx_delay + t_rx + tb1 + tb2;
        if t_slot > MAX_SLOT_MS * NS_PER_MS {
            return Err(SlotError::SlotTooLong(t_slot));
        }
        for (name, value) in [("tb1", tb1), ("tb2", tb2)] {
            if 2 * value >= t_slot {
                return Err(SlotError::GuardTooLong {
                    name,
                    value,
                    t_slot,
                });
            }
        }
        Ok(Self {
            t_tx,
            rx_delay,
            t_rx,
            tb1,
            tb2,
            t_slot,
        })
    }

    pub fn from_ms(
        t_tx_ms: i64,
        rx_delay_ms: i64,
        t_rx_ms: i64,
        tb1_ms: i64,
        tb2_ms: i64,
    ) -> Result<Self, SlotError> {
        Self::new(
            t_tx_ms * NS_PER_MS,
            rx_delay_ms * NS_PER_MS,
            t_rx_ms * NS_PER_MS,
            tb1_ms * NS_PER_MS,
            tb2_ms * NS_PER_MS,
        )
    }

    /// Builds the geometry from uplink and downlink radio settings.
    ///
    /// Both air-times are rounded half-up to whole milliseconds so that the
    /// slot length is a whole number of milliseconds, which keeps the 1 ms
    /// remaining-time field exact.
    pub fn from_radio(
        uplink: &RadioParams,
        downlink: &RadioParams,
        rx_delay_ms: i64,
        tb1_ms: i64,
        tb2_ms: i64,
    ) -> Result<Self, SlotError> {
        let t_tx_ms = airtime::time_on_air(uplink)?.t_packet_ms_rounded() as i64;
        let t_rx_ms = airtime::time_on_air(downlink)?.t_packet_ms_rounded() as i64;
        Self::from_ms(t_tx_ms, rx_delay_ms, t_rx_ms, tb1_ms, tb2_ms)
    }

    pub fn t_tx(&self) -> Nanos {
        self.t_tx
    }
    pub fn rx_delay(&self) -> Nanos {
        self.rx_delay
    }
    pub fn t_rx(&self) -> Nanos {
        self.t_rx
    }
    pub fn tb1(&self) -> Nanos {
        self.tb1
    }
    pub fn tb2(&self) -> Nanos {
        self.tb2
    }
    pub fn t_slot(&self) -> Nanos {
        self.t_slot
    }

    /// Fraction of a slot over which an arbitrary arrival is judged in-sync.
    pub fn in_sync_fraction(&self) -> f64 {
        (self.tb1 + self.tb2) as f64 / self.t_slot as f64
    }
}

/// The network server's epoch: start of the very first slot. Set once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimelineRef(Nanos);

impl TimelineRef {
    pub const fn new(ref_ns: Nanos) -> Self {
        Self(ref_ns)
    }

    pub fn ns(&self) -> Nanos {
        self.0
    }
}

pub fn slot_start(timeline: TimelineRef, n: u64, cfg: &SlotConfig) -> Nanos {
    timeline.0 + n as Nanos * cfg.t_slot
}

/// Offset of `time_ns` inside the ongoing slot, in `[0, t_slot)`.
pub fn position_in_slot(
    time_ns: Nanos,
    timeline: TimelineRef,
    cfg: &SlotConfig,
) -> Result<Nanos, SlotError> {
    if time_ns < timeline.0 {
        return Err(SlotError::BeforeReference {
            time: time_ns,
            reference: timeline.0,
        });
    }
    Ok((time_ns - timeline.0) % cfg.t_slot)
}

/// Time until the next slot boundary, in `(0, t_slot]`. At a boundary this is
/// a full slot: the next start is always in the future.
pub fn remaining_to_next_slot(
    time_ns: Nanos,
    timeline: TimelineRef,
    cfg: &SlotConfig,
) -> Result<Nanos, SlotError> {
    Ok(cfg.t_slot - position_in_slot(time_ns, timeline, cfg)?)
}

/// Outcome of checking where an uplink ended inside its slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncCheck {
    pub in_sync: bool,
    /// Expected minus observed end of uplink, folded into `(-t_slot/2, t_slot/2]`.
    /// Positive means the frame ended early.
    pub signed_drift_ns: Nanos,
}

/// Judges an uplink from the position at which its transmission ended.
/// In-sync iff `-tb2 < t_tx - arrival_pos < tb1`.
pub fn uplink_end_in_sync(arrival_pos_ns: Nanos, cfg: &SlotConfig) -> SyncCheck {
    debug_assert!((0..cfg.t_slot).contains(&arrival_pos_ns));
    let mut drift = cfg.t_tx - arrival_pos_ns;
    if 2 * drift > cfg.t_slot {
        drift -= cfg.t_slot;
    } else if 2 * drift <= -cfg.t_slot {
        drift += cfg.t_slot;
    }
    SyncCheck {
        in_sync: is_in_sync(drift, cfg.tb1, cfg.tb2),
        signed_drift_ns: drift,
    }
}

/// True-time interval a device occupies in slot `n` (uplink start to end of
/// its downlink window) when its uplink ends `signed_drift_ns` early.
pub fn slot_occupancy(
    timeline: TimelineRef,
    n: u64,
    signed_drift_ns: Nanos,
    cfg: &SlotConfig,
) -> (Nanos, Nanos) {
    let start = slot_start(timeline, n, cfg) - signed_drift_ns;
    (start, start + cfg.t_tx + cfg.rx_delay + cfg.t_rx)
}
