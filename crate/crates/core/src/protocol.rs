//! Network-server monitor and end-device synchronizer.
//!
//! The server keeps one immutable epoch and judges every uplink by where its
//! transmission ended inside the slot grid. Only out-sync uplinks get the
//! remaining time to the next slot piggybacked on their acknowledgement; the
//! device subtracts the time it spent waiting for that acknowledgement and
//! re-anchors its own slot grid.
//!
//! [`SyncStrategy::FixedRate`] is the comparison baseline: devices are left
//! alone between rounds and every registered device is resynchronized at its
//! first uplink after each round boundary, whatever its drift.

use std::collections::BTreeMap;

use crate::frame::SyncAck;
use crate::slot::{self, SlotConfig, SyncCheck, TimelineRef};
use crate::{Nanos, NS_PER_MS};

/// FOpts bytes the adaptive protocol spends per resynchronization.
pub const ADAPTIVE_SYNC_BYTES: u64 = 2;
/// Downlink bytes a timestamp-based fixed-rate scheme spends per resynchronization.
pub const BASELINE_SYNC_BYTES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncStrategy {
    Adaptive,
    FixedRate { round_ns: Nanos },
}

impl SyncStrategy {
    pub fn sync_bytes(&self) -> u64 {
        match self {
            SyncStrategy::Adaptive => ADAPTIVE_SYNC_BYTES,
            SyncStrategy::FixedRate { .. } => BASELINE_SYNC_BYTES,
        }
    }

    pub fn tag(&self) -> String {
        match self {
            SyncStrategy::Adaptive => "adaptive".to_string(),
            SyncStrategy::FixedRate { round_ns } => {
                format!("fixed_{}s", round_ns / 1_000_000_000)
            }
        }
    }
}

/// Why a remaining time was attached to an acknowledgement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncReason {
    /// Adaptive: the uplink was out-sync.
    OutSync,
    /// Fixed-rate: the device's very first uplink was out-sync.
    Initial,
    /// Fixed-rate: first uplink after a round boundary.
    Round,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeviceRecord {
    pub last_signed_drift_ns: Nanos,
    pub frames: u64,
    /// Resynchronizations charged to the strategy (adaptive: out-sync
    /// detections; fixed-rate: round boundaries).
    pub resync_count: u64,
    /// Fixed-rate only: bootstrap corrections of an out-sync first frame.
    pub initial_syncs: u64,
    pub out_sync_count: u64,
    pub last_seen_fcnt: u16,
    /// Drift logged at each fixed-rate round boundary.
    pub round_drifts: Vec<Nanos>,
    pending_round_sync: bool,
}

/// What the server will send back for one uplink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AckPlan {
    pub dev_addr: u32,
    pub fcnt: u16,
    pub arrival_pos_ns: Nanos,
    pub check: SyncCheck,
    pub remaining_ms: Option<u32>,
    pub reason: Option<SyncReason>,
    /// Opening of the receive window the acknowledgement goes out in.
    pub scheduled_tx_ns: Nanos,
}

impl AckPlan {
    pub fn to_ack(&self) -> SyncAck {
        SyncAck {
            dev_addr: self.dev_addr,
            fcnt: self.fcnt,
            remaining_ms: self.remaining_ms,
        }
    }
}

/// Emitted for every registered device at a fixed-rate round boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResyncAction {
    pub dev_addr: u32,
    pub logged_drift_ns: Nanos,
}

#[derive(Debug, Clone)]
pub struct NetworkServer {
    timeline: TimelineRef,
    cfg: SlotConfig,
    strategy: SyncStrategy,
    devices: BTreeMap<u32, DeviceRecord>,
}

impl NetworkServer {
    pub fn new(timeline: TimelineRef, cfg: SlotConfig, strategy: SyncStrategy) -> Self {
        Self {
            timeline,
            cfg,
            strategy,
            devices: BTreeMap::new(),
        }
    }

    pub fn timeline(&self) -> TimelineRef {
        self.timeline
    }

    pub fn slot_config(&self) -> &SlotConfig {
        &self.cfg
    }

    pub fn strategy(&self) -> SyncStrategy {
        self.strategy
    }

    pub fn device(&self, dev_addr: u32) -> Option<&DeviceRecord> {
        self.devices.get(&dev_addr)
    }

    pub fn devices(&self) -> impl Iterator<Item = (u32, &DeviceRecord)> {
        self.devices.iter().map(|(k, v)| (*k, v))
    }

    /// Handles the end of an uplink observed at `arrival_ns` (server time).
    /// Unknown devices are registered on the spot.
    ///
    /// # Panics
    ///
    /// If `arrival_ns` precedes the server epoch.
    pub fn on_uplink_end(&mut self, dev_addr: u32, fcnt: u16, arrival_ns: Nanos) -> AckPlan {
        let pos = slot::position_in_slot(arrival_ns, self.timeline, &self.cfg)
            .expect("uplink arrived before the server epoch");
        let check = slot::uplink_end_in_sync(pos, &self.cfg);

        let rec = self.devices.entry(dev_addr).or_default();
        let first = rec.frames == 0;
        rec.frames += 1;
        rec.last_seen_fcnt = fcnt;
        rec.last_signed_drift_ns = check.signed_drift_ns;
        if !check.in_sync {
            rec.out_sync_count += 1;
        }

        let reason = match self.strategy {
            SyncStrategy::Adaptive => (!check.in_sync).then_some(SyncReason::OutSync),
            SyncStrategy::FixedRate { .. } => {
                if std::mem::take(&mut rec.pending_round_sync) {
                    Some(SyncReason::Round)
                } else if first && !check.in_sync {
                    Some(SyncReason::Initial)
                } else {
                    None
                }
            }
        };
        match reason {
            Some(SyncReason::OutSync) => rec.resync_count += 1,
            Some(SyncReason::Initial) => rec.initial_syncs += 1,
            // charged when the round closed
            Some(SyncReason::Round) | None => {}
        }

        let remaining_ms = reason.map(|_| {
            let remaining = self.cfg.t_slot() - pos;
            ((remaining + NS_PER_MS / 2) / NS_PER_MS) as u32
        });
        AckPlan {
            dev_addr,
            fcnt,
            arrival_pos_ns: pos,
            check,
            remaining_ms,
            reason,
            scheduled_tx_ns: arrival_ns + self.cfg.rx_delay(),
        }
    }

    /// Closes a fixed-rate round: logs every registered device's latest drift
    /// and marks it for resynchronization at its next uplink. Does nothing
    /// under the adaptive strategy.
    pub fn fixed_rate_round(&mut self) -> Vec<ResyncAction> {
        if self.strategy == SyncStrategy::Adaptive {
            return Vec::new();
        }
        self.devices
            .iter_mut()
            .map(|(&dev_addr, rec)| {
                rec.resync_count += 1;
                rec.pending_round_sync = true;
                rec.round_drifts.push(rec.last_signed_drift_ns);
                ResyncAction {
                    dev_addr,
                    logged_drift_ns: rec.last_signed_drift_ns,
                }
            })
            .collect()
    }

    pub fn total_resyncs(&self) -> u64 {
        self.devices.values().map(|r| r.resync_count).sum()
    }

    pub fn sync_overhead_bytes(&self) -> u64 {
        self.total_resyncs() * self.strategy.sync_bytes()
    }
}

/// End-device side. All times are device-local.
#[derive(Debug, Clone)]
pub struct EndDevice {
    is_first_tx: bool,
    slot_start: Option<Nanos>,
    last_tx_start: Option<Nanos>,
    t_slot: Nanos,
    tx_period: Nanos,
}

impl EndDevice {
    pub fn new(t_slot: Nanos, tx_period: Nanos) -> Self {
        assert!(t_slot > 0 && tx_period > 0);
        Self {
            is_first_tx: false,
            slot_start: None,
            last_tx_start: None,
            t_slot,
            tx_period,
        }
    }

    pub fn slot_start(&self) -> Option<Nanos> {
        self.slot_start
    }

    pub fn has_transmitted(&self) -> bool {
        self.is_first_tx
    }

    /// When the next uplink should start. Before the first uplink that is
    /// `now`; afterwards it is the earliest point of the device's slot grid
    /// that is both `>= now` and at least one period after the last uplink.
    pub fn next_tx_time(&self, now_local: Nanos) -> Nanos {
        let (Some(anchor), Some(last)) = (self.slot_start, self.last_tx_start) else {
            return now_local;
        };
        let earliest = now_local.max(last + self.tx_period);
        let k = -(anchor - earliest).div_euclid(self.t_slot);
        anchor + k * self.t_slot
    }

    /// Records an uplink starting at `tx_start_local`. The first one becomes
    /// the device's provisional slot anchor.
    pub fn on_transmit(&mut self, tx_start_local: Nanos) {
        if !self.is_first_tx {
            self.is_first_tx = true;
            self.slot_start = Some(tx_start_local);
        }
        self.last_tx_start = Some(tx_start_local);
    }

    /// Applies an acknowledgement. `beg` is the local end of the uplink and
    /// `end` the local end of the acknowledgement. Without a remaining time
    /// nothing changes.
    pub fn on_ack(&mut self, beg_local: Nanos, end_local: Nanos, ack: &SyncAck) {
        let Some(remaining_ms) = ack.remaining_ms else {
            return;
        };
        let elapsed = end_local - beg_local;
        let mut t = remaining_ms as Nanos * NS_PER_MS - elapsed;
        if t < 0 {
            t = t.rem_euclid(self.t_slot);
        }
        self.slot_start = Some(end_local + t);
    }
}
