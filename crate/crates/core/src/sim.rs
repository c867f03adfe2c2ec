//! Deterministic discrete-event simulation of devices, gateway and server.
//!
//! Time is virtual and kept in integer nanoseconds of true (server) time.
//! Events pop in `(time, sequence)` order, so a scenario and seed always
//! produce the same trace.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::airtime;
use crate::clock::SimClock;
use crate::frame::{self, UplinkFrame, SYNC_FPORT};
use crate::protocol::{EndDevice, NetworkServer, SyncStrategy};
use crate::scenario::{Scenario, ScenarioError, SlotPick};
use crate::slot::{self, SlotConfig, TimelineRef};
use crate::{Nanos, NS_PER_MS};

const STREAM_CLOCK: u64 = 0;
const STREAM_PHASE: u64 = 1;
const STREAM_LINK: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    UplinkStart,
    UplinkEnd,
    Rx1Open,
    AckEnd,
    RoundBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Event {
    pub true_time_ns: Nanos,
    pub tie_break: u64,
    pub kind: EventKind,
    /// Index into the scenario's device list; unused for round boundaries.
    pub device: usize,
}

#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
}

impl EventQueue {
    fn push(&mut self, true_time_ns: Nanos, kind: EventKind, device: usize) {
        self.heap.push(Reverse(Event {
            true_time_ns,
            tie_break: self.next_seq,
            kind,
            device,
        }));
        self.next_seq += 1;
    }

    fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    None,
    Resync,
}

impl Action {
    pub fn as_str(&self) -> &'static str {
        match self {
            Action::None => "none",
            Action::Resync => "resync",
        }
    }
}

/// One row per uplink, emitted when the server sees the uplink end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub frame_index: u64,
    pub device_id: u32,
    pub true_time_ns: Nanos,
    pub arrival_position_ns: Nanos,
    pub signed_drift_ns: Nanos,
    pub in_sync: bool,
    pub action: Action,
    pub remaining_ms: Option<u32>,
    pub strategy: String,
}

pub type Trace = Vec<TraceRow>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriftSample {
    pub true_time_ns: Nanos,
    pub signed_drift_ns: Nanos,
    pub in_sync: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeviceMetrics {
    pub id: u32,
    pub frames: u64,
    pub resync_count: u64,
    pub initial_syncs: u64,
    pub out_sync_frames: u64,
    /// Out-sync frames after the first one, i.e. guard exceedances by a
    /// device that already had a slot grid.
    pub slot_violations: u64,
    pub acks_lost: u64,
    pub drift_series: Vec<DriftSample>,
    pub round_drifts: Vec<Nanos>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GatewayMetrics {
    pub downlink_count: u64,
    pub sync_overhead_bytes: u64,
    pub downlink_airtime_ns: Nanos,
    /// `(start, duration)` of every downlink, in transmission order.
    pub downlinks: Vec<(Nanos, Nanos)>,
    pub duty_cycle_used_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub strategy: SyncStrategy,
    pub duration_ns: Nanos,
    pub duty_cycle_limit: f64,
    pub devices: Vec<DeviceMetrics>,
    pub gateway: GatewayMetrics,
    pub collision_count: u64,
    pub frames_total: u64,
}

impl Metrics {
    pub fn total_resyncs(&self) -> u64 {
        self.devices.iter().map(|d| d.resync_count).sum()
    }

    pub fn total_violations(&self) -> u64 {
        self.devices.iter().map(|d| d.slot_violations).sum()
    }

    pub fn device(&self, id: u32) -> Option<&DeviceMetrics> {
        self.devices.iter().find(|d| d.id == id)
    }
}

/// A frame is a slot violation when its end-of-uplink drift exceeds a guard.
pub fn detect_violation(arrival_pos_ns: Nanos, cfg: &SlotConfig) -> bool {
    !slot::uplink_end_in_sync(arrival_pos_ns, cfg).in_sync
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DutyCycleReport {
    pub window_ns: Nanos,
    /// Highest downlink air-time fraction over any window of `window_ns`.
    pub worst_fraction: f64,
    pub limit: f64,
    pub within_limit: bool,
}

pub fn duty_cycle_report(m: &Metrics, window_ns: Nanos) -> DutyCycleReport {
    let worst = worst_window_fraction(&m.gateway.downlinks, m.duration_ns, window_ns);
    DutyCycleReport {
        window_ns,
        worst_fraction: worst,
        limit: m.duty_cycle_limit,
        within_limit: worst <= m.duty_cycle_limit,
    }
}

/// Largest share of any `window_ns`-long window inside `[0, horizon_ns]`
/// covered by transmissions. `txs` must be sorted by start time.
///
/// The maximum is reached by a window that starts at some transmission start
/// or ends at some transmission end, so only those candidates are scanned.
pub fn worst_window_fraction(txs: &[(Nanos, Nanos)], horizon_ns: Nanos, window_ns: Nanos) -> f64 {
    assert!(window_ns > 0, "window must be positive");
    if txs.is_empty() {
        return 0.0;
    }
    let window = window_ns.min(horizon_ns.max(1));
    let latest_start = (horizon_ns - window).max(0);
    let longest = txs.iter().map(|&(_, d)| d).max().unwrap_or(0);
    let candidates = txs
        .iter()
        .flat_map(|&(s, d)| [s, s + d - window])
        .map(|s| s.clamp(0, latest_start));
    let mut best = 0;
    for lo in candidates {
        let hi = lo + window;
        let first = txs.partition_point(|&(s, _)| s + longest <= lo);
        let covered: Nanos = txs[first..]
            .iter()
            .take_while(|&&(s, _)| s < hi)
            .map(|&(s, d)| (s + d).min(hi) - s.max(lo))
            .filter(|&c| c > 0)
            .sum();
        best = best.max(covered);
    }
    best as f64 / window as f64
}

struct Device {
    id: u32,
    clock: SimClock,
    ed: EndDevice,
    rng: ChaCha8Rng,
    link_rng: ChaCha8Rng,
    payload: Vec<u8>,
    fcnt: u16,
    tx_period: Nanos,
    /// Device-local end of the current uplink.
    beg_local: Nanos,
    pending_ack: Option<Vec<u8>>,
    ack_delivered: bool,
    metrics: DeviceMetrics,
}

struct Sim<'a> {
    sc: &'a Scenario,
    queue: EventQueue,
    server: NetworkServer,
    devices: Vec<Device>,
    gateway: GatewayMetrics,
    active_uplinks: Vec<(Nanos, usize)>,
    collision_count: u64,
    trace: Trace,
    strategy_tag: String,
    /// Extra downlink air-time when an acknowledgement carries sync bytes.
    sync_airtime_ns: Nanos,
}

/// Runs `sc` to completion.
///
/// Uplinks are only started up to `duration`; acknowledgements of uplinks
/// already in flight are still delivered, so every uplink gets exactly one
/// acknowledgement event.
pub fn run(sc: &Scenario) -> Result<(Metrics, Trace), ScenarioError> {
    sc.validate()?;
    let mut sim = Sim::new(sc)?;
    sim.start();
    while let Some(ev) = sim.queue.pop() {
        sim.handle(ev);
    }
    Ok(sim.finish())
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario) -> Result<Self, ScenarioError> {
        let cfg = sc.slot;
        let devices = sc
            .devices
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let clock = SimClock::new(spec.clock.resolve(sc.device_seed(i, STREAM_CLOCK)))
                    .map_err(|source| ScenarioError::Clock {
                        id: spec.id,
                        source,
                    })?;
                Ok(Device {
                    id: spec.id,
                    clock,
                    ed: EndDevice::new(cfg.t_slot(), spec.tx_period_ns),
                    rng: ChaCha8Rng::seed_from_u64(sc.device_seed(i, STREAM_PHASE)),
                    link_rng: ChaCha8Rng::seed_from_u64(sc.device_seed(i, STREAM_LINK)),
                    payload: vec![0; spec.payload_bytes],
                    fcnt: 0,
                    tx_period: spec.tx_period_ns,
                    beg_local: 0,
                    pending_ack: None,
                    ack_delivered: false,
                    metrics: DeviceMetrics {
                        id: spec.id,
                        ..Default::default()
                    },
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;

        let base = airtime::time_on_air(&sc.downlink)?;
        let extended = airtime::time_on_air(
            &sc.downlink
                .with_payload(sc.downlink.pl_bytes + sc.strategy.sync_bytes() as u16),
        )?;
        let sync_airtime_ns = extended.t_packet_ns() - base.t_packet_ns();

        Ok(Self {
            sc,
            queue: EventQueue::default(),
            server: NetworkServer::new(TimelineRef::new(0), cfg, sc.strategy),
            devices,
            gateway: GatewayMetrics::default(),
            active_uplinks: Vec::new(),
            collision_count: 0,
            trace: Vec::new(),
            strategy_tag: sc.strategy.tag(),
            sync_airtime_ns,
        })
    }

    fn start(&mut self) {
        if let SyncStrategy::FixedRate { round_ns } = self.sc.strategy {
            for k in 1..=self.sc.duration_ns / round_ns {
                self.queue.push(k * round_ns, EventKind::RoundBoundary, 0);
            }
        }
        for i in 0..self.devices.len() {
            let spec = &self.sc.devices[i];
            let dev = &mut self.devices[i];
            let wake_local = spec.first_tx_ns.unwrap_or_else(|| {
                let period_ms = (spec.tx_period_ns / NS_PER_MS).max(1);
                dev.rng.gen_range(0..period_ms) * NS_PER_MS
            });
            let local = dev.ed.next_tx_time(wake_local);
            let t = dev.clock.true_time_for_local(local);
            if t <= self.sc.duration_ns {
                self.queue.push(t, EventKind::UplinkStart, i);
            }
        }
    }

    fn handle(&mut self, ev: Event) {
        let now = ev.true_time_ns;
        let i = ev.device;
        match ev.kind {
            EventKind::UplinkStart => self.uplink_start(now, i),
            EventKind::UplinkEnd => self.uplink_end(now, i),
            EventKind::Rx1Open => self.rx1_open(now, i),
            EventKind::AckEnd => self.ack_end(now, i),
            EventKind::RoundBoundary => {
                self.server.fixed_rate_round();
            }
        }
    }

    fn uplink_start(&mut self, now: Nanos, i: usize) {
        let end = now + self.sc.slot.t_tx();
        let dev = &mut self.devices[i];
        let local = dev.clock.local_time(now).expect("events are time-ordered");
        dev.ed.on_transmit(local);

        self.active_uplinks.retain(|&(e, _)| e > now);
        self.collision_count += self
            .active_uplinks
            .iter()
            .filter(|&&(_, other)| other != i)
            .count() as u64;
        self.active_uplinks.push((end, i));
        self.queue.push(end, EventKind::UplinkEnd, i);
    }

    fn uplink_end(&mut self, now: Nanos, i: usize) {
        let dev = &mut self.devices[i];
        dev.beg_local = dev.clock.local_time(now).expect("events are time-ordered");
        let bytes = frame::encode_uplink(&UplinkFrame {
            dev_addr: dev.id,
            fcnt: dev.fcnt,
            fport: SYNC_FPORT,
            payload: dev.payload.clone(),
        })
        .expect("payload size validated with the scenario");
        dev.fcnt = dev.fcnt.wrapping_add(1);

        let up = frame::decode_uplink(&bytes).expect("own encoding decodes");
        debug_assert!(up.is_sync_device());
        let plan = self.server.on_uplink_end(up.dev_addr, up.fcnt, now);

        let m = &mut dev.metrics;
        let first = m.frames == 0;
        m.frames += 1;
        if !plan.check.in_sync {
            m.out_sync_frames += 1;
            if !first {
                m.slot_violations += 1;
            }
        }
        m.drift_series.push(DriftSample {
            true_time_ns: now,
            signed_drift_ns: plan.check.signed_drift_ns,
            in_sync: plan.check.in_sync,
        });
        self.trace.push(TraceRow {
            frame_index: self.trace.len() as u64,
            device_id: dev.id,
            true_time_ns: now,
            arrival_position_ns: plan.arrival_pos_ns,
            signed_drift_ns: plan.check.signed_drift_ns,
            in_sync: plan.check.in_sync,
            action: if plan.remaining_ms.is_some() {
                Action::Resync
            } else {
                Action::None
            },
            remaining_ms: plan.remaining_ms,
            strategy: self.strategy_tag.clone(),
        });

        dev.pending_ack = Some(frame::encode_ack(&plan.to_ack()).expect("remaining fits"));
        self.queue.push(plan.scheduled_tx_ns, EventKind::Rx1Open, i);
    }

    fn rx1_open(&mut self, now: Nanos, i: usize) {
        let dev = &mut self.devices[i];
        let carries_sync = dev
            .pending_ack
            .as_ref()
            .is_some_and(|b| b.len() > frame::FHDR_LEN);
        let airtime = self.sc.slot.t_rx()
            + if carries_sync {
                self.sync_airtime_ns
            } else {
                0
            };
        self.gateway.downlink_count += 1;
        self.gateway.downlink_airtime_ns += airtime;
        self.gateway.downlinks.push((now, airtime));

        dev.ack_delivered =
            self.sc.downlink_loss == 0.0 || dev.link_rng.gen::<f64>() >= self.sc.downlink_loss;
        if !dev.ack_delivered {
            dev.metrics.acks_lost += 1;
        }
        self.queue.push(now + airtime, EventKind::AckEnd, i);
    }

    fn ack_end(&mut self, now: Nanos, i: usize) {
        let dev = &mut self.devices[i];
        let end_local = dev.clock.local_time(now).expect("events are time-ordered");
        let bytes = dev.pending_ack.take().expect("ack follows an uplink");
        if dev.ack_delivered {
            let ack = frame::decode_ack(&bytes).expect("own encoding decodes");
            dev.ed.on_ack(dev.beg_local, end_local, &ack);
        }

        let mut next = dev.ed.next_tx_time(end_local);
        if self.sc.slot_pick == SlotPick::RandomInWindow {
            let slots = (dev.tx_period / self.sc.slot.t_slot()).max(1);
            next += dev.rng.gen_range(0..slots) * self.sc.slot.t_slot();
        }
        let t = dev.clock.true_time_for_local(next);
        if t <= self.sc.duration_ns {
            self.queue.push(t, EventKind::UplinkStart, i);
        }
    }

    fn finish(self) -> (Metrics, Trace) {
        let mut devices: Vec<DeviceMetrics> = self.devices.into_iter().map(|d| d.metrics).collect();
        for d in &mut devices {
            if let Some(rec) = self.server.device(d.id) {
                d.resync_count = rec.resync_count;
                d.initial_syncs = rec.initial_syncs;
                d.round_drifts = rec.round_drifts.clone();
            }
        }
        let mut gateway = self.gateway;
        gateway.sync_overhead_bytes = self.server.sync_overhead_bytes();
        gateway.duty_cycle_used_fraction =
            gateway.downlink_airtime_ns as f64 / self.sc.duration_ns as f64;
        let frames_total = devices.iter().map(|d| d.frames).sum();
        let metrics = Metrics {
            strategy: self.sc.strategy,
            duration_ns: self.sc.duration_ns,
            duty_cycle_limit: self.sc.duty_cycle_limit,
            devices,
            gateway,
            collision_count: self.collision_count,
            frames_total,
        };
        (metrics, self.trace)
    }
}
