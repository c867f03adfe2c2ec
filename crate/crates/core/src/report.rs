//! Trace CSV and run summaries.
//!
//! Trace columns, in order:
//!
//! ```text
//! frame_index,device_id,true_time_ms,arrival_position_ms,signed_drift_ms,in_sync,action,remaining_ms,strategy
//! ```
//!
//! Times are milliseconds with six decimals (nanosecond resolution),
//! `in_sync` is `true`/`false`, `action` is `none` or `resync`, and
//! `remaining_ms` is empty when no remaining time was sent.

use std::fmt;
use std::io::Write;

use crate::scenario::Scenario;
use crate::sim::{duty_cycle_report, Metrics, Trace};
use crate::{Nanos, NS_PER_MS, NS_PER_S};

pub const TRACE_HEADER: [&str; 9] = [
    "frame_index",
    "device_id",
    "true_time_ms",
    "arrival_position_ms",
    "signed_drift_ms",
    "in_sync",
    "action",
    "remaining_ms",
    "strategy",
];

/// Duty-cycle window used in summaries.
pub const DUTY_CYCLE_WINDOW_NS: Nanos = 3600 * NS_PER_S;

/// Formats nanoseconds as milliseconds with six decimals, without floats.
pub fn format_ms(ns: Nanos) -> String {
    let sign = if ns < 0 { "-" } else { "" };
    let abs = ns.unsigned_abs();
    let per = NS_PER_MS as u64;
    format!("{sign}{}.{:06}", abs / per, abs % per)
}

pub fn write_trace_csv<W: Write>(trace: &Trace, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        w.write_record([
            r.frame_index.to_string(),
            r.device_id.to_string(),
            format_ms(r.true_time_ns),
            format_ms(r.arrival_position_ns),
            format_ms(r.signed_drift_ns),
            r.in_sync.to_string(),
            r.action.as_str().to_string(),
            r.remaining_ms.map(|v| v.to_string()).unwrap_or_default(),
            r.strategy.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSummary {
    pub id: u32,
    pub frames: u64,
    pub resyncs: u64,
    pub initial_syncs: u64,
    pub out_sync_frames: u64,
    pub violations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub strategy: String,
    pub duration_ns: Nanos,
    pub devices: Vec<DeviceSummary>,
    pub total_resyncs: u64,
    pub total_violations: u64,
    pub sync_overhead_bytes: u64,
    pub downlink_count: u64,
    pub duty_cycle_fraction: f64,
    pub worst_hour_fraction: f64,
    pub duty_cycle_limit: f64,
    pub collisions: u64,
    pub frames_total: u64,
    /// Where a perfectly aligned uplink ends inside its slot.
    pub ideal_arrival_ns: Nanos,
    /// Latest in-sync end position (late bound).
    pub upper_bound_ns: Nanos,
    /// Earliest in-sync end position (early bound).
    pub lower_bound_ns: Nanos,
    pub t_slot_ns: Nanos,
}

impl RunSummary {
    pub fn new(sc: &Scenario, m: &Metrics) -> Self {
        let cfg = &sc.slot;
        Self {
            strategy: m.strategy.tag(),
            duration_ns: m.duration_ns,
            devices: m
                .devices
                .iter()
                .map(|d| DeviceSummary {
                    id: d.id,
                    frames: d.frames,
                    resyncs: d.resync_count,
                    initial_syncs: d.initial_syncs,
                    out_sync_frames: d.out_sync_frames,
                    violations: d.slot_violations,
                })
                .collect(),
            total_resyncs: m.total_resyncs(),
            total_violations: m.total_violations(),
            sync_overhead_bytes: m.gateway.sync_overhead_bytes,
            downlink_count: m.gateway.downlink_count,
            duty_cycle_fraction: m.gateway.duty_cycle_used_fraction,
            worst_hour_fraction: duty_cycle_report(m, DUTY_CYCLE_WINDOW_NS).worst_fraction,
            duty_cycle_limit: m.duty_cycle_limit,
            collisions: m.collision_count,
            frames_total: m.frames_total,
            ideal_arrival_ns: cfg.t_tx(),
            upper_bound_ns: cfg.t_tx() + cfg.tb2(),
            lower_bound_ns: cfg.t_tx() - cfg.tb1(),
            t_slot_ns: cfg.t_slot(),
        }
    }

    /// Machine-readable `key=value` pairs, stable order.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("strategy".to_string(), self.strategy.clone()),
            (
                "duration_s".into(),
                (self.duration_ns / NS_PER_S).to_string(),
            ),
            ("frames_total".into(), self.frames_total.to_string()),
            ("total_resyncs".into(), self.total_resyncs.to_string()),
            ("total_violations".into(), self.total_violations.to_string()),
            (
                "sync_overhead_bytes".into(),
                self.sync_overhead_bytes.to_string(),
            ),
            ("downlink_count".into(), self.downlink_count.to_string()),
            (
                "duty_cycle_fraction".into(),
                format!("{:.6}", self.duty_cycle_fraction),
            ),
            (
                "worst_hour_fraction".into(),
                format!("{:.6}", self.worst_hour_fraction),
            ),
            (
                "duty_cycle_limit".into(),
                format!("{}", self.duty_cycle_limit),
            ),
            ("collisions".into(), self.collisions.to_string()),
            ("t_slot_ms".into(), format_ms(self.t_slot_ns)),
            ("ideal_arrival_ms".into(), format_ms(self.ideal_arrival_ns)),
            ("upper_bound_ms".into(), format_ms(self.upper_bound_ns)),
            ("lower_bound_ms".into(), format_ms(self.lower_bound_ns)),
        ];
        for d in &self.devices {
            let p = format!("device.{}", d.id);
            kv.push((format!("{p}.frames"), d.frames.to_string()));
            kv.push((format!("{p}.resyncs"), d.resyncs.to_string()));
            kv.push((format!("{p}.initial_syncs"), d.initial_syncs.to_string()));
            kv.push((
                format!("{p}.out_sync_frames"),
                d.out_sync_frames.to_string(),
            ));
            kv.push((format!("{p}.violations"), d.violations.to_string()));
        }
        kv
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "strategy {}  duration {} s  frames {}",
            self.strategy,
            self.duration_ns / NS_PER_S,
            self.frames_total
        )?;
        writeln!(
            f,
            "slot {} ms  ideal arrival {} ms  in-sync window ({}, {}) ms",
            format_ms(self.t_slot_ns),
            format_ms(self.ideal_arrival_ns),
            format_ms(self.lower_bound_ns),
            format_ms(self.upper_bound_ns)
        )?;
        writeln!(
            f,
            "{:>8} {:>7} {:>8} {:>8} {:>9} {:>10}",
            "device", "frames", "resyncs", "initial", "out-sync", "violations"
        )?;
        for d in &self.devices {
            writeln!(
                f,
                "{:>8} {:>7} {:>8} {:>8} {:>9} {:>10}",
                d.id, d.frames, d.resyncs, d.initial_syncs, d.out_sync_frames, d.violations
            )?;
        }
        writeln!(
            f,
            "resyncs {}  sync overhead {} B  downlinks {}  collisions {}",
            self.total_resyncs, self.sync_overhead_bytes, self.downlink_count, self.collisions
        )?;
        write!(
            f,
            "duty cycle {:.4}% overall, {:.4}% worst hour (limit {:.2}%)",
            self.duty_cycle_fraction * 100.0,
            self.worst_hour_fraction * 100.0,
            self.duty_cycle_limit * 100.0
        )
    }
}

/// Adaptive run against one or more fixed-rate runs on the same scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub adaptive: RunSummary,
    pub fixed: Vec<RunSummary>,
}

impl Comparison {
    /// Fixed-rate resynchronizations per adaptive one.
    pub fn resync_ratio(&self, fixed: &RunSummary) -> Option<f64> {
        (self.adaptive.total_resyncs > 0)
            .then(|| fixed.total_resyncs as f64 / self.adaptive.total_resyncs as f64)
    }

    /// Fixed-rate synchronization bytes per adaptive byte.
    pub fn overhead_ratio(&self, fixed: &RunSummary) -> Option<f64> {
        (self.adaptive.sync_overhead_bytes > 0)
            .then(|| fixed.sync_overhead_bytes as f64 / self.adaptive.sync_overhead_bytes as f64)
    }
}

fn ratio_cell(r: Option<f64>) -> String {
    r.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let runs: Vec<&RunSummary> = std::iter::once(&self.adaptive).chain(&self.fixed).collect();
        write!(f, "{:<22}", "")?;
        for r in &runs {
            write!(f, "{:>14}", r.strategy)?;
        }
        writeln!(f)?;
        let mut row = |name: &str, cell: &dyn Fn(&RunSummary) -> String| -> fmt::Result {
            write!(f, "{name:<22}")?;
            for r in &runs {
                write!(f, "{:>14}", cell(r))?;
            }
            writeln!(f)
        };
        row("resyncs", &|r| r.total_resyncs.to_string())?;
        row("violations", &|r| r.total_violations.to_string())?;
        row("sync bytes", &|r| r.sync_overhead_bytes.to_string())?;
        row("duty cycle %", &|r| {
            format!("{:.4}", r.duty_cycle_fraction * 100.0)
        })?;
        row("worst hour %", &|r| {
            format!("{:.4}", r.worst_hour_fraction * 100.0)
        })?;
        let is_base = |r: &RunSummary| std::ptr::eq(r, &self.adaptive);
        row("resync ratio", &|r| {
            if is_base(r) {
                "1.00".into()
            } else {
                ratio_cell(self.resync_ratio(r))
            }
        })?;
        row("byte ratio", &|r| {
            if is_base(r) {
                "1.00".into()
            } else {
                ratio_cell(self.overhead_ratio(r))
            }
        })?;
        Ok(())
    }
}
