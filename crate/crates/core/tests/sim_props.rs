use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use lorasync_core::report::write_trace_csv;
use lorasync_core::scenario::experiment_downlink;
use lorasync_core::sim::duty_cycle_report;
use lorasync_core::{
    run, ClockModel, DeviceSpec, Nanos, Scenario, SlotPick, SyncStrategy, Trace, NS_PER_MS,
    NS_PER_S,
};
use proptest::prelude::*;

const MS: Nanos = NS_PER_MS;

fn fixed(round_s: i64) -> SyncStrategy {
    SyncStrategy::FixedRate {
        round_ns: round_s * NS_PER_S,
    }
}

fn trace_hash(trace: &Trace) -> u64 {
    let mut csv = Vec::new();
    write_trace_csv(trace, &mut csv).unwrap();
    let mut h = DefaultHasher::new();
    csv.hash(&mut h);
    h.finish()
}

#[test]
fn same_seed_same_everything() {
    let sc = Scenario::experiment(SyncStrategy::Adaptive, 42);
    let (m1, t1) = run(&sc).unwrap();
    let (m2, t2) = run(&sc).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(t1, t2);
    assert_eq!(trace_hash(&t1), trace_hash(&t2));
    let (_, t3) = run(&Scenario::experiment(SyncStrategy::Adaptive, 43)).unwrap();
    assert_ne!(trace_hash(&t1), trace_hash(&t3));
}

#[test]
fn fixed_rate_counts_for_the_experiment() {
    for seed in 0..20 {
        let base = Scenario::experiment(SyncStrategy::Adaptive, seed);
        let (m, _) = run(&base.with_strategy(fixed(3600))).unwrap();
        assert_eq!(m.total_resyncs(), 12);
        assert_eq!(m.gateway.sync_overhead_bytes, 96);
        let (m, _) = run(&base.with_strategy(fixed(1800))).unwrap();
        assert_eq!(m.total_resyncs(), 26);
        assert_eq!(m.gateway.sync_overhead_bytes, 208);
    }
}

#[test]
fn adaptive_is_cheaper_than_fixed_rate() {
    for seed in 0..20 {
        let base = Scenario::experiment(SyncStrategy::Adaptive, seed);
        let (a, _) = run(&base).unwrap();
        assert_eq!(a.gateway.sync_overhead_bytes, 2 * a.total_resyncs());
        for round in [3600, 1800] {
            let (f, _) = run(&base.with_strategy(fixed(round))).unwrap();
            assert!(a.gateway.sync_overhead_bytes < f.gateway.sync_overhead_bytes);
            assert!(a.gateway.duty_cycle_used_fraction <= f.gateway.duty_cycle_used_fraction);
            let wa = duty_cycle_report(&a, 3600 * NS_PER_S);
            let wf = duty_cycle_report(&f, 3600 * NS_PER_S);
            assert!(wa.within_limit && wf.within_limit);
        }
    }
}

#[test]
fn trace_rows_are_time_ordered_and_complete() {
    let (m, trace) = run(&Scenario::experiment(SyncStrategy::Adaptive, 9)).unwrap();
    assert_eq!(trace.len() as u64, m.frames_total);
    assert!(trace
        .windows(2)
        .all(|w| w[0].true_time_ns <= w[1].true_time_ns));
    assert!(trace
        .iter()
        .enumerate()
        .all(|(i, r)| r.frame_index == i as u64));
    let resync_rows = trace.iter().filter(|r| r.remaining_ms.is_some()).count() as u64;
    assert_eq!(resync_rows, m.total_resyncs());
    // about 780 uplinks per device in 6.5 h at 30 s, rounded up to the slot grid
    for d in &m.devices {
        assert!((700..=781).contains(&d.frames), "{}", d.frames);
    }
}

#[test]
fn lost_acknowledgements_are_retried_by_the_next_uplink() {
    let mut sc = Scenario::experiment(SyncStrategy::Adaptive, 2);
    sc.devices =
        vec![DeviceSpec::new(1, ClockModel::Ideal, 30 * NS_PER_S).with_first_tx(1000 * MS)];
    sc.duration_ns = 3600 * NS_PER_S;
    sc.downlink_loss = 0.5;
    let (m, trace) = run(&sc).unwrap();
    let d = m.device(1).unwrap();
    assert!(d.acks_lost > 0);
    // every lost correction is followed by another out-sync uplink
    let first_in_sync = trace.iter().position(|r| r.in_sync).unwrap();
    assert!(trace[first_in_sync..].iter().all(|r| r.in_sync));
    assert_eq!(d.resync_count as usize, first_in_sync);
}

#[test]
fn random_slot_pick_can_collide() {
    let mut sc = Scenario::experiment(SyncStrategy::Adaptive, 5);
    sc.slot_pick = SlotPick::RandomInWindow;
    sc.devices = (1..=8)
        .map(|id| DeviceSpec::new(id, ClockModel::ttgo_like(), 30 * NS_PER_S))
        .collect();
    let (m, _) = run(&sc).unwrap();
    assert!(m.collision_count > 0);
    let (m2, _) = run(&sc).unwrap();
    assert_eq!(m.collision_count, m2.collision_count);
}

#[test]
fn invalid_scenario_is_rejected_before_running() {
    let mut sc = Scenario::experiment(SyncStrategy::Adaptive, 1);
    sc.duration_ns = 0;
    assert!(run(&sc).is_err());
    let mut sc = Scenario::experiment(fixed(0), 1);
    sc.duration_ns = 10 * NS_PER_S;
    assert!(run(&sc).is_err());
    let mut sc = Scenario::experiment(SyncStrategy::Adaptive, 1);
    sc.devices[0].clock = ClockModel::ConstantPpm { offset_ppm: 1e9 }.into();
    assert!(run(&sc).is_err());
}

#[test]
fn downlink_airtime_accounts_for_sync_bytes() {
    let (m, trace) = run(&Scenario::experiment(SyncStrategy::Adaptive, 1)).unwrap();
    let plain = lorasync_core::time_on_air(&experiment_downlink())
        .unwrap()
        .t_packet_ns();
    let with_sync = lorasync_core::time_on_air(&experiment_downlink().with_payload(21))
        .unwrap()
        .t_packet_ns();
    let slot_rx = Scenario::experiment(SyncStrategy::Adaptive, 1).slot.t_rx();
    let resyncs = trace.iter().filter(|r| r.remaining_ms.is_some()).count() as i64;
    assert_eq!(
        m.gateway.downlink_airtime_ns,
        m.frames_total as i64 * slot_rx + resyncs * (with_sync - plain)
    );
    assert_eq!(m.gateway.downlink_count, m.frames_total);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn fixed_rate_count_is_rounds_times_devices(
        round_s in 60i64..4000,
        duration_s in 600i64..20_000,
        n in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut sc = Scenario::experiment(fixed(round_s), seed);
        sc.duration_ns = duration_s * NS_PER_S;
        sc.devices = (0..n)
            .map(|i| DeviceSpec::new(i as u32 + 1, ClockModel::feather_like(seed ^ i as u64), 30 * NS_PER_S))
            .collect();
        let (m, _) = run(&sc).unwrap();
        prop_assert_eq!(m.total_resyncs(), (duration_s / round_s) as u64 * n as u64);
    }

    /// A constant offset crosses a guard once per accumulated guard width.
    #[test]
    fn constant_offset_resync_count_is_bounded(ppm in -100.0f64..100.0, seed in any::<u64>()) {
        let mut sc = Scenario::experiment(SyncStrategy::Adaptive, seed);
        sc.devices = vec![DeviceSpec::new(1, ClockModel::ConstantPpm { offset_ppm: ppm }, 30 * NS_PER_S)];
        let (_, trace) = run(&sc).unwrap();
        let total_drift_ms = ppm.abs() * 1e-6 * sc.duration_ns as f64 / MS as f64;
        // the first frame may start anywhere inside the guards, and each
        // crossing overshoots by at most one period's worth of drift
        let crossings = trace[1..].iter().filter(|r| r.remaining_ms.is_some()).count() as f64;
        let per_frame_ms = ppm.abs() * 1e-6 * 31_680.0;
        prop_assert!(crossings <= (total_drift_ms + 360.0) / (180.0 - per_frame_ms) + 1.0, "{} crossings for {} ms", crossings, total_drift_ms);
        prop_assert!(crossings >= (total_drift_ms - 360.0) / (180.0 + per_frame_ms) - 1.0, "{} crossings for {} ms", crossings, total_drift_ms);
    }

    #[test]
    fn conservation(seed in any::<u64>(), n in 1usize..6) {
        let mut sc = Scenario::experiment(SyncStrategy::Adaptive, seed);
        sc.duration_ns = 3600 * NS_PER_S;
        sc.devices = (0..n)
            .map(|i| DeviceSpec::new(i as u32 + 1, ClockModel::feather_like(seed.wrapping_add(i as u64)), 30 * NS_PER_S))
            .collect();
        let (m, trace) = run(&sc).unwrap();
        prop_assert_eq!(m.frames_total, m.devices.iter().map(|d| d.frames).sum::<u64>());
        prop_assert_eq!(m.gateway.downlink_count, m.frames_total);
        prop_assert_eq!(trace.len() as u64, m.frames_total);
    }
}
