use lorasync_core::clock::is_in_sync;
use lorasync_core::{ClockModel, Nanos, SimClock, NS_PER_S};
use proptest::prelude::*;

#[test]
fn constant_offset_accumulates_linearly() {
    let mut c = SimClock::new(ClockModel::ConstantPpm { offset_ppm: 20.0 }).unwrap();
    // 20 ppm over one hour = 72 ms ahead
    assert_eq!(c.drift(3600 * NS_PER_S).unwrap(), -72_000_000);
    let mut slow = SimClock::new(ClockModel::ConstantPpm { offset_ppm: -2.0 }).unwrap();
    assert_eq!(slow.drift(23_400 * NS_PER_S).unwrap(), 46_800_000);
}

#[test]
fn piecewise_anchors_each_segment() {
    let model = ClockModel::Piecewise {
        segments: vec![(0.0, 10.0), (100.0, -10.0)],
    };
    let mut c = SimClock::new(model).unwrap();
    assert_eq!(c.drift(100 * NS_PER_S).unwrap(), -1_000_000);
    assert_eq!(c.drift(200 * NS_PER_S).unwrap(), 0);
}

#[test]
fn reading_backwards_is_an_error() {
    let mut c = SimClock::new(ClockModel::Ideal).unwrap();
    c.local_time(10).unwrap();
    assert!(c.local_time(9).is_err());
    assert!(c.local_time(-1).is_err());
}

#[test]
fn invalid_models_rejected() {
    assert!(SimClock::new(ClockModel::ConstantPpm {
        offset_ppm: f64::NAN
    })
    .is_err());
    assert!(SimClock::new(ClockModel::Piecewise {
        segments: vec![(5.0, 1.0), (5.0, 2.0)]
    })
    .is_err());
    assert!(SimClock::new(ClockModel::RandomWalk {
        step_interval_s: 0.0,
        step_std_ppm: 1.0,
        initial_ppm: 0.0,
        seed: 1
    })
    .is_err());
}

#[test]
fn in_sync_bounds_are_strict() {
    let g = 180_000_000;
    assert!(is_in_sync(0, g, g));
    assert!(is_in_sync(g - 1, g, g));
    assert!(!is_in_sync(g, g, g));
    assert!(!is_in_sync(-g, g, g));
    assert!(!is_in_sync(181_000_000, g, g));
}

#[test]
fn presets_are_plausible() {
    let mut ttgo = SimClock::new(ClockModel::ttgo_like()).unwrap();
    assert!(ttgo.drift(23_400 * NS_PER_S).unwrap().abs() < 180_000_000);
    // the unstable board crosses a 180 ms guard more than once in 6.5 h
    let mut feather = SimClock::new(ClockModel::feather_like(3)).unwrap();
    let d = feather.drift(23_400 * NS_PER_S).unwrap().abs();
    assert!(d > 360_000_000, "{d}");
}

fn any_model() -> impl Strategy<Value = ClockModel> {
    prop_oneof![
        Just(ClockModel::Ideal),
        (-200.0f64..200.0).prop_map(|offset_ppm| ClockModel::ConstantPpm { offset_ppm }),
        (1.0f64..600.0, 0.0f64..10.0, -100.0f64..100.0, any::<u64>()).prop_map(
            |(step_interval_s, step_std_ppm, initial_ppm, seed)| ClockModel::RandomWalk {
                step_interval_s,
                step_std_ppm,
                initial_ppm,
                seed,
            }
        ),
        any::<u64>().prop_map(ClockModel::feather_like),
        prop::collection::vec(-500.0f64..500.0, 1..6).prop_map(|ppms| ClockModel::Piecewise {
            segments: ppms
                .into_iter()
                .enumerate()
                .map(|(i, p)| (i as f64 * 37.5, p))
                .collect(),
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn strictly_monotone(model in any_model(), mut times in prop::collection::vec(0i64..20_000 * NS_PER_S, 2..40)) {
        times.sort_unstable();
        times.dedup();
        let mut c = SimClock::new(model).unwrap();
        let mut prev: Option<(Nanos, Nanos)> = None;
        for t in times {
            let l = c.local_time(t).unwrap();
            if let Some((pt, pl)) = prev {
                // offsets stay far below 1e6 ppm, so 2 ns of true time always advance local time
                if t - pt >= 2 {
                    prop_assert!(l > pl);
                } else {
                    prop_assert!(l >= pl);
                }
            }
            prev = Some((t, l));
        }
    }

    #[test]
    fn query_pattern_does_not_matter(model in any_model(), t in 0i64..20_000 * NS_PER_S, k in 1usize..20) {
        let mut direct = SimClock::new(model.clone()).unwrap();
        let mut stepped = SimClock::new(model).unwrap();
        for i in 1..=k {
            stepped.local_time(t / k as i64 * i as i64 / 2).unwrap();
        }
        prop_assert_eq!(direct.local_time(t).unwrap(), stepped.local_time(t).unwrap());
    }

    #[test]
    fn inverse_lookup_is_tight(model in any_model(), t in 1i64..20_000 * NS_PER_S) {
        let mut c = SimClock::new(model.clone()).unwrap();
        let local = SimClock::new(model.clone()).unwrap().local_time(t).unwrap();
        let back = c.true_time_for_local(local);
        let mut probe = SimClock::new(model).unwrap();
        prop_assert!(probe.local_time(back - 1).unwrap() < local);
        prop_assert!(probe.local_time(back).unwrap() >= local);
        prop_assert!(back <= t);
    }

    #[test]
    fn seeded_walks_reproduce(seed in any::<u64>(), t in 0i64..30_000 * NS_PER_S) {
        let mut a = SimClock::new(ClockModel::feather_like(seed)).unwrap();
        let mut b = SimClock::new(ClockModel::feather_like(seed)).unwrap();
        prop_assert_eq!(a.drift(t).unwrap(), b.drift(t).unwrap());
    }
}
