//! Drifting end-device oscillators.
//!
//! A device clock runs at `f(t) = f0 + Δf(t)`. Every model here keeps the
//! fractional offset `Δf/f0` (in ppm) constant over segments of true time, so
//! local time is an exact piecewise-linear function of true time:
//!
//! ```text
//! local(t) = local(s) + (t - s) + round((t - s) * ppm(s) * 1e-6)
//! ```
//!
//! where `s` is the start of the segment containing `t`. Each segment is
//! anchored at its own start, so the result does not depend on how many
//! intermediate queries were made.
//!
//! Drift follows the network-server-minus-device convention:
//! `drift(t) = t - local(t)`. A fast clock therefore has negative drift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Deserialize;
use thiserror::Error;

use crate::Nanos;

const NS_PER_S: f64 = 1e9;
const PPM_LIMIT: f64 = 999_999.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClockError {
    #[error("clock queried at {requested} ns after already reaching {last} ns")]
    NonMonotone { requested: Nanos, last: Nanos },
    #[error("negative true time {0} ns")]
    NegativeTime(Nanos),
    #[error("invalid clock model: {0}")]
    Model(String),
}

/// Oscillator behaviour over true time.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClockModel {
    Ideal,
    ConstantPpm {
        offset_ppm: f64,
    },
    /// Frequency offset held for `step_interval_s`, then nudged by a normal
    /// step with standard deviation `step_std_ppm`.
    RandomWalk {
        step_interval_s: f64,
        step_std_ppm: f64,
        initial_ppm: f64,
        seed: u64,
    },
    /// `(from_true_time_s, offset_ppm)` pairs; ideal before the first one.
    Piecewise {
        segments: Vec<(f64, f64)>,
    },
    /// Offset relaxing exponentially from `initial_ppm` to `settled_ppm` with
    /// time constant `time_constant_s`, plus stationary Gauss-Markov noise of
    /// standard deviation `noise_std_ppm` and correlation time
    /// `noise_correlation_s`. Re-evaluated every `step_interval_s`.
    WarmUp {
        initial_ppm: f64,
        settled_ppm: f64,
        time_constant_s: f64,
        noise_std_ppm: f64,
        noise_correlation_s: f64,
        step_interval_s: f64,
        seed: u64,
    },
}

impl ClockModel {
    /// Unstable board: a large offset right after power-up that settles
    /// over the first hours, with a few ppm of slow wander on top.
    pub fn feather_like(seed: u64) -> Self {
        ClockModel::WarmUp {
            initial_ppm: 110.0,
            settled_ppm: 12.0,
            time_constant_s: 3600.0,
            noise_std_ppm: 3.0,
            noise_correlation_s: 600.0,
            step_interval_s: 60.0,
            seed,
        }
    }

    /// Stable board: small fixed offset.
    pub fn ttgo_like() -> Self {
        ClockModel::ConstantPpm { offset_ppm: 2.0 }
    }

    pub fn validate(&self) -> Result<(), ClockError> {
        let bad = |msg: String| Err(ClockError::Model(msg));
        match self {
            ClockModel::Ideal => Ok(()),
            ClockModel::ConstantPpm { offset_ppm } => {
                if !offset_ppm.is_finite() || offset_ppm.abs() > PPM_LIMIT {
                    return bad(format!("offset_ppm {offset_ppm} out of range"));
                }
                Ok(())
            }
            ClockModel::RandomWalk {
                step_interval_s,
                step_std_ppm,
                initial_ppm,
                ..
            } => {
                if !(step_interval_s.is_finite() && *step_interval_s > 0.0) {
                    return bad(format!(
                        "step_interval_s must be > 0, got {step_interval_s}"
                    ));
                }
                if (step_interval_s * NS_PER_S).round() < 1.0 {
                    return bad("step_interval_s shorter than 1 ns".into());
                }
                if !(step_std_ppm.is_finite() && *step_std_ppm >= 0.0) {
                    return bad(format!("step_std_ppm must be >= 0, got {step_std_ppm}"));
                }
                if !initial_ppm.is_finite() || initial_ppm.abs() > PPM_LIMIT {
                    return bad(format!("initial_ppm {initial_ppm} out of range"));
                }
                Ok(())
            }
            ClockModel::WarmUp {
                initial_ppm,
                settled_ppm,
                time_constant_s,
                noise_std_ppm,
                noise_correlation_s,
                step_interval_s,
                ..
            } => {
                for (name, v) in [("initial_ppm", initial_ppm), ("settled_ppm", settled_ppm)] {
                    if !v.is_finite() || v.abs() > PPM_LIMIT / 2.0 {
                        return bad(format!("{name} {v} out of range"));
                    }
                }
                for (name, v) in [
                    ("time_constant_s", time_constant_s),
                    ("noise_correlation_s", noise_correlation_s),
                    ("step_interval_s", step_interval_s),
                ] {
                    if !(v.is_finite() && *v > 0.0) {
                        return bad(format!("{name} must be > 0, got {v}"));
                    }
                }
                if (step_interval_s * NS_PER_S).round() < 1.0 {
                    return bad("step_interval_s shorter than 1 ns".into());
                }
                if !(noise_std_ppm.is_finite() && (0.0..=PPM_LIMIT / 10.0).contains(noise_std_ppm))
                {
                    return bad(format!("noise_std_ppm {noise_std_ppm} out of range"));
                }
                Ok(())
            }
            ClockModel::Piecewise { segments } => {
                let mut prev: Option<f64> = None;
                for &(from, ppm) in segments {
                    if !from.is_finite() || from < 0.0 {
                        return bad(format!("segment start {from} must be a finite time >= 0"));
                    }
                    if !ppm.is_finite() || ppm.abs() > PPM_LIMIT {
                        return bad(format!("segment offset {ppm} ppm out of range"));
                    }
                    if prev.is_some_and(|p| from <= p) {
                        return bad("segment start times must be strictly increasing".into());
                    }
                    prev = Some(from);
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start_true: Nanos,
    start_local: Nanos,
    ppm: f64,
}

impl Segment {
    fn local_at(&self, t: Nanos) -> Nanos {
        let d = t - self.start_true;
        self.start_local + d + offset_ns(d, self.ppm)
    }

    /// Smallest true time in this segment's line whose local time reaches `local`.
    fn true_at(&self, local: Nanos) -> Nanos {
        let target = local - self.start_local;
        let mut d = (target as f64 / (1.0 + self.ppm * 1e-6)).round() as Nanos;
        let at = |d: Nanos| d + offset_ns(d, self.ppm);
        while at(d) < target {
            d += 1;
        }
        while at(d - 1) >= target {
            d -= 1;
        }
        self.start_true + d
    }
}

fn offset_ns(d: Nanos, ppm: f64) -> Nanos {
    (d as f64 * ppm * 1e-6).round() as Nanos
}

fn secs_to_ns(s: f64) -> Nanos {
    (s * NS_PER_S).round() as Nanos
}

struct Walk {
    rng: ChaCha8Rng,
    interval: Nanos,
    kind: WalkKind,
}

enum WalkKind {
    Random {
        step: Normal<f64>,
    },
    WarmUp {
        initial: f64,
        settled: f64,
        tau_s: f64,
        sigma: f64,
        rho: f64,
        noise: f64,
    },
}

impl Walk {
    fn next_ppm(&mut self, prev_ppm: f64, start_true: Nanos) -> f64 {
        let ppm = match &mut self.kind {
            WalkKind::Random { step } => prev_ppm + step.sample(&mut self.rng),
            WalkKind::WarmUp {
                initial,
                settled,
                tau_s,
                sigma,
                rho,
                noise,
            } => {
                let z: f64 = self.rng.sample(StandardNormal);
                *noise = *rho * *noise + (1.0 - *rho * *rho).sqrt() * *sigma * z;
                let mid_s = (start_true as f64 + self.interval as f64 / 2.0) / NS_PER_S;
                *settled + (*initial - *settled) * (-mid_s / *tau_s).exp() + *noise
            }
        };
        ppm.clamp(-PPM_LIMIT, PPM_LIMIT)
    }
}

/// A device clock. Queries through [`SimClock::local_time`] must be monotone
/// in true time, mirroring a real oscillator that is only ever read forward.
pub struct SimClock {
    model: ClockModel,
    segments: Vec<Segment>,
    walk: Option<Walk>,
    last_true: Nanos,
}

impl std::fmt::Debug for SimClock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimClock")
            .field("model", &self.model)
            .field("segments", &self.segments.len())
            .field("last_true", &self.last_true)
            .finish()
    }
}

impl SimClock {
    pub fn new(model: ClockModel) -> Result<Self, ClockError> {
        model.validate()?;
        let mut walk = None;
        let segments = match &model {
            ClockModel::Ideal => vec![seg0(0.0)],
            ClockModel::ConstantPpm { offset_ppm } => vec![seg0(*offset_ppm)],
            ClockModel::RandomWalk {
                step_interval_s,
                step_std_ppm,
                initial_ppm,
                seed,
            } => {
                walk = Some(Walk {
                    rng: ChaCha8Rng::seed_from_u64(*seed),
                    interval: secs_to_ns(*step_interval_s),
                    kind: WalkKind::Random {
                        step: Normal::new(0.0, *step_std_ppm)
                            .map_err(|e| ClockError::Model(e.to_string()))?,
                    },
                });
                vec![seg0(*initial_ppm)]
            }
            ClockModel::WarmUp {
                initial_ppm,
                settled_ppm,
                time_constant_s,
                noise_std_ppm,
                noise_correlation_s,
                step_interval_s,
                seed,
            } => {
                let mut w = Walk {
                    rng: ChaCha8Rng::seed_from_u64(*seed),
                    interval: secs_to_ns(*step_interval_s),
                    kind: WalkKind::WarmUp {
                        initial: *initial_ppm,
                        settled: *settled_ppm,
                        tau_s: *time_constant_s,
                        sigma: *noise_std_ppm,
                        rho: (-step_interval_s / noise_correlation_s).exp(),
                        noise: 0.0,
                    },
                };
                if let WalkKind::WarmUp { sigma, noise, .. } = &mut w.kind {
                    let z: f64 = w.rng.sample(StandardNormal);
                    *noise = *sigma * z;
                }
                let ppm0 = w.next_ppm(0.0, 0);
                walk = Some(w);
                vec![seg0(ppm0)]
            }
            ClockModel::Piecewise { segments } => {
                let mut out = Vec::with_capacity(segments.len() + 1);
                if segments
                    .first()
                    .is_none_or(|&(from, _)| secs_to_ns(from) > 0)
                {
                    out.push(seg0(0.0));
                }
                for &(from, ppm) in segments {
                    let start_true = secs_to_ns(from);
                    let start_local = match out.last() {
                        Some(prev) => prev.local_at(start_true),
                        None => start_true,
                    };
                    out.push(Segment {
                        start_true,
                        start_local,
                        ppm,
                    });
                }
                out
            }
        };
        Ok(Self {
            model,
            segments,
            walk,
            last_true: 0,
        })
    }

    pub fn model(&self) -> &ClockModel {
        &self.model
    }

    pub fn last_true_time(&self) -> Nanos {
        self.last_true
    }

    /// Device-local time at true time `true_ns`.
    pub fn local_time(&mut self, true_ns: Nanos) -> Result<Nanos, ClockError> {
        if true_ns < 0 {
            return Err(ClockError::NegativeTime(true_ns));
        }
        if true_ns < self.last_true {
            return Err(ClockError::NonMonotone {
                requested: true_ns,
                last: self.last_true,
            });
        }
        self.last_true = true_ns;
        Ok(self.eval(true_ns))
    }

    /// `true - local`; negative when the device runs ahead.
    pub fn drift(&mut self, true_ns: Nanos) -> Result<Nanos, ClockError> {
        Ok(true_ns - self.local_time(true_ns)?)
    }

    /// Earliest true time at which the device clock reads at least `local_ns`.
    ///
    /// Does not advance the monotone cursor: the simulator uses this to
    /// schedule future wake-ups while still reading the clock at earlier
    /// instants in between.
    pub fn true_time_for_local(&mut self, local_ns: Nanos) -> Nanos {
        self.extend_until(|s| s.start_local >= local_ns);
        let idx = self
            .segments
            .partition_point(|s| s.start_local < local_ns)
            .saturating_sub(1);
        let seg = self.segments[idx];
        if local_ns <= seg.start_local {
            return seg.start_true;
        }
        seg.true_at(local_ns)
    }

    fn eval(&mut self, t: Nanos) -> Nanos {
        self.extend_until(|s| s.start_true > t);
        let idx = self.segments.partition_point(|s| s.start_true <= t) - 1;
        self.segments[idx].local_at(t)
    }

    /// Generates random-walk segments until `done` holds for the newest one.
    fn extend_until(&mut self, done: impl Fn(&Segment) -> bool) {
        let Some(walk) = self.walk.as_mut() else {
            return;
        };
        loop {
            let last = *self.segments.last().expect("at least one segment");
            if done(&last) {
                return;
            }
            let start_true = last.start_true + walk.interval;
            let ppm = walk.next_ppm(last.ppm, start_true);
            self.segments.push(Segment {
                start_true,
                start_local: last.local_at(start_true),
                ppm,
            });
        }
    }
}

fn seg0(ppm: f64) -> Segment {
    Segment {
        start_true: 0,
        start_local: 0,
        ppm,
    }
}

/// In-sync test on a clock drift: `-tb2 < drift < tb1`, strictly.
pub fn is_in_sync(drift_ns: Nanos, tb1_ns: Nanos, tb2_ns: Nanos) -> bool {
    -tb2_ns < drift_ns && drift_ns < tb1_ns
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: Nanos = 1_000_000_000;
    const MS: Nanos = 1_000_000;

    #[test]
    fn ideal_is_identity() {
        let mut c = SimClock::new(ClockModel::Ideal).unwrap();
        assert_eq!(c.local_time(S).unwrap(), S);
        assert_eq!(c.drift(3 * S).unwrap(), 0);
        assert_eq!(c.true_time_for_local(17 * S + 5), 17 * S + 5);
    }

    #[test]
    fn constant_offsets() {
        let mut fast = SimClock::new(ClockModel::ConstantPpm { offset_ppm: 33.0 }).unwrap();
        assert_eq!(fast.local_time(5400 * S).unwrap(), 5400 * S + 178_200_000);
        let mut fast = SimClock::new(ClockModel::ConstantPpm { offset_ppm: 33.0 }).unwrap();
        assert_eq!(fast.drift(5400 * S).unwrap(), -178_200_000);

        let mut slow = SimClock::new(ClockModel::ConstantPpm { offset_ppm: -10.0 }).unwrap();
        assert_eq!(slow.drift(1000 * S).unwrap(), 10 * MS);
    }

    #[test]
    fn piecewise_cancels() {
        let model = ClockModel::Piecewise {
            segments: vec![(0.0, 20.0), (3600.0, -20.0)],
        };
        let mut c = SimClock::new(model).unwrap();
        assert_eq!(c.drift(3600 * S).unwrap(), -72 * MS);
        assert_eq!(c.drift(7200 * S).unwrap(), 0);
    }

    #[test]
    fn piecewise_late_start_is_ideal_before() {
        let model = ClockModel::Piecewise {
            segments: vec![(100.0, 50.0)],
        };
        let mut c = SimClock::new(model).unwrap();
        assert_eq!(c.drift(100 * S).unwrap(), 0);
        assert_eq!(c.drift(200 * S).unwrap(), -5 * MS);
    }

    #[test]
    fn rejects_backwards_query() {
        let mut c = SimClock::new(ClockModel::Ideal).unwrap();
        c.local_time(10).unwrap();
        assert_eq!(
            c.local_time(9),
            Err(ClockError::NonMonotone {
                requested: 9,
                last: 10
            })
        );
        assert!(matches!(
            c.local_time(-1),
            Err(ClockError::NegativeTime(-1))
        ));
    }

    #[test]
    fn rejects_bad_models() {
        let bad = [
            ClockModel::RandomWalk {
                step_interval_s: 0.0,
                step_std_ppm: 1.0,
                initial_ppm: 0.0,
                seed: 0,
            },
            ClockModel::RandomWalk {
                step_interval_s: 1.0,
                step_std_ppm: -1.0,
                initial_ppm: 0.0,
                seed: 0,
            },
            ClockModel::Piecewise {
                segments: vec![(10.0, 1.0), (10.0, 2.0)],
            },
            ClockModel::ConstantPpm {
                offset_ppm: f64::NAN,
            },
        ];
        for m in bad {
            assert!(SimClock::new(m).is_err());
        }
    }

    #[test]
    fn inverse_lands_on_first_reaching_instant() {
        let mut c = SimClock::new(ClockModel::ConstantPpm { offset_ppm: -37.5 }).unwrap();
        for local in [1, 999, 30 * S + 7, 5000 * S + 123_456] {
            let t = c.true_time_for_local(local);
            let mut probe = SimClock::new(c.model().clone()).unwrap();
            assert!(probe.local_time(t).unwrap() >= local);
            let mut probe = SimClock::new(c.model().clone()).unwrap();
            assert!(probe.local_time(t - 1).unwrap() < local);
        }
    }

    #[test]
    fn random_walk_inverse_crosses_segments() {
        let mut c = SimClock::new(ClockModel::feather_like(3)).unwrap();
        let local = 3 * 3600 * S + 17;
        let t = c.true_time_for_local(local);
        assert!(c.local_time(t).unwrap() >= local);
        let mut again = SimClock::new(ClockModel::feather_like(3)).unwrap();
        assert!(again.local_time(t - 1).unwrap() < local);
    }

    #[test]
    fn in_sync_bounds_are_strict() {
        assert!(is_in_sync(0, 180 * MS, 180 * MS));
        assert!(!is_in_sync(180 * MS, 180 * MS, 180 * MS));
        assert!(!is_in_sync(-180 * MS, 180 * MS, 180 * MS));
        assert!(is_in_sync(-179 * MS, 180 * MS, 180 * MS));
        assert!(!is_in_sync(0, 0, 0));
    }
}
