//! Charging level generators: constant current, CC-CV, fixed-duty pulses and
//! the adaptive percussive controller.
//!
//! Levels are signed; positive values charge. The diffusion solver consumes
//! them directly as surface flux.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, to_f64, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("invalid protocol parameter {field} = {value} ({bound})")]
    InvalidParameter {
        field: &'static str,
        value: f64,
        bound: &'static str,
    },
    #[error("{0} profiles need measurements; query their controller instead")]
    RequiresFeedback(&'static str),
    #[error("feedback sample has a non-finite or non-positive {0}")]
    InvalidFeedback(&'static str),
    #[error("query time {0} must be finite and >= 0")]
    InvalidTime(f64),
}

fn check<T: Scalar>(ok: bool, field: &'static str, value: T, bound: &'static str) -> Result<(), ProtocolError> {
    if ok {
        Ok(())
    } else {
        Err(ProtocolError::InvalidParameter {
            field,
            value: to_f64(value),
            bound,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
#[serde(deny_unknown_fields)]
pub struct CccvParams<T> {
    /// Current applied during the constant-current phase.
    pub cc_level: T,
    /// Voltage ceiling that ends the constant-current phase, V.
    pub cv_voltage: T,
    /// Charging ends once the holding current decays to this level.
    pub cv_current_floor: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
#[serde(deny_unknown_fields)]
pub struct FixedPulseParams<T> {
    pub high_level: T,
    pub rest_level: T,
    /// Pulse period, s.
    pub period: T,
    /// Fraction of each period spent at `high_level`.
    pub duty: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
#[serde(deny_unknown_fields)]
pub struct PercussiveParams<T> {
    pub base_amplitude: T,
    pub min_amplitude: T,
    pub max_amplitude: T,
    /// s
    pub pulse_duration: T,
    /// s
    pub rest_duration: T,
    /// Ω
    pub impedance_threshold: T,
    /// K
    pub temperature_threshold: T,
    /// Multiplicative factor applied on a threshold breach; its inverse is
    /// applied after a clean cycle.
    pub amplitude_step: T,
    #[serde(default)]
    pub bidirectional: bool,
    /// Fraction of the amplitude driven negatively during rest when bidirectional.
    #[serde(default)]
    pub reverse_fraction: T,
}

impl<T: Scalar> PercussiveParams<T> {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        check(
            self.min_amplitude >= T::zero(),
            "min_amplitude",
            self.min_amplitude,
            "must be >= 0",
        )?;
        check(
            self.min_amplitude <= self.base_amplitude,
            "base_amplitude",
            self.base_amplitude,
            "must be >= min_amplitude",
        )?;
        check(
            self.base_amplitude <= self.max_amplitude && self.max_amplitude.is_finite(),
            "max_amplitude",
            self.max_amplitude,
            "must be finite and >= base_amplitude",
        )?;
        check(
            self.pulse_duration > T::zero(),
            "pulse_duration",
            self.pulse_duration,
            "must be > 0",
        )?;
        check(
            self.rest_duration > T::zero(),
            "rest_duration",
            self.rest_duration,
            "must be > 0",
        )?;
        check(
            self.impedance_threshold > T::zero(),
            "impedance_threshold",
            self.impedance_threshold,
            "must be > 0",
        )?;
        check(
            self.temperature_threshold > T::zero(),
            "temperature_threshold",
            self.temperature_threshold,
            "must be > 0",
        )?;
        check(
            self.amplitude_step > T::zero() && self.amplitude_step < T::one(),
            "amplitude_step",
            self.amplitude_step,
            "must lie in (0, 1)",
        )?;
        check(
            self.reverse_fraction >= T::zero() && self.reverse_fraction <= T::one(),
            "reverse_fraction",
            self.reverse_fraction,
            "must lie in [0, 1]",
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurrentProfile<T> {
    Constant { level: T },
    Cccv(CccvParams<T>),
    FixedPulse(FixedPulseParams<T>),
    Percussive(PercussiveParams<T>),
}

/// Grouping used to pick the calibrated fade constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolFamily {
    Constant,
    Pulsed,
}

impl<T: Scalar> CurrentProfile<T> {
    pub fn family(&self) -> ProtocolFamily {
        match self {
            CurrentProfile::Constant { .. } | CurrentProfile::Cccv(_) => ProtocolFamily::Constant,
            CurrentProfile::FixedPulse(_) | CurrentProfile::Percussive(_) => ProtocolFamily::Pulsed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CurrentProfile::Constant { .. } => "constant",
            CurrentProfile::Cccv(_) => "cccv",
            CurrentProfile::FixedPulse(_) => "fixed_pulse",
            CurrentProfile::Percussive(_) => "percussive",
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        match self {
            CurrentProfile::Constant { level } => check(level.is_finite(), "level", *level, "must be finite"),
            CurrentProfile::Cccv(p) => {
                check(p.cc_level.is_finite(), "cc_level", p.cc_level, "must be finite")?;
                check(p.cv_voltage > T::zero(), "cv_voltage", p.cv_voltage, "must be > 0")?;
                check(
                    p.cv_current_floor >= T::zero(),
                    "cv_current_floor",
                    p.cv_current_floor,
                    "must be >= 0",
                )
            }
            CurrentProfile::FixedPulse(p) => {
                check(p.high_level.is_finite(), "high_level", p.high_level, "must be finite")?;
                check(p.rest_level.is_finite(), "rest_level", p.rest_level, "must be finite")?;
                check(
                    p.period > T::zero() && p.period.is_finite(),
                    "period",
                    p.period,
                    "must be > 0",
                )?;
                check(
                    p.duty > T::zero() && p.duty < T::one(),
                    "duty",
                    p.duty,
                    "must lie in (0, 1)",
                )
            }
            CurrentProfile::Percussive(p) => p.validate(),
        }
    }
}

/// Level applied at time `t` by a stateless profile.
pub fn flux_at<T: Scalar>(profile: &CurrentProfile<T>, t: T) -> Result<T, ProtocolError> {
    if !(t >= T::zero()) || !t.is_finite() {
        return Err(ProtocolError::InvalidTime(to_f64(t)));
    }
    match profile {
        CurrentProfile::Constant { level } => Ok(*level),
        CurrentProfile::FixedPulse(p) => {
            // `%` on floats is fmod, which matches Python's `%` for t >= 0.
            if t % p.period < p.duty * p.period {
                Ok(p.high_level)
            } else {
                Ok(p.rest_level)
            }
        }
        CurrentProfile::Cccv(_) => Err(ProtocolError::RequiresFeedback("cccv")),
        CurrentProfile::Percussive(_) => Err(ProtocolError::RequiresFeedback("percussive")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct FeedbackSample<T> {
    /// s
    pub time: T,
    /// Ω
    pub impedance: T,
    /// K
    pub temperature: T,
    pub surface_concentration: Option<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulsePhase {
    Pulse,
    Rest,
}

/// State carried between percussive controller updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercussiveState<T> {
    pub phase: PulsePhase,
    /// Start of the current phase, s. `None` until the first sample arrives.
    pub phase_start: Option<T>,
    pub amplitude: T,
    /// A threshold breach was seen during the current cycle.
    pub breach_pending: bool,
    /// Every sample of the current cycle was below 90 % of both thresholds.
    pub cycle_clean: bool,
    /// Number of pulse phases started so far.
    pub pulses_started: u64,
}

impl<T: Scalar> PercussiveState<T> {
    pub fn new(params: &PercussiveParams<T>) -> Self {
        Self {
            phase: PulsePhase::Pulse,
            phase_start: None,
            amplitude: params.base_amplitude,
            breach_pending: false,
            cycle_clean: true,
            pulses_started: 0,
        }
    }
}

/// Advances the percussive controller to `sample.time` and returns the level to apply.
///
/// Phases alternate on a fixed schedule anchored at the first sample. Amplitude
/// changes take effect only at the start of a pulse: down by `amplitude_step`
/// if either threshold was exceeded during the previous cycle, up by its
/// inverse if the whole cycle stayed below 90 % of both thresholds.
pub fn next_percussive_level<T: Scalar>(
    params: &PercussiveParams<T>,
    state: &PercussiveState<T>,
    sample: &FeedbackSample<T>,
) -> Result<(T, PercussiveState<T>), ProtocolError> {
    if !sample.time.is_finite() || sample.time < T::zero() {
        return Err(ProtocolError::InvalidFeedback("time"));
    }
    if !(sample.impedance > T::zero()) || !sample.impedance.is_finite() {
        return Err(ProtocolError::InvalidFeedback("impedance"));
    }
    if !(sample.temperature > T::zero()) || !sample.temperature.is_finite() {
        return Err(ProtocolError::InvalidFeedback("temperature"));
    }
    if let Some(c) = sample.surface_concentration {
        if !c.is_finite() {
            return Err(ProtocolError::InvalidFeedback("surface concentration"));
        }
    }

    let mut next = *state;
    let mut start = match state.phase_start {
        Some(s) => s,
        None => {
            next.pulses_started = 1;
            sample.time
        }
    };
    loop {
        let duration = match next.phase {
            PulsePhase::Pulse => params.pulse_duration,
            PulsePhase::Rest => params.rest_duration,
        };
        if sample.time - start < duration {
            break;
        }
        start += duration;
        match next.phase {
            PulsePhase::Pulse => next.phase = PulsePhase::Rest,
            PulsePhase::Rest => {
                next.phase = PulsePhase::Pulse;
                next.pulses_started += 1;
                if next.breach_pending {
                    next.amplitude = (next.amplitude * params.amplitude_step).max(params.min_amplitude);
                } else if next.cycle_clean {
                    next.amplitude = (next.amplitude / params.amplitude_step).min(params.max_amplitude);
                }
                next.breach_pending = false;
                next.cycle_clean = true;
            }
        }
    }
    next.phase_start = Some(start);

    if sample.impedance > params.impedance_threshold || sample.temperature > params.temperature_threshold {
        next.breach_pending = true;
    }
    let band: T = lit(0.9);
    if !(sample.impedance < band * params.impedance_threshold
        && sample.temperature < band * params.temperature_threshold)
    {
        next.cycle_clean = false;
    }

    let level = match next.phase {
        PulsePhase::Pulse => next.amplitude,
        PulsePhase::Rest if params.bidirectional => -(params.reverse_fraction * next.amplitude),
        PulsePhase::Rest => T::zero(),
    };
    Ok((level, next))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CccvState {
    pub cv_phase: bool,
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CccvLevel<T> {
    pub level: T,
    pub cv_phase: bool,
    /// Raised once the holding current has decayed to the floor.
    pub complete: bool,
}

/// Two-phase CC-CV level.
///
/// While `measured_voltage` is below the ceiling the constant-current level is
/// returned. From then on the level is the ohmic holding current
/// `(cv_voltage − ocv)/resistance`, capped at `cc_level`. Once it reaches
/// `cv_current_floor` the charge is complete and the level is zero.
pub fn cccv_level<T: Scalar>(
    params: &CccvParams<T>,
    state: &CccvState,
    measured_voltage: T,
    ocv: T,
    resistance: T,
) -> (CccvLevel<T>, CccvState) {
    debug_assert!(measured_voltage > T::zero());
    debug_assert!(resistance > T::zero());
    let mut next = *state;
    if next.complete {
        return (
            CccvLevel {
                level: T::zero(),
                cv_phase: true,
                complete: true,
            },
            next,
        );
    }
    if !next.cv_phase && measured_voltage < params.cv_voltage {
        return (
            CccvLevel {
                level: params.cc_level,
                cv_phase: false,
                complete: false,
            },
            next,
        );
    }
    next.cv_phase = true;
    let hold = ((params.cv_voltage - ocv) / resistance).min(params.cc_level);
    if hold <= params.cv_current_floor {
        next.complete = true;
        return (
            CccvLevel {
                level: T::zero(),
                cv_phase: true,
                complete: true,
            },
            next,
        );
    }
    (
        CccvLevel {
            level: hold,
            cv_phase: true,
            complete: false,
        },
        next,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_pulse_profile() -> CurrentProfile<f64> {
        CurrentProfile::FixedPulse(FixedPulseParams {
            high_level: 5.0,
            rest_level: 0.0,
            period: 20.0,
            duty: 0.5,
        })
    }

    fn percussive(bidirectional: bool) -> PercussiveParams<f64> {
        PercussiveParams {
            base_amplitude: 2.0,
            min_amplitude: 0.5,
            max_amplitude: 5.0,
            pulse_duration: 4.0,
            rest_duration: 2.0,
            impedance_threshold: 0.05,
            temperature_threshold: 318.0,
            amplitude_step: 0.8,
            bidirectional,
            reverse_fraction: 0.1,
        }
    }

    fn sample(t: f64, impedance: f64, temperature: f64) -> FeedbackSample<f64> {
        FeedbackSample {
            time: t,
            impedance,
            temperature,
            surface_concentration: None,
        }
    }

    #[test]
    fn fixed_pulse_examples() {
        let p = reference_pulse_profile();
        assert_eq!(flux_at(&p, 3.0).unwrap(), 5.0);
        assert_eq!(flux_at(&p, 15.0).unwrap(), 0.0);
        assert_eq!(flux_at(&p, 10.0).unwrap(), 0.0);
        assert_eq!(flux_at(&p, 20.0).unwrap(), 5.0);
        let c = CurrentProfile::Constant { level: 2.0 };
        for t in [0.0, 1.5, 1e6] {
            assert_eq!(flux_at(&c, t).unwrap(), 2.0);
        }
    }

    #[test]
    fn stateful_profiles_reject_stateless_query() {
        let p = CurrentProfile::Percussive(percussive(false));
        assert!(matches!(flux_at(&p, 1.0), Err(ProtocolError::RequiresFeedback(_))));
        let c = CurrentProfile::Cccv(CccvParams {
            cc_level: 1.0,
            cv_voltage: 4.2,
            cv_current_floor: 0.05,
        });
        assert!(flux_at(&c, 1.0).is_err());
        assert!(flux_at(&reference_pulse_profile(), -1.0).is_err());
    }

    #[test]
    fn profile_validation() {
        let bad_duty = CurrentProfile::FixedPulse(FixedPulseParams {
            high_level: 5.0,
            rest_level: 0.0,
            period: 20.0,
            duty: 1.0,
        });
        assert!(bad_duty.validate().is_err());
        let mut p = percussive(true);
        p.amplitude_step = 1.2;
        assert!(CurrentProfile::Percussive(p).validate().is_err());
        let mut p = percussive(true);
        p.base_amplitude = 6.0;
        assert!(p.validate().is_err());
        assert!(reference_pulse_profile().validate().is_ok());
    }

    /// Drives the controller with samples every `dt` seconds and returns the levels.
    fn drive(
        params: &PercussiveParams<f64>,
        dt: f64,
        steps: usize,
        feedback: impl Fn(f64) -> (f64, f64),
    ) -> (Vec<f64>, Vec<PercussiveState<f64>>) {
        let mut state = PercussiveState::new(params);
        let mut levels = Vec::new();
        let mut states = Vec::new();
        for k in 0..steps {
            let t = k as f64 * dt;
            let (z, temp) = feedback(t);
            let (level, next) = next_percussive_level(params, &state, &sample(t, z, temp)).unwrap();
            state = next;
            levels.push(level);
            states.push(state);
        }
        (levels, states)
    }

    #[test]
    fn clean_feedback_saturates_at_max() {
        let p = percussive(false);
        let (levels, states) = drive(&p, 0.5, 2000, |_| (0.01, 280.0));
        assert_eq!(states.last().unwrap().amplitude, 5.0);
        assert!(levels.iter().all(|&l| l <= 5.0));
        // Once saturated, it stays there.
        let first = states.iter().position(|s| s.amplitude == 5.0).unwrap();
        assert!(states[first..].iter().all(|s| s.amplitude == 5.0));
    }

    #[test]
    fn breaching_feedback_reaches_min_in_closed_form_cycles() {
        let p = percussive(false);
        let (_, states) = drive(&p, 0.5, 2000, |_| (0.08, 300.0));
        let expected = ((p.min_amplitude / p.base_amplitude).ln() / p.amplitude_step.ln()).ceil() as u64;
        let hit = states.iter().find(|s| s.amplitude == p.min_amplitude).unwrap();
        // pulses_started counts the first pulse, so `expected` reductions
        // occur by the start of pulse expected + 1.
        assert_eq!(hit.pulses_started, expected + 1);
        assert!(states.iter().all(|s| s.amplitude >= p.min_amplitude));
    }

    #[test]
    fn bidirectional_rest_level() {
        let mut p = percussive(true);
        p.base_amplitude = 5.0;
        let state = PercussiveState::new(&p);
        let (_, s1) = next_percussive_level(&p, &state, &sample(0.0, 0.06, 300.0)).unwrap();
        // Breach keeps the amplitude from ramping; at t = 4.5 we are resting.
        let (level, s2) = next_percussive_level(&p, &s1, &sample(4.5, 0.06, 300.0)).unwrap();
        assert_eq!(s2.phase, PulsePhase::Rest);
        assert_eq!(s2.amplitude, 5.0);
        assert!((level - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn amplitude_changes_only_at_pulse_start() {
        let p = percussive(false);
        let (levels, states) = drive(&p, 0.5, 400, |t| if t > 30.0 { (0.2, 350.0) } else { (0.01, 300.0) });
        for k in 1..states.len() {
            if states[k].amplitude != states[k - 1].amplitude {
                assert_eq!(states[k].phase, PulsePhase::Pulse);
                assert_eq!(states[k].pulses_started, states[k - 1].pulses_started + 1);
            }
        }
        assert!(levels.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn rejects_non_finite_feedback() {
        let p = percussive(false);
        let s = PercussiveState::new(&p);
        assert!(next_percussive_level(&p, &s, &sample(0.0, f64::NAN, 300.0)).is_err());
        assert!(next_percussive_level(&p, &s, &sample(0.0, 0.01, f64::INFINITY)).is_err());
        assert!(next_percussive_level(&p, &s, &sample(0.0, -0.01, 300.0)).is_err());
    }

    #[test]
    fn cccv_phases() {
        let params = CccvParams {
            cc_level: 2.0_f64,
            cv_voltage: 4.2,
            cv_current_floor: 0.1,
        };
        let s0 = CccvState::default();
        let (l, s) = cccv_level(&params, &s0, 3.9, 3.8, 0.05);
        assert_eq!(l.level, 2.0);
        assert!(!s.cv_phase);
        // At the ceiling: ohmic holding current (4.2 − 4.15)/0.05 = 1.0.
        let (l, s) = cccv_level(&params, &s, 4.2, 4.15, 0.05);
        assert!((l.level - (4.2 - 4.15) / 0.05).abs() < 1e-12);
        assert!(l.cv_phase && !l.complete);
        // Latched: a small dip below the ceiling does not restart the CC phase.
        let (l, s) = cccv_level(&params, &s, 4.19, 4.17, 0.05);
        assert!(l.level < 2.0);
        let (l, s) = cccv_level(&params, &s, 4.2, 4.197, 0.05);
        assert!(l.complete);
        assert_eq!(l.level, 0.0);
        let (l, _) = cccv_level(&params, &s, 3.0, 3.0, 0.05);
        assert!(l.complete);
    }

    proptest! {
        #[test]
        fn fixed_pulse_is_periodic(t in 0.0f64..1e4, k in 1u32..50, period in 0.5f64..100.0, duty in 0.01f64..0.99) {
            // Periodicity is exact when t + k·period is computed without
            // rounding, so work on the integer grid of period multiples.
            let period = (period * 8.0).round() / 8.0;
            let t = (t * 8.0).round() / 8.0;
            let p = CurrentProfile::FixedPulse(FixedPulseParams { high_level: 5.0, rest_level: -1.0, period, duty });
            let shifted = t + k as f64 * period;
            prop_assert_eq!(flux_at(&p, t).unwrap(), flux_at(&p, shifted).unwrap());
        }

        #[test]
        fn percussive_invariants(
            seed in any::<u64>(),
            bidirectional in any::<bool>(),
            reverse in 0.0f64..=1.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut p = percussive(bidirectional);
            p.reverse_fraction = reverse;
            let dt = 0.25;
            let mut state = PercussiveState::new(&p);
            let mut phase_len = 0.0;
            let mut last_phase = PulsePhase::Pulse;
            let mut lens: Vec<(PulsePhase, f64)> = Vec::new();
            for k in 0..2000 {
                let t = k as f64 * dt;
                let z = rng.random_range(0.01..0.08);
                let temp = rng.random_range(290.0..330.0);
                let (level, next) = next_percussive_level(&p, &state, &sample(t, z, temp)).unwrap();
                prop_assert!(next.amplitude >= p.min_amplitude && next.amplitude <= p.max_amplitude);
                if next.phase == PulsePhase::Rest {
                    prop_assert!(level <= 0.0);
                    prop_assert!(-level <= p.reverse_fraction * p.max_amplitude + 1e-12);
                }
                if k > 0 && next.phase != last_phase {
                    lens.push((last_phase, phase_len));
                    phase_len = 0.0;
                }
                phase_len += dt;
                last_phase = next.phase;
                state = next;
            }
            for (phase, len) in lens {
                let want = match phase { PulsePhase::Pulse => p.pulse_duration, PulsePhase::Rest => p.rest_duration };
                prop_assert!((len - want).abs() <= dt + 1e-9);
            }
        }
    }

    #[test]
    fn fixed_pulse_time_average_over_whole_periods() {
        let p = FixedPulseParams {
            high_level: 5.0,
            rest_level: -1.0,
            period: 20.0,
            duty: 0.25,
        };
        let profile = CurrentProfile::FixedPulse(p);
        // Exact dyadic sampling: 1/16 s steps, 320 per period.
        let dt = 1.0 / 16.0;
        let periods = 3;
        let n = periods * 320;
        let sum: f64 = (0..n).map(|k| flux_at(&profile, k as f64 * dt).unwrap()).sum();
        let avg = sum / n as f64;
        assert_eq!(avg, p.duty * p.high_level + (1.0 - p.duty) * p.rest_level);
    }
}
