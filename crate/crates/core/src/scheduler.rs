//! Cluster-rest scheduler.
//!
//! Clusters whose internal resistance or temperature crosses its threshold
//! are taken out of service ("rested") while the remaining clusters carry the
//! load, subject to a minimum number of active clusters, a cap on the rested
//! fraction and a pack-voltage floor. Rested clusters rejoin once they have
//! rested long enough and their stress has fallen below 90 % of threshold.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{count, lit, to_f64, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("invalid schedule constraint {field} = {value} ({bound})")]
    InvalidConstraint {
        field: &'static str,
        value: f64,
        bound: &'static str,
    },
    #[error("pack has {clusters} clusters but at least {min_active} must stay active")]
    TooFewClusters { clusters: usize, min_active: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterId(pub u32);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Active,
    Rest,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Active => "ACTIVE",
            Mode::Rest => "REST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ClusterState<T> {
    pub id: ClusterId,
    pub mode: Mode,
    /// 0..=1
    pub soc: T,
    /// K
    pub temperature: T,
    /// Ω
    pub internal_resistance: T,
    pub cells_in_cluster: u32,
    /// Time since the last mode change, s.
    pub time_in_mode: T,
    /// Total time spent resting, s.
    pub cumulative_rest_time: T,
}

impl<T: Scalar> ClusterState<T> {
    pub fn new(id: u32, cells_in_cluster: u32, soc: T, temperature: T, internal_resistance: T) -> Self {
        Self {
            id: ClusterId(id),
            mode: Mode::Active,
            soc,
            temperature,
            internal_resistance,
            cells_in_cluster,
            time_in_mode: T::zero(),
            cumulative_rest_time: T::zero(),
        }
    }

    pub fn is_active(&self) -> bool {
        self.mode == Mode::Active
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
#[serde(deny_unknown_fields)]
pub struct ScheduleConstraints<T> {
    /// Ω
    pub resistance_threshold: T,
    /// K
    pub temperature_threshold: T,
    pub min_active_clusters: usize,
    /// V
    pub min_pack_voltage: T,
    pub max_rest_fraction: T,
    /// s
    pub min_rest_duration: T,
    /// s
    pub min_active_duration: T,
}

impl<T: Scalar> ScheduleConstraints<T> {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        let invalid = |field, value: f64, bound| SchedulerError::InvalidConstraint { field, value, bound };
        if !(self.resistance_threshold > T::zero()) {
            return Err(invalid(
                "resistance_threshold",
                to_f64(self.resistance_threshold),
                "must be > 0",
            ));
        }
        if !(self.temperature_threshold > T::zero()) {
            return Err(invalid(
                "temperature_threshold",
                to_f64(self.temperature_threshold),
                "must be > 0",
            ));
        }
        if self.min_active_clusters < 1 {
            return Err(invalid(
                "min_active_clusters",
                self.min_active_clusters as f64,
                "must be >= 1",
            ));
        }
        if !self.min_pack_voltage.is_finite() {
            return Err(invalid(
                "min_pack_voltage",
                to_f64(self.min_pack_voltage),
                "must be finite",
            ));
        }
        if !(self.max_rest_fraction >= T::zero() && self.max_rest_fraction < T::one()) {
            return Err(invalid(
                "max_rest_fraction",
                to_f64(self.max_rest_fraction),
                "must lie in [0, 1)",
            ));
        }
        if !(self.min_rest_duration >= T::zero()) {
            return Err(invalid(
                "min_rest_duration",
                to_f64(self.min_rest_duration),
                "must be >= 0",
            ));
        }
        if !(self.min_active_duration >= T::zero()) {
            return Err(invalid(
                "min_active_duration",
                to_f64(self.min_active_duration),
                "must be >= 0",
            ));
        }
        Ok(())
    }
}

/// `max(R/R_threshold, T/T_threshold)`; above 1 means a threshold is breached.
pub fn stress_score<T: Scalar>(cluster: &ClusterState<T>, constraints: &ScheduleConstraints<T>) -> T {
    let r = cluster.internal_resistance / constraints.resistance_threshold;
    let t = cluster.temperature / constraints.temperature_threshold;
    r.max(t)
}

/// Which signal dominated a rest decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressSignal {
    Resistance,
    Temperature,
}

pub fn dominant_signal<T: Scalar>(cluster: &ClusterState<T>, constraints: &ScheduleConstraints<T>) -> StressSignal {
    let r = cluster.internal_resistance / constraints.resistance_threshold;
    let t = cluster.temperature / constraints.temperature_threshold;
    if r >= t {
        StressSignal::Resistance
    } else {
        StressSignal::Temperature
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RestSelection {
    /// Clusters to rest, in the order they were chosen.
    pub rest: Vec<ClusterId>,
    /// The pack voltage floor is violated even without resting anything.
    pub infeasible: bool,
}

/// Total order used to rank rest candidates: higher stress first, then less
/// accumulated rest, then lower id.
fn priority<T: Scalar>(a: &(T, &ClusterState<T>), b: &(T, &ClusterState<T>)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| {
            a.1.cumulative_rest_time
                .partial_cmp(&b.1.cumulative_rest_time)
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.1.id.cmp(&b.1.id))
}

/// Eligible rest candidates in priority order.
pub fn rest_candidates<'a, T: Scalar>(
    clusters: &'a [ClusterState<T>],
    constraints: &ScheduleConstraints<T>,
) -> Vec<&'a ClusterState<T>> {
    let mut scored: Vec<(T, &ClusterState<T>)> = clusters
        .iter()
        .filter(|c| c.is_active() && c.time_in_mode >= constraints.min_active_duration)
        .map(|c| (stress_score(c, constraints), c))
        .filter(|(s, _)| *s > T::one())
        .collect();
    scored.sort_by(priority);
    scored.into_iter().map(|(_, c)| c).collect()
}

/// Whether resting `rested` (plus the clusters already resting) keeps the
/// count, fraction and voltage constraints.
fn feasible<T, F>(
    clusters: &[ClusterState<T>],
    rested: &[ClusterId],
    constraints: &ScheduleConstraints<T>,
    pack_voltage_fn: &F,
) -> bool
where
    T: Scalar,
    F: Fn(&[&ClusterState<T>]) -> T,
{
    let active: Vec<&ClusterState<T>> = clusters
        .iter()
        .filter(|c| c.is_active() && !rested.contains(&c.id))
        .collect();
    let resting = clusters.len() - active.len();
    if active.len() < constraints.min_active_clusters {
        return false;
    }
    if count::<T>(resting) / count::<T>(clusters.len()) > constraints.max_rest_fraction {
        return false;
    }
    pack_voltage_fn(&active) >= constraints.min_pack_voltage
}

/// Picks clusters to rest.
///
/// Candidates are active clusters that have been active for at least
/// `min_active_duration` and whose stress score exceeds 1. They are taken
/// greedily in priority order, skipping any whose removal would break the
/// active-count, rest-fraction or voltage constraint. `pack_voltage_fn`
/// receives the clusters that would remain active.
pub fn select_rest_set<T, F>(
    clusters: &[ClusterState<T>],
    constraints: &ScheduleConstraints<T>,
    pack_voltage_fn: F,
) -> Result<RestSelection, SchedulerError>
where
    T: Scalar,
    F: Fn(&[&ClusterState<T>]) -> T,
{
    if clusters.len() < constraints.min_active_clusters {
        return Err(SchedulerError::TooFewClusters {
            clusters: clusters.len(),
            min_active: constraints.min_active_clusters,
        });
    }
    let mut chosen = Vec::new();
    let already_active: Vec<&ClusterState<T>> = clusters.iter().filter(|c| c.is_active()).collect();
    if pack_voltage_fn(&already_active) < constraints.min_pack_voltage {
        return Ok(RestSelection {
            rest: chosen,
            infeasible: true,
        });
    }
    for candidate in rest_candidates(clusters, constraints) {
        chosen.push(candidate.id);
        if !feasible(clusters, &chosen, constraints, &pack_voltage_fn) {
            chosen.pop();
        }
    }
    Ok(RestSelection {
        rest: chosen,
        infeasible: false,
    })
}

/// Rested clusters that have rested at least `min_rest_duration` and whose
/// stress has dropped below 0.9.
pub fn wake_due<T: Scalar>(clusters: &[ClusterState<T>], constraints: &ScheduleConstraints<T>) -> Vec<ClusterId> {
    let band: T = lit(0.9);
    clusters
        .iter()
        .filter(|c| {
            c.mode == Mode::Rest
                && c.time_in_mode >= constraints.min_rest_duration
                && stress_score(c, constraints) < band
        })
        .map(|c| c.id)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Rest,
    Wake,
    /// The run ended with the cluster still resting.
    EndOfRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventReason {
    Resistance,
    Temperature,
    Recovered,
    EndOfRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct SchedulerEvent<T> {
    pub time: T,
    pub cluster: ClusterId,
    pub kind: EventKind,
    pub reason: EventReason,
    /// Stress score at the time of the decision.
    pub score: T,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScheduleOutcome<T> {
    pub events: Vec<SchedulerEvent<T>>,
    pub infeasible: bool,
}

/// Adds `dt` to every cluster's mode timer and resting clusters' rest total.
pub fn advance_time<T: Scalar>(clusters: &mut [ClusterState<T>], dt: T) {
    for c in clusters.iter_mut() {
        c.time_in_mode += dt;
        if c.mode == Mode::Rest {
            c.cumulative_rest_time += dt;
        }
    }
}

/// One scheduler decision: wake recovered clusters, then rest stressed ones.
pub fn schedule_step<T, F>(
    clusters: &mut [ClusterState<T>],
    constraints: &ScheduleConstraints<T>,
    now: T,
    pack_voltage_fn: F,
) -> Result<ScheduleOutcome<T>, SchedulerError>
where
    T: Scalar,
    F: Fn(&[&ClusterState<T>]) -> T,
{
    let mut outcome = ScheduleOutcome {
        events: Vec::new(),
        infeasible: false,
    };
    for id in wake_due(clusters, constraints) {
        let c = clusters.iter_mut().find(|c| c.id == id).expect("id from this slice");
        outcome.events.push(SchedulerEvent {
            time: now,
            cluster: id,
            kind: EventKind::Wake,
            reason: EventReason::Recovered,
            score: stress_score(c, constraints),
        });
        c.mode = Mode::Active;
        c.time_in_mode = T::zero();
    }
    let selection = select_rest_set(clusters, constraints, pack_voltage_fn)?;
    outcome.infeasible = selection.infeasible;
    for id in selection.rest {
        let c = clusters.iter_mut().find(|c| c.id == id).expect("id from this slice");
        let reason = match dominant_signal(c, constraints) {
            StressSignal::Resistance => EventReason::Resistance,
            StressSignal::Temperature => EventReason::Temperature,
        };
        outcome.events.push(SchedulerEvent {
            time: now,
            cluster: id,
            kind: EventKind::Rest,
            reason,
            score: stress_score(c, constraints),
        });
        c.mode = Mode::Rest;
        c.time_in_mode = T::zero();
    }
    Ok(outcome)
}
