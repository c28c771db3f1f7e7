//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use hybridpack::scheduler::{ClusterId, ClusterState, Mode, ScheduleConstraints};
use rand::Rng;

/// Line-by-line transcription of the reference figure script's diffusion
/// loop. Returns the post-step surface concentration of every step.
pub fn reference_script_surface(flux_of_t: impl Fn(f64) -> f64) -> Vec<f64> {
    let l = 50e-6;
    let n: usize = 100;
    let d = 1e-13;
    let h = l / (n - 1) as f64;
    let dt = 0.5 * h.powi(2) / (2.0 * d);
    let total_time = 200.0;
    let steps = (total_time / dt) as usize;
    let mut c = vec![0.0_f64; n];
    let mut surface = Vec::with_capacity(steps);

    let update = |c: &Vec<f64>, flux: f64| -> Vec<f64> {
        let mut new = c.clone();
        new[0] = c[0] + (d * dt / h.powi(2)) * (c[1] - c[0]) * 2.0 + flux * dt / h;
        for i in 1..n - 1 {
            new[i] = c[i] + d * dt / h.powi(2) * (c[i + 1] - 2.0 * c[i] + c[i - 1]);
        }
        new[n - 1] = new[n - 2];
        new
    };

    for step in 0..steps {
        let t = step as f64 * dt;
        c = update(&c, flux_of_t(t));
        surface.push(c[0]);
    }
    surface
}

/// `dt` and step count of the reference script.
pub fn reference_script_timing() -> (f64, usize) {
    let h = 50e-6 / 99.0;
    let dt = 0.5 * h * h / (2.0 * 1e-13);
    (dt, (200.0 / dt) as usize)
}

pub fn reference_pulse(t: f64) -> f64 {
    if t % 20.0 < 20.0 / 2.0 {
        5.0
    } else {
        0.0
    }
}

/// A voltage function that only falls as clusters leave the active set.
pub fn monotone_voltage(active: &[&ClusterState<f64>]) -> f64 {
    active.iter().map(|c| c.cells_in_cluster as f64 * (3.0 + c.soc)).sum()
}

fn score(c: &ClusterState<f64>, k: &ScheduleConstraints<f64>) -> f64 {
    (c.internal_resistance / k.resistance_threshold).max(c.temperature / k.temperature_threshold)
}

/// Brute-force rest set: among every feasible subset of the eligible
/// clusters, the lexicographically largest membership vector when the
/// candidates are listed in priority order. Resting nothing is always
/// allowed, even when clusters already resting break the count or fraction
/// limits. `None` means the pack is already below the voltage floor.
pub fn enumerate_rest_set(
    clusters: &[ClusterState<f64>],
    k: &ScheduleConstraints<f64>,
    voltage: impl Fn(&[&ClusterState<f64>]) -> f64,
) -> Option<Vec<ClusterId>> {
    let active_now: Vec<&ClusterState<f64>> = clusters.iter().filter(|c| c.mode == Mode::Active).collect();
    if voltage(&active_now) < k.min_pack_voltage {
        return None;
    }
    let mut eligible: Vec<&ClusterState<f64>> = active_now
        .iter()
        .copied()
        .filter(|c| c.time_in_mode >= k.min_active_duration && score(c, k) > 1.0)
        .collect();
    eligible.sort_by(|a, b| {
        score(b, k)
            .partial_cmp(&score(a, k))
            .unwrap()
            .then(a.cumulative_rest_time.partial_cmp(&b.cumulative_rest_time).unwrap())
            .then(a.id.cmp(&b.id))
    });

    let m = eligible.len();
    let mut best = vec![false; m];
    for mask in 1u32..(1 << m) {
        let member: Vec<bool> = (0..m).map(|i| mask & (1 << i) != 0).collect();
        let rested: Vec<ClusterId> = (0..m).filter(|&i| member[i]).map(|i| eligible[i].id).collect();
        let remaining: Vec<&ClusterState<f64>> =
            active_now.iter().copied().filter(|c| !rested.contains(&c.id)).collect();
        let resting = clusters.len() - remaining.len();
        let ok = remaining.len() >= k.min_active_clusters
            && resting as f64 / clusters.len() as f64 <= k.max_rest_fraction
            && voltage(&remaining) >= k.min_pack_voltage;
        if ok && member > best {
            best = member;
        }
    }
    Some((0..m).filter(|&i| best[i]).map(|i| eligible[i].id).collect())
}

pub fn random_constraints(rng: &mut impl Rng, clusters: usize) -> ScheduleConstraints<f64> {
    ScheduleConstraints {
        resistance_threshold: rng.random_range(0.02..0.08),
        temperature_threshold: rng.random_range(310.0..340.0),
        min_active_clusters: rng.random_range(1..=clusters),
        min_pack_voltage: if rng.random_bool(0.3) {
            rng.random_range(0.0..(clusters as f64 * 12.0 * 4.0))
        } else {
            0.0
        },
        max_rest_fraction: rng.random_range(0.0..0.95),
        min_rest_duration: rng.random_range(0.0..30.0),
        min_active_duration: rng.random_range(0.0..30.0),
    }
}

pub fn random_cluster(rng: &mut impl Rng, id: u32, k: &ScheduleConstraints<f64>) -> ClusterState<f64> {
    let mut c = ClusterState::new(
        id,
        rng.random_range(8..=20),
        rng.random_range(0.0..=1.0),
        k.temperature_threshold * rng.random_range(0.8..1.2),
        k.resistance_threshold * rng.random_range(0.3..1.5),
    );
    if rng.random_bool(0.3) {
        c.mode = Mode::Rest;
    }
    c.time_in_mode = rng.random_range(0.0..60.0);
    // Coarse values so priority ties on rest time actually occur.
    c.cumulative_rest_time = rng.random_range(0..4) as f64 * 10.0;
    c
}
