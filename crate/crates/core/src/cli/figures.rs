//! Data behind the three reference plots: weighted specific energy against
//! power fraction, surface concentration under constant and pulsed flux, and
//! capacity retention under the two fade calibrations.

use crate::diffusion::{make_grid, run_diffusion, stable_dt, DiffusionError};
use crate::electrochem::{capacity_retained, pack_specific_energy, ElectrochemError, FadeModel, PackComposition};
use crate::protocols::{CurrentProfile, FixedPulseParams};

pub const E_ENERGY: f64 = 250.0;
pub const E_POWER: f64 = 150.0;
pub const TARGET_SPECIFIC_ENERGY: f64 = 175.0;

pub const ELECTRODE_THICKNESS: f64 = 50e-6;
pub const GRID_NODES: usize = 100;
pub const DIFFUSIVITY: f64 = 1e-13;
pub const DT_SAFETY: f64 = 0.5;
pub const TOTAL_TIME: f64 = 200.0;
pub const SAMPLES: usize = 200;
pub const CONSTANT_FLUX: f64 = 2.0;
pub const PULSE_HIGH: f64 = 5.0;
pub const PULSE_REST: f64 = 0.0;
pub const PULSE_PERIOD: f64 = 20.0;
pub const PULSE_DUTY: f64 = 0.5;

pub const FIG1_HEADER: [&str; 3] = ["power_fraction", "pack_specific_energy", "target"];
pub const FIG2_HEADER: [&str; 3] = ["time", "surface_constant", "surface_pulsed"];
pub const FIG3_HEADER: [&str; 3] = ["cycles", "capacity_constant", "capacity_pulsed"];

/// Rows `[f, E_pack, 175]` for f = 0, 0.1, …, 0.6.
pub fn fig1_rows() -> Result<Vec<Vec<f64>>, ElectrochemError> {
    (0..7)
        .map(|i| {
            let f = i as f64 * 0.1;
            let e = pack_specific_energy(&PackComposition::new(E_ENERGY, E_POWER, f)?)?;
            Ok(vec![f, e, TARGET_SPECIFIC_ENERGY])
        })
        .collect()
}

/// The pulsed protocol of the diffusion figure. With `charge_matched` the
/// high level is scaled so its time average equals the constant flux.
pub fn fig2_pulse(charge_matched: bool) -> CurrentProfile<f64> {
    let high_level = if charge_matched {
        (CONSTANT_FLUX - (1.0 - PULSE_DUTY) * PULSE_REST) / PULSE_DUTY
    } else {
        PULSE_HIGH
    };
    CurrentProfile::FixedPulse(FixedPulseParams {
        high_level,
        rest_level: PULSE_REST,
        period: PULSE_PERIOD,
        duty: PULSE_DUTY,
    })
}

/// Rows `[t, c_surface constant, c_surface pulsed]`, 200 index-linear samples.
pub fn fig2_rows(charge_matched: bool) -> Result<Vec<Vec<f64>>, DiffusionError> {
    let grid = make_grid(ELECTRODE_THICKNESS, GRID_NODES, DIFFUSIVITY, 0.0)?;
    let dt = stable_dt(&grid, DT_SAFETY)?;
    let constant = run_diffusion(
        &grid,
        &CurrentProfile::Constant { level: CONSTANT_FLUX },
        TOTAL_TIME,
        dt,
        SAMPLES,
    )?;
    let pulsed = run_diffusion(&grid, &fig2_pulse(charge_matched), TOTAL_TIME, dt, SAMPLES)?;
    Ok((0..SAMPLES)
        .map(|i| {
            vec![
                constant.times[i],
                constant.surface_concentration[i],
                pulsed.surface_concentration[i],
            ]
        })
        .collect())
}

/// Rows `[N, C_constant(N), C_pulsed(N)]` for N = 0, 2000, …, 20 000.
pub fn fig3_rows() -> Vec<Vec<f64>> {
    let cc = FadeModel::<f64>::constant_current();
    let pulsed = FadeModel::<f64>::pulsed();
    (0..=10)
        .map(|i| {
            let n = (i * 2000) as f64;
            vec![n, capacity_retained(&cc, n), capacity_retained(&pulsed, n)]
        })
        .collect()
}
