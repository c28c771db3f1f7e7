//! Explicit finite-difference solver for 1-D Fick diffusion in an electrode
//! slab, with an applied flux at the surface (`x = 0`) and a zero-gradient
//! back face.
//!
//! The surface node uses the ghost-node form
//! `c0 + 2·r·(c1 − c0) + flux·dt/h` with `r = D·dt/h²`, interior nodes use the
//! centred second difference, and the back node copies its neighbour after
//! each step. Floating-point operations are ordered so a run is bit-identical
//! to a direct NumPy-style transcription of the same scheme.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocols::{flux_at, CurrentProfile, ProtocolError};
use crate::scalar::{count, lit, to_f64, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffusionError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("timestep {dt} s exceeds the explicit stability bound h^2/(2D) = {bound} s")]
    Unstable { dt: f64, bound: f64 },
    #[error("surface flux {0} is not finite")]
    NonFiniteFlux(f64),
    #[error("invalid run: {0}")]
    InvalidRun(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Uniform 1-D concentration field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct DiffusionGrid<T> {
    length: T,
    diffusivity: T,
    spacing: T,
    concentration: Vec<T>,
}

/// Builds a uniform grid of `n_nodes` nodes over `length`, every node at `initial_concentration`.
pub fn make_grid<T: Scalar>(
    length: T,
    n_nodes: usize,
    diffusivity: T,
    initial_concentration: T,
) -> Result<DiffusionGrid<T>, DiffusionError> {
    if n_nodes < 3 {
        return Err(DiffusionError::InvalidGrid(format!(
            "n_nodes = {n_nodes}, need at least 3"
        )));
    }
    if !(length > T::zero()) || !length.is_finite() {
        return Err(DiffusionError::InvalidGrid(format!("length = {length}, must be > 0")));
    }
    if !(diffusivity > T::zero()) || !diffusivity.is_finite() {
        return Err(DiffusionError::InvalidGrid(format!(
            "diffusivity = {diffusivity}, must be > 0"
        )));
    }
    if !initial_concentration.is_finite() {
        return Err(DiffusionError::InvalidGrid(
            "initial concentration must be finite".into(),
        ));
    }
    Ok(DiffusionGrid {
        length,
        diffusivity,
        spacing: length / count(n_nodes - 1),
        concentration: vec![initial_concentration; n_nodes],
    })
}

impl<T: Scalar> DiffusionGrid<T> {
    /// Builds a grid carrying an explicit concentration profile.
    pub fn from_profile(length: T, diffusivity: T, concentration: Vec<T>) -> Result<Self, DiffusionError> {
        let mut grid = make_grid(length, concentration.len(), diffusivity, T::zero())?;
        if concentration.iter().any(|c| !c.is_finite()) {
            return Err(DiffusionError::InvalidGrid("concentrations must be finite".into()));
        }
        grid.concentration = concentration;
        Ok(grid)
    }

    pub fn length(&self) -> T {
        self.length
    }

    pub fn diffusivity(&self) -> T {
        self.diffusivity
    }

    /// Node spacing `h = L/(n − 1)`.
    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn n_nodes(&self) -> usize {
        self.concentration.len()
    }

    pub fn concentration(&self) -> &[T] {
        &self.concentration
    }

    pub fn surface(&self) -> T {
        self.concentration[0]
    }

    /// Largest stable explicit timestep, `h²/(2D)`.
    pub fn stability_bound(&self) -> T {
        self.spacing * self.spacing / (lit::<T>(2.0) * self.diffusivity)
    }

    /// Advances the field by one explicit step in place.
    ///
    /// `scratch` is resized as needed and left holding the previous field.
    pub fn advance(&mut self, surface_flux: T, dt: T, scratch: &mut Vec<T>) -> Result<(), DiffusionError> {
        if !surface_flux.is_finite() {
            return Err(DiffusionError::NonFiniteFlux(to_f64(surface_flux)));
        }
        let bound = self.stability_bound();
        if !(dt > T::zero()) || dt > bound {
            return Err(DiffusionError::Unstable {
                dt: to_f64(dt),
                bound: to_f64(bound),
            });
        }
        let two: T = lit(2.0);
        let h = self.spacing;
        let r = self.diffusivity * dt / (h * h);
        let n = self.concentration.len();

        scratch.clear();
        scratch.extend_from_slice(&self.concentration);
        let c = &scratch[..];
        let new = &mut self.concentration;

        new[0] = c[0] + r * (c[1] - c[0]) * two + surface_flux * dt / h;
        for i in 1..n - 1 {
            new[i] = c[i] + r * (c[i + 1] - two * c[i] + c[i - 1]);
        }
        new[n - 1] = new[n - 2];
        Ok(())
    }
}

/// `safety · h²/(2D)`, with `safety` in (0, 1].
pub fn stable_dt<T: Scalar>(grid: &DiffusionGrid<T>, safety: T) -> Result<T, DiffusionError> {
    if !(safety > T::zero() && safety <= T::one()) {
        return Err(DiffusionError::InvalidRun(format!(
            "safety factor {safety} must lie in (0, 1]"
        )));
    }
    let h = grid.spacing;
    Ok(safety * (h * h) / (lit::<T>(2.0) * grid.diffusivity))
}

/// One explicit step, returning the new field.
pub fn step<T: Scalar>(grid: &DiffusionGrid<T>, surface_flux: T, dt: T) -> Result<DiffusionGrid<T>, DiffusionError> {
    let mut next = grid.clone();
    let mut scratch = Vec::with_capacity(grid.n_nodes());
    next.advance(surface_flux, dt, &mut scratch)?;
    Ok(next)
}

/// Rectangle-rule integral `h · Σ c_i`.
pub fn total_mass<T: Scalar>(grid: &DiffusionGrid<T>) -> T {
    grid.spacing * grid.concentration.iter().copied().sum::<T>()
}

/// Integral under the weights the scheme actually conserves: half weight on
/// the surface node, full weight on the interior, none on the mirrored back
/// node. With zero flux this is invariant once the back node equals its
/// neighbour; each step adds exactly `flux·dt/2`.
pub fn scheme_mass<T: Scalar>(grid: &DiffusionGrid<T>) -> T {
    let c = &grid.concentration;
    let n = c.len();
    let interior: T = c[1..n - 1].iter().copied().sum();
    grid.spacing * (c[0] / lit(2.0) + interior)
}

/// Surface concentration sampled from a diffusion run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct SurfaceTrace<T> {
    pub times: Vec<T>,
    pub surface_concentration: Vec<T>,
}

/// `count` indices spread linearly over `0..=last`, truncated toward zero.
///
/// Mirrors `np.linspace(0, last, count).astype(int)`.
pub fn linspace_indices(last: usize, count: usize) -> Vec<usize> {
    match count {
        0 => Vec::new(),
        1 => vec![0],
        _ => {
            let step = last as f64 / (count - 1) as f64;
            let mut idx: Vec<usize> = (0..count).map(|i| (i as f64 * step) as usize).collect();
            idx[count - 1] = last;
            idx
        }
    }
}

/// Number of whole steps of length `dt` in `total_time`.
pub fn step_count<T: Scalar>(total_time: T, dt: T) -> usize {
    (total_time / dt).floor().to_usize().unwrap_or(0)
}

/// Steps `grid` through `⌊total_time/dt⌋` steps, querying `profile` at each
/// step's start time, and returns `sample_count` index-linear samples of the
/// post-step surface concentration stamped with the step start time.
pub fn run_diffusion<T: Scalar>(
    grid: &DiffusionGrid<T>,
    profile: &CurrentProfile<T>,
    total_time: T,
    dt: T,
    sample_count: usize,
) -> Result<SurfaceTrace<T>, DiffusionError> {
    if !(total_time > T::zero()) {
        return Err(DiffusionError::InvalidRun(format!(
            "total_time = {total_time}, must be > 0"
        )));
    }
    if sample_count < 2 {
        return Err(DiffusionError::InvalidRun(format!(
            "sample_count = {sample_count}, need at least 2"
        )));
    }
    let steps = step_count(total_time, dt);
    if steps < sample_count {
        return Err(DiffusionError::InvalidRun(format!(
            "sample_count = {sample_count} exceeds the {steps} steps in the run"
        )));
    }
    let series = surface_series(grid, profile, steps, dt)?;
    let idx = linspace_indices(steps - 1, sample_count);
    Ok(SurfaceTrace {
        times: idx.iter().map(|&k| count::<T>(k) * dt).collect(),
        surface_concentration: idx.iter().map(|&k| series[k]).collect(),
    })
}

/// Full per-step surface series of a run, without downsampling.
pub fn surface_series<T: Scalar>(
    grid: &DiffusionGrid<T>,
    profile: &CurrentProfile<T>,
    steps: usize,
    dt: T,
) -> Result<Vec<T>, DiffusionError> {
    let mut grid = grid.clone();
    let mut scratch = Vec::with_capacity(grid.n_nodes());
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = count::<T>(k) * dt;
        let flux = flux_at(profile, t)?;
        grid.advance(flux, dt, &mut scratch)?;
        out.push(grid.surface());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::FixedPulseParams;
    use proptest::prelude::*;

    fn reference_grid() -> DiffusionGrid<f64> {
        make_grid(50e-6, 100, 1e-13, 0.0).unwrap()
    }

    /// Direct transcription of the reference update loop on plain vectors.
    fn oracle_update(c: &[f64], flux: f64, d: f64, dt: f64, h: f64) -> Vec<f64> {
        let n = c.len();
        let mut new = c.to_vec();
        new[0] = c[0] + (d * dt / h.powi(2)) * (c[1] - c[0]) * 2.0 + flux * dt / h;
        for i in 1..n - 1 {
            new[i] = c[i] + d * dt / h.powi(2) * (c[i + 1] - 2.0 * c[i] + c[i - 1]);
        }
        new[n - 1] = new[n - 2];
        new
    }

    #[test]
    fn make_grid_examples() {
        let g = reference_grid();
        assert!((g.spacing() - 5.0505e-7).abs() < 1e-12);
        assert_eq!(total_mass(&g), 0.0);
        let g = make_grid(1e-6_f64, 3, 1e-13, 5.0).unwrap();
        assert_eq!(g.concentration(), &[5.0, 5.0, 5.0]);
        assert!((g.spacing() * 2.0 - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn make_grid_rejects_invalid() {
        assert!(make_grid(50e-6, 2, 1e-13, 0.0).is_err());
        assert!(make_grid(0.0, 10, 1e-13, 0.0).is_err());
        assert!(make_grid(50e-6, 10, -1e-13, 0.0).is_err());
        assert!(make_grid(50e-6, 10, 1e-13, f64::NAN).is_err());
    }

    #[test]
    fn stable_dt_examples() {
        let g = reference_grid();
        assert!((stable_dt(&g, 0.5).unwrap() - 0.6377).abs() < 1e-3);
        assert_eq!(stable_dt(&g, 1.0).unwrap(), g.spacing() * g.spacing() / (2.0 * 1e-13));
        let fast = make_grid(50e-6_f64, 100, 1e-12, 0.0).unwrap();
        assert!((stable_dt(&fast, 0.5).unwrap() - 0.06377).abs() < 1e-4);
        assert!(stable_dt(&g, 0.0).is_err());
        assert!(stable_dt(&g, 1.5).is_err());
    }

    #[test]
    fn step_uniform_field_is_fixed_point() {
        let g = make_grid(50e-6, 100, 1e-13, 3.25).unwrap();
        let dt = stable_dt(&g, 0.5).unwrap();
        let next = step(&g, 0.0, dt).unwrap();
        assert_eq!(next, g);
    }

    #[test]
    fn step_matches_reference_update() {
        let g = reference_grid();
        let dt = stable_dt(&g, 0.5).unwrap();
        let h = g.spacing();
        let mut c = vec![0.0; 100];
        let mut grid = g.clone();
        for k in 0..25 {
            let flux = if k % 3 == 0 { 2.0 } else { 0.5 };
            c = oracle_update(&c, flux, 1e-13, dt, h);
            grid = step(&grid, flux, dt).unwrap();
            assert_eq!(grid.concentration(), &c[..]);
        }
        let one = step(&reference_grid(), 2.0, dt).unwrap();
        assert_eq!(one.surface(), 2.0 * dt / h);
    }

    #[test]
    fn step_rejects_unstable_dt_and_bad_flux() {
        let g = reference_grid();
        let bound = g.spacing() * g.spacing() / (2.0 * 1e-13);
        match step(&g, 0.0, 1.01 * bound) {
            Err(DiffusionError::Unstable { bound: b, .. }) => assert_eq!(b, bound),
            other => panic!("expected stability error, got {other:?}"),
        }
        assert!(step(&g, 0.0, bound).is_ok());
        assert!(step(&g, f64::NAN, 0.5 * bound).is_err());
        assert!(step(&g, f64::INFINITY, 0.5 * bound).is_err());
    }

    #[test]
    fn total_mass_uniform() {
        let g = make_grid(50e-6_f64, 100, 1e-13, 2.0).unwrap();
        assert!((total_mass(&g) - 1.0101e-4).abs() < 1e-9);
    }

    #[test]
    fn scheme_mass_tracks_half_the_injected_flux() {
        let mut g = reference_grid();
        let dt = stable_dt(&g, 0.5).unwrap();
        let mut scratch = Vec::new();
        for _ in 0..300 {
            g.advance(2.0, dt, &mut scratch).unwrap();
        }
        let injected = 300.0 * 2.0 * dt;
        assert!((scheme_mass(&g) - injected / 2.0).abs() < 1e-9 * injected);
    }

    #[test]
    fn run_diffusion_zero_profile() {
        let g = reference_grid();
        let dt = stable_dt(&g, 0.5).unwrap();
        let trace = run_diffusion(&g, &CurrentProfile::Constant { level: 0.0 }, 200.0, dt, 200).unwrap();
        assert_eq!(trace.surface_concentration.len(), 200);
        assert!(trace.surface_concentration.iter().all(|&c| c == 0.0));
        assert!(trace.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn run_diffusion_rejects_bad_requests() {
        let g = reference_grid();
        let dt = stable_dt(&g, 0.5).unwrap();
        let c = CurrentProfile::Constant { level: 1.0 };
        assert!(run_diffusion(&g, &c, 200.0, dt, 1).is_err());
        assert!(run_diffusion(&g, &c, 0.0, dt, 2).is_err());
        assert!(run_diffusion(&g, &c, 200.0, dt, 1000).is_err());
        assert!(run_diffusion(&g, &c, 200.0, 2.5 * dt, 10).is_err());
    }

    #[test]
    fn pulsed_run_peaks_once_per_period() {
        let g = reference_grid();
        let dt = stable_dt(&g, 0.5).unwrap();
        let pulse = CurrentProfile::FixedPulse(FixedPulseParams {
            high_level: 5.0,
            rest_level: 0.0,
            period: 20.0,
            duty: 0.5,
        });
        let trace = run_diffusion(&g, &pulse, 200.0, dt, 200).unwrap();
        let s = &trace.surface_concentration;
        let peaks = (1..s.len() - 1)
            .filter(|&i| s[i] > s[i - 1] && s[i] >= s[i + 1])
            .count();
        assert!((9..=11).contains(&peaks), "peaks = {peaks}");

        // Every zero-flux step lowers (or holds) the surface concentration.
        let steps = step_count(200.0, dt);
        let full = surface_series(&g, &pulse, steps, dt).unwrap();
        for k in 1..steps {
            let t = k as f64 * dt;
            if flux_at(&pulse, t).unwrap() == 0.0 {
                assert!(full[k] <= full[k - 1]);
            }
        }
    }

    #[test]
    fn linspace_indices_matches_numpy() {
        // np.linspace(0, 312, 200).astype(int)[:8] and [-3:]
        let idx = linspace_indices(312, 200);
        assert_eq!(&idx[..8], &[0, 1, 3, 4, 6, 7, 9, 10]);
        assert_eq!(&idx[197..], &[308, 310, 312]);
        assert_eq!(linspace_indices(9, 10), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn solver_runs_in_f32() {
        let g = make_grid::<f32>(50e-6, 50, 1e-13, 0.0).unwrap();
        let dt = stable_dt(&g, 0.5).unwrap();
        let trace = run_diffusion(&g, &CurrentProfile::Constant { level: 2.0 }, 50.0, dt, 10).unwrap();
        assert!(trace.surface_concentration.iter().all(|c| c.is_finite() && *c > 0.0));
    }

    proptest! {
        #[test]
        fn affine_interior_unchanged_by_zero_flux(a in -10.0f64..10.0, b in -1e6f64..1e6) {
            let n = 40;
            let g = make_grid(50e-6, n, 1e-13, 0.0).unwrap();
            let h = g.spacing();
            let field: Vec<f64> = (0..n).map(|i| a + b * (i as f64 * h)).collect();
            let g = DiffusionGrid::from_profile(50e-6, 1e-13, field.clone()).unwrap();
            let dt = stable_dt(&g, 0.9).unwrap();
            let next = step(&g, 0.0, dt).unwrap();
            for (got, want) in next.concentration()[1..n - 1].iter().zip(&field[1..n - 1]) {
                prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }

        #[test]
        fn scheme_mass_conserved_under_zero_flux(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 60;
            let mut field: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
            field[n - 1] = field[n - 2];
            let mut g = DiffusionGrid::from_profile(50e-6, 1e-13, field).unwrap();
            let dt = stable_dt(&g, 0.5).unwrap();
            let m0 = scheme_mass(&g);
            let mut scratch = Vec::new();
            for _ in 0..1000 {
                g.advance(0.0, dt, &mut scratch).unwrap();
            }
            prop_assert!(((scheme_mass(&g) - m0) / m0).abs() < 1e-10);
        }
    }
}
