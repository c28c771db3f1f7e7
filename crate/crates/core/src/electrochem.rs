//! Closed-form electrochemical models: pack-level weighted specific energy,
//! Nernst open-circuit voltage and the square-root plus linear capacity fade law.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, to_f64, Scalar};

/// Molar gas constant, J mol⁻¹ K⁻¹.
pub const GAS_CONSTANT: f64 = 8.314;
/// Faraday constant, C mol⁻¹.
pub const FARADAY: f64 = 96_485.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ElectrochemError {
    #[error("invalid composition: {field} = {value} ({bound})")]
    InvalidComposition {
        field: &'static str,
        value: f64,
        bound: &'static str,
    },
    #[error("invalid Nernst input: {field} = {value} ({bound})")]
    InvalidNernst {
        field: &'static str,
        value: f64,
        bound: &'static str,
    },
    #[error("invalid fade model: {field} = {value} ({bound})")]
    InvalidFade {
        field: &'static str,
        value: f64,
        bound: &'static str,
    },
    #[error("capacity threshold {threshold} must lie in (0, {c0})")]
    InvalidThreshold { threshold: f64, c0: f64 },
}

/// Mass split between energy modules and power modules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
#[serde(deny_unknown_fields)]
pub struct PackComposition<T> {
    /// Specific energy of the energy modules, Wh/kg.
    pub e_energy: T,
    /// Specific energy of the power modules, Wh/kg.
    pub e_power: T,
    /// Mass fraction of power modules, 0..=1.
    pub power_fraction: T,
}

impl<T: Scalar> PackComposition<T> {
    pub fn new(e_energy: T, e_power: T, power_fraction: T) -> Result<Self, ElectrochemError> {
        let comp = Self {
            e_energy,
            e_power,
            power_fraction,
        };
        comp.validate()?;
        Ok(comp)
    }

    pub fn validate(&self) -> Result<(), ElectrochemError> {
        let invalid = |field, value: T, bound| ElectrochemError::InvalidComposition {
            field,
            value: to_f64(value),
            bound,
        };
        if !(self.e_energy > T::zero()) || !self.e_energy.is_finite() {
            return Err(invalid("e_energy", self.e_energy, "must be > 0"));
        }
        if !(self.e_power > T::zero()) || !self.e_power.is_finite() {
            return Err(invalid("e_power", self.e_power, "must be > 0"));
        }
        let f = self.power_fraction;
        if !(f >= T::zero() && f <= T::one()) {
            return Err(invalid("power_fraction", f, "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Mass-weighted average specific energy of the pack, Wh/kg.
pub fn pack_specific_energy<T: Scalar>(comp: &PackComposition<T>) -> Result<T, ElectrochemError> {
    comp.validate()?;
    let f = comp.power_fraction;
    Ok((T::one() - f) * comp.e_energy + f * comp.e_power)
}

/// Result of inverting the weighted specific energy for a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetFraction<T> {
    /// Largest power-module fraction that still meets the target.
    Reachable(T),
    /// Even a pack of pure energy modules falls short of the target.
    Unreachable,
}

/// Largest power-module mass fraction whose pack specific energy still meets `target`.
pub fn max_power_fraction_for_target<T: Scalar>(
    e_energy: T,
    e_power: T,
    target: T,
) -> Result<TargetFraction<T>, ElectrochemError> {
    PackComposition::new(e_energy, e_power, T::zero())?;
    if !(target > T::zero()) {
        return Err(ElectrochemError::InvalidComposition {
            field: "target",
            value: to_f64(target),
            bound: "must be > 0",
        });
    }
    if e_power >= target {
        return Ok(TargetFraction::Reachable(T::one()));
    }
    if e_energy < target {
        return Ok(TargetFraction::Unreachable);
    }
    // e_power < target <= e_energy, so the denominator is positive.
    let f = (e_energy - target) / (e_energy - e_power);
    Ok(TargetFraction::Reachable(f.max(T::zero()).min(T::one())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct NernstInput<T> {
    /// Standard potential E°, V.
    pub e_standard: T,
    /// Absolute temperature, K.
    pub temperature: T,
    pub n_electrons: u32,
    /// Reaction quotient.
    pub q: T,
}

/// Equilibrium electrode potential `E° − RT/(nF)·ln Q`.
pub fn nernst_voltage<T: Scalar>(inp: &NernstInput<T>) -> Result<T, ElectrochemError> {
    let invalid = |field, value: f64, bound| ElectrochemError::InvalidNernst { field, value, bound };
    if !(inp.temperature > T::zero()) || !inp.temperature.is_finite() {
        return Err(invalid("temperature", to_f64(inp.temperature), "must be > 0 K"));
    }
    if inp.n_electrons < 1 {
        return Err(invalid("n_electrons", inp.n_electrons as f64, "must be >= 1"));
    }
    if !(inp.q > T::zero()) || !inp.q.is_finite() {
        return Err(invalid("q", to_f64(inp.q), "must be > 0"));
    }
    if !inp.e_standard.is_finite() {
        return Err(invalid("e_standard", to_f64(inp.e_standard), "must be finite"));
    }
    let n: T = lit(inp.n_electrons as f64);
    let thermal = lit::<T>(GAS_CONSTANT) * inp.temperature / (n * lit(FARADAY));
    Ok(inp.e_standard - thermal * inp.q.ln())
}

/// Capacity fade law `C(N) = c0 − alpha·√N − beta·N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
#[serde(deny_unknown_fields)]
pub struct FadeModel<T> {
    /// Initial capacity, %.
    pub c0: T,
    /// Square-root coefficient, % per √cycle.
    pub alpha: T,
    /// Linear coefficient, % per cycle.
    pub beta: T,
}

impl<T: Scalar> FadeModel<T> {
    pub fn new(c0: T, alpha: T, beta: T) -> Result<Self, ElectrochemError> {
        let model = Self { c0, alpha, beta };
        model.validate()?;
        Ok(model)
    }

    /// Calibration for constant-current charging: 80 % after 10 000 cycles.
    pub fn constant_current() -> Self {
        Self {
            c0: lit(100.0),
            alpha: lit(0.1),
            beta: lit(1e-3),
        }
    }

    /// Calibration for pulsed charging.
    pub fn pulsed() -> Self {
        Self {
            c0: lit(100.0),
            alpha: lit(0.08),
            beta: lit(8e-4),
        }
    }

    pub fn validate(&self) -> Result<(), ElectrochemError> {
        let invalid = |field, value: T, bound| ElectrochemError::InvalidFade {
            field,
            value: to_f64(value),
            bound,
        };
        if !(self.c0 > T::zero()) || !self.c0.is_finite() {
            return Err(invalid("c0", self.c0, "must be > 0"));
        }
        if !(self.alpha >= T::zero()) || !self.alpha.is_finite() {
            return Err(invalid("alpha", self.alpha, "must be >= 0"));
        }
        if !(self.beta >= T::zero()) || !self.beta.is_finite() {
            return Err(invalid("beta", self.beta, "must be >= 0"));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for FadeModel<T> {
    fn default() -> Self {
        Self::constant_current()
    }
}

/// Retained capacity (%) after `n_cycles` equivalent cycles. Not clamped at zero.
pub fn capacity_retained<T: Scalar>(model: &FadeModel<T>, n_cycles: T) -> T {
    debug_assert!(n_cycles >= T::zero());
    model.c0 - model.alpha * n_cycles.sqrt() - model.beta * n_cycles
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CyclesToThreshold {
    At(u64),
    /// The model has no fade, so the threshold is never reached.
    Never,
}

/// Smallest whole cycle count whose retained capacity is at or below `threshold`.
pub fn cycles_to_capacity<T: Scalar>(
    model: &FadeModel<T>,
    threshold: T,
) -> Result<CyclesToThreshold, ElectrochemError> {
    model.validate()?;
    if !(threshold > T::zero() && threshold < model.c0) {
        return Err(ElectrochemError::InvalidThreshold {
            threshold: to_f64(threshold),
            c0: to_f64(model.c0),
        });
    }
    let (alpha, beta) = (model.alpha, model.beta);
    if alpha == T::zero() && beta == T::zero() {
        return Ok(CyclesToThreshold::Never);
    }
    // beta·s² + alpha·s − loss = 0 with s = √N.
    let loss = model.c0 - threshold;
    let root = if beta == T::zero() {
        loss / alpha
    } else {
        let four: T = lit(4.0);
        let two: T = lit(2.0);
        // Rationalized form avoids cancellation when beta is small.
        two * loss / (alpha + (alpha * alpha + four * beta * loss).sqrt())
    };
    let estimate = (root * root).ceil();
    let mut n = estimate.to_u64().unwrap_or(u64::MAX);

    // The closed form is exact up to round-off; settle the integer boundary
    // against the forward law so the two stay consistent.
    let at = |n: u64| capacity_retained(model, lit::<T>(n as f64));
    while n > 0 && at(n - 1) <= threshold {
        n -= 1;
    }
    while at(n) > threshold {
        n += 1;
    }
    Ok(CyclesToThreshold::At(n))
}
