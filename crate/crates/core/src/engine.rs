//! Time-stepping pack simulator.
//!
//! Each cluster owns a diffusion grid and a lumped thermal/electrical state.
//! Per step the engine queries the charging protocol, splits the pack level
//! across active clusters by conductance, advances every grid (rested
//! clusters with zero flux), updates temperature, resistance, state of charge
//! and equivalent cycles, and periodically lets the rest scheduler reassign
//! clusters.
//!
//! Sign convention: the protocol level is positive when charging. Terminal
//! voltage functions take a discharge current, so the engine evaluates them
//! at `-level`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{make_grid, stable_dt, step_count, DiffusionError, DiffusionGrid};
use crate::electrochem::{
    capacity_retained, nernst_voltage, pack_specific_energy, ElectrochemError, FadeModel, NernstInput, PackComposition,
};
use crate::protocols::{
    cccv_level, flux_at, next_percussive_level, CccvState, CurrentProfile, FeedbackSample, PercussiveState,
    ProtocolError, ProtocolFamily,
};
use crate::scalar::{count, lit, to_f64, Scalar};
use crate::scheduler::{
    advance_time, schedule_step, ClusterId, ClusterState, EventKind, EventReason, Mode, ScheduleConstraints,
    SchedulerError, SchedulerEvent,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Electrochem(#[from] ElectrochemError),
    #[error(
        "pack voltage {voltage} V stayed below the {min_voltage} V floor with no feasible rest set \
         from t = {since} s to t = {time} s (grace {grace} s)"
    )]
    Infeasible {
        time: f64,
        since: f64,
        voltage: f64,
        min_voltage: f64,
        grace: f64,
    },
}

impl EngineError {
    fn config(field: impl Into<String>, message: impl ToString) -> Self {
        EngineError::Config {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chemistry {
    Energy,
    Power,
}

impl Chemistry {
    pub const ALL: [Chemistry; 2] = [Chemistry::Energy, Chemistry::Power];

    pub fn as_str(self) -> &'static str {
        match self {
            Chemistry::Energy => "energy",
            Chemistry::Power => "power",
        }
    }

    fn index(self) -> usize {
        match self {
            Chemistry::Energy => 0,
            Chemistry::Power => 1,
        }
    }
}

fn one<T: Scalar>() -> T {
    T::one()
}

/// Per-chemistry model constants. Electrical and thermal values are per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
#[serde(deny_unknown_fields)]
pub struct ChemistryParams<T> {
    /// Standard potential of one cell, V.
    pub standard_potential: T,
    pub n_electrons: u32,
    /// Cell open-circuit voltage is clamped to `[min, max]`, V.
    pub voltage_window: [T; 2],
    /// m² s⁻¹
    pub diffusivity: T,
    /// m
    pub electrode_thickness: T,
    pub grid_nodes: usize,
    #[serde(default)]
    pub initial_concentration: T,
    /// Surface flux produced by one unit of cluster current.
    #[serde(default = "one")]
    pub flux_per_current: T,
    /// Cluster resistance at or below the nominal temperature, Ω.
    pub base_resistance: T,
    /// Resistance rise per kelvin above nominal, Ω/K.
    #[serde(default)]
    pub resistance_temp_coeff: T,
    /// K
    pub nominal_temperature: T,
    /// Cluster heat capacity, J/K.
    pub thermal_mass: T,
    /// Newtonian cooling rate toward ambient, 1/s.
    pub cooling_rate: T,
    /// Reference charge of one cluster, in level·s (A·s for currents).
    pub capacity: T,
    #[serde(default = "FadeModel::constant_current")]
    pub fade_constant: FadeModel<T>,
    #[serde(default = "FadeModel::pulsed")]
    pub fade_pulsed: FadeModel<T>,
}

impl<T: Scalar> ChemistryParams<T> {
    pub fn fade_for(&self, family: ProtocolFamily) -> &FadeModel<T> {
        match family {
            ProtocolFamily::Constant => &self.fade_constant,
            ProtocolFamily::Pulsed => &self.fade_pulsed,
        }
    }

    pub fn resistance_at(&self, temperature: T) -> T {
        self.base_resistance + self.resistance_temp_coeff * (temperature - self.nominal_temperature).max(T::zero())
    }

    pub fn make_grid(&self) -> Result<DiffusionGrid<T>, DiffusionError> {
        make_grid(
            self.electrode_thickness,
            self.grid_nodes,
            self.diffusivity,
            self.initial_concentration,
        )
    }

    fn validate(&self, path: &str) -> Result<(), EngineError> {
        let field = |name: &str| format!("{path}.{name}");
        let positive = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(EngineError::config(field(name), format!("{v} must be > 0")))
            }
        };
        positive("standard_potential", self.standard_potential)?;
        positive("diffusivity", self.diffusivity)?;
        positive("electrode_thickness", self.electrode_thickness)?;
        positive("flux_per_current", self.flux_per_current)?;
        positive("base_resistance", self.base_resistance)?;
        positive("nominal_temperature", self.nominal_temperature)?;
        positive("thermal_mass", self.thermal_mass)?;
        positive("capacity", self.capacity)?;
        if self.n_electrons < 1 {
            return Err(EngineError::config(field("n_electrons"), "must be >= 1"));
        }
        let [lo, hi] = self.voltage_window;
        if !(lo > T::zero() && lo < hi && hi.is_finite()) {
            return Err(EngineError::config(
                field("voltage_window"),
                format!("[{lo}, {hi}] must satisfy 0 < min < max"),
            ));
        }
        if !(self.resistance_temp_coeff >= T::zero()) {
            return Err(EngineError::config(field("resistance_temp_coeff"), "must be >= 0"));
        }
        if !(self.cooling_rate >= T::zero()) {
            return Err(EngineError::config(field("cooling_rate"), "must be >= 0"));
        }
        self.make_grid().map_err(|e| EngineError::config(field("grid"), e))?;
        self.fade_constant
            .validate()
            .map_err(|e| EngineError::config(field("fade_constant"), e))?;
        self.fade_pulsed
            .validate()
            .map_err(|e| EngineError::config(field("fade_pulsed"), e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
#[serde(deny_unknown_fields)]
pub struct Chemistries<T> {
    pub energy: ChemistryParams<T>,
    pub power: ChemistryParams<T>,
}

impl<T> Chemistries<T> {
    pub fn get(&self, chemistry: Chemistry) -> &ChemistryParams<T> {
        match chemistry {
            Chemistry::Energy => &self.energy,
            Chemistry::Power => &self.power,
        }
    }
}

fn default_count() -> usize {
    1
}

/// A run of identical clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
#[serde(deny_unknown_fields)]
pub struct ClusterGroup<T> {
    pub chemistry: Chemistry,
    #[serde(default = "default_count")]
    pub count: usize,
    pub cells_per_cluster: u32,
    pub initial_soc: T,
    /// Defaults to the ambient temperature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_temperature: Option<T>,
}

/// Maps state of charge to the Nernst reaction quotient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SocQuotient {
    /// `Q = (1 − soc)/soc`: voltage rises on charge and falls on discharge.
    #[default]
    DischargeRatio,
    /// `Q = soc/(1 − soc)`.
    ChargeRatio,
}

fn default_soc_clamp<T: Scalar>() -> T {
    lit(1e-6)
}

fn default_series_strings() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
#[serde(deny_unknown_fields)]
pub struct Electrical<T> {
    /// Identical parallel banks connected in series.
    #[serde(default = "default_series_strings")]
    pub series_strings: u32,
    #[serde(default)]
    pub soc_quotient: SocQuotient,
    /// SOC is kept inside `[clamp, 1 − clamp]` when forming the quotient.
    #[serde(default = "default_soc_clamp")]
    pub soc_clamp: T,
}

impl<T: Scalar> Default for Electrical<T> {
    fn default() -> Self {
        Self {
            series_strings: 1,
            soc_quotient: SocQuotient::default(),
            soc_clamp: default_soc_clamp(),
        }
    }
}

impl<T: Scalar> Electrical<T> {
    pub fn quotient(&self, soc: T) -> T {
        let s = soc.max(self.soc_clamp).min(T::one() - self.soc_clamp);
        match self.soc_quotient {
            SocQuotient::DischargeRatio => (T::one() - s) / s,
            SocQuotient::ChargeRatio => s / (T::one() - s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
#[serde(deny_unknown_fields)]
pub struct Environment<T> {
    /// K
    pub ambient_temperature: T,
}

fn default_safety<T: Scalar>() -> T {
    lit(0.5)
}

fn default_interval<T: Scalar>() -> T {
    T::one()
}

fn default_trace_every() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
#[serde(deny_unknown_fields)]
pub struct Timing<T> {
    /// s
    pub total_time: T,
    /// Fraction of the explicit stability bound used as the timestep.
    #[serde(default = "default_safety")]
    pub dt_safety: T,
    /// Time between scheduler decisions, s. Rounded to whole steps (at least one).
    #[serde(default = "default_interval")]
    pub scheduler_interval: T,
    /// How long an infeasible low-voltage condition is tolerated, s.
    #[serde(default)]
    pub infeasibility_grace: T,
    /// Record every n-th step in the trace.
    #[serde(default = "default_trace_every")]
    pub trace_every: usize,
}

/// How equivalent cycles accrue from throughput.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleRule {
    /// `|I|·dt / (2·C_ref)`: a full charge plus discharge counts as one cycle.
    #[default]
    Throughput,
    /// `max(I, 0)·dt / C_ref`: a full charge counts as one cycle.
    ChargeOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Accounting {
    #[serde(default)]
    pub cycles: CycleRule,
}

/// Full description of a simulation run.
///
/// Top-level keys are checked by the config loader, which also owns the
/// optional `sweep` block; every nested section rejects unknown keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct PackConfig<T> {
    pub composition: PackComposition<T>,
    pub chemistry: Chemistries<T>,
    pub clusters: Vec<ClusterGroup<T>>,
    pub protocol: CurrentProfile<T>,
    pub constraints: ScheduleConstraints<T>,
    pub timing: Timing<T>,
    pub environment: Environment<T>,
    #[serde(default)]
    pub electrical: Electrical<T>,
    #[serde(default)]
    pub accounting: Accounting,
}

impl<T: Scalar> PackConfig<T> {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.composition.validate().map_err(|e| match e {
            ElectrochemError::InvalidComposition { field, value, bound } => {
                EngineError::config(format!("composition.{field}"), format!("{value} {bound}"))
            }
            other => EngineError::config("composition", other),
        })?;
        self.chemistry.energy.validate("chemistry.energy")?;
        self.chemistry.power.validate("chemistry.power")?;
        if self.clusters.is_empty() {
            return Err(EngineError::config(
                "clusters",
                "at least one cluster group is required",
            ));
        }
        for (i, g) in self.clusters.iter().enumerate() {
            if g.count < 1 {
                return Err(EngineError::config(format!("clusters.{i}.count"), "must be >= 1"));
            }
            if g.cells_per_cluster < 1 {
                return Err(EngineError::config(
                    format!("clusters.{i}.cells_per_cluster"),
                    "must be >= 1",
                ));
            }
            if !(g.initial_soc >= T::zero() && g.initial_soc <= T::one()) {
                return Err(EngineError::config(
                    format!("clusters.{i}.initial_soc"),
                    format!("{} must lie in [0, 1]", g.initial_soc),
                ));
            }
            if let Some(t) = g.initial_temperature {
                if !(t > T::zero()) {
                    return Err(EngineError::config(
                        format!("clusters.{i}.initial_temperature"),
                        "must be > 0",
                    ));
                }
            }
        }
        self.protocol
            .validate()
            .map_err(|e| EngineError::config("protocol", e))?;
        self.constraints
            .validate()
            .map_err(|e| EngineError::config("constraints", e))?;
        let n = self.cluster_count();
        if n < self.constraints.min_active_clusters {
            return Err(EngineError::config(
                "constraints.min_active_clusters",
                format!(
                    "{} exceeds the {n} clusters in the pack",
                    self.constraints.min_active_clusters
                ),
            ));
        }
        let t = &self.timing;
        if !(t.total_time > T::zero() && t.total_time.is_finite()) {
            return Err(EngineError::config("timing.total_time", "must be > 0"));
        }
        if !(t.dt_safety > T::zero() && t.dt_safety <= T::one()) {
            return Err(EngineError::config(
                "timing.dt_safety",
                format!("{} must lie in (0, 1]", t.dt_safety),
            ));
        }
        if !(t.scheduler_interval > T::zero()) {
            return Err(EngineError::config("timing.scheduler_interval", "must be > 0"));
        }
        if !(t.infeasibility_grace >= T::zero()) {
            return Err(EngineError::config("timing.infeasibility_grace", "must be >= 0"));
        }
        if t.trace_every < 1 {
            return Err(EngineError::config("timing.trace_every", "must be >= 1"));
        }
        if !(self.environment.ambient_temperature > T::zero()) {
            return Err(EngineError::config("environment.ambient_temperature", "must be > 0"));
        }
        let e = &self.electrical;
        if e.series_strings < 1 {
            return Err(EngineError::config("electrical.series_strings", "must be >= 1"));
        }
        if !(e.soc_clamp > T::zero() && e.soc_clamp < lit(0.5)) {
            return Err(EngineError::config("electrical.soc_clamp", "must lie in (0, 0.5)"));
        }
        Ok(())
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.iter().map(|g| g.count).sum()
    }

    /// Chemistry of every cluster, in id order.
    pub fn cluster_chemistries(&self) -> Vec<Chemistry> {
        self.clusters
            .iter()
            .flat_map(|g| std::iter::repeat_n(g.chemistry, g.count))
            .collect()
    }

    /// Timestep: the safety factor times the tightest stability bound among
    /// the chemistries present in the pack.
    pub fn timestep(&self) -> Result<T, EngineError> {
        let mut dt: Option<T> = None;
        for chem in Chemistry::ALL {
            if !self.clusters.iter().any(|g| g.chemistry == chem) {
                continue;
            }
            let grid = self.chemistry.get(chem).make_grid()?;
            let candidate = stable_dt(&grid, self.timing.dt_safety)?;
            dt = Some(match dt {
                Some(d) if d <= candidate => d,
                _ => candidate,
            });
        }
        dt.ok_or_else(|| EngineError::config("clusters", "no clusters defined"))
    }

    pub fn pack_specific_energy(&self) -> Result<T, EngineError> {
        Ok(pack_specific_energy(&self.composition)?)
    }
}

/// Open-circuit voltage of one cell, clamped to the chemistry's window.
pub fn cell_ocv<T: Scalar>(
    params: &ChemistryParams<T>,
    electrical: &Electrical<T>,
    soc: T,
    temperature: T,
) -> Result<T, ElectrochemError> {
    let v = nernst_voltage(&NernstInput {
        e_standard: params.standard_potential,
        temperature,
        n_electrons: params.n_electrons,
        q: electrical.quotient(soc),
    })?;
    let [lo, hi] = params.voltage_window;
    Ok(v.max(lo).min(hi))
}

/// Electrical view of the pack used for terminal voltage and current split.
#[derive(Debug, Clone)]
pub struct VoltageModel<'a, T> {
    pub chemistries: &'a Chemistries<T>,
    pub electrical: &'a Electrical<T>,
    /// Chemistry of each cluster, indexed by cluster id.
    pub cluster_chemistry: &'a [Chemistry],
}

impl<T: Scalar> VoltageModel<'_, T> {
    fn params(&self, c: &ClusterState<T>) -> &ChemistryParams<T> {
        self.chemistries.get(self.cluster_chemistry[c.id.0 as usize])
    }

    /// Open-circuit voltage of one cluster (cells in series).
    pub fn cluster_ocv(&self, c: &ClusterState<T>) -> T {
        let cell = cell_ocv(self.params(c), self.electrical, c.soc, c.temperature)
            .expect("cluster state validated by the engine");
        count::<T>(c.cells_in_cluster as usize) * cell
    }

    /// Thevenin equivalent `(OCV, R)` of the active clusters as seen at the pack terminals.
    pub fn thevenin(&self, active: &[&ClusterState<T>]) -> (T, T) {
        let strings = count::<T>(self.electrical.series_strings as usize);
        let conductance: T = active.iter().map(|c| T::one() / c.internal_resistance).sum();
        let weighted: T = active.iter().map(|c| self.cluster_ocv(c) / c.internal_resistance).sum();
        (strings * weighted / conductance, strings / conductance)
    }

    /// Terminal voltage of the pack when `discharge_current` is drawn.
    ///
    /// Active clusters form a parallel bank. The current splits by
    /// conductance, so each cluster sits at `OCV_k − I_k·R_k` and the bank
    /// voltage is their conductance-weighted mean; `series_strings` identical
    /// banks add in series. Returns −∞ when nothing is active.
    pub fn pack_voltage(&self, active: &[&ClusterState<T>], discharge_current: T) -> T {
        if active.is_empty() {
            return T::neg_infinity();
        }
        let conductance: T = active.iter().map(|c| T::one() / c.internal_resistance).sum();
        let shares = split_current(active.iter().map(|c| c.internal_resistance), discharge_current);
        let mut weighted = T::zero();
        for (c, i_k) in active.iter().zip(shares) {
            let v_k = self.cluster_ocv(c) - i_k * c.internal_resistance;
            weighted += v_k / c.internal_resistance;
        }
        count::<T>(self.electrical.series_strings as usize) * weighted / conductance
    }
}

/// Splits `total` across parallel branches in proportion to conductance.
///
/// The branch with the smallest conductance (the last one on ties) takes the
/// remainder. The other shares then add up to at least half of `total`, so
/// the remainder is computed without rounding and the remainder plus the
/// in-order sum of the other shares equals `total` exactly.
pub fn split_current<T: Scalar>(resistances: impl Iterator<Item = T> + Clone, total: T) -> Vec<T> {
    let conductance: T = resistances.clone().map(|r| T::one() / r).sum();
    let mut shares: Vec<T> = resistances
        .clone()
        .map(|r| total * ((T::one() / r) / conductance))
        .collect();
    if let Some(sink) = remainder_branch(resistances) {
        let assigned: T = shares
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != sink)
            .map(|(_, s)| *s)
            .sum();
        shares[sink] = total - assigned;
    }
    shares
}

/// Index of the branch that absorbs rounding in [`split_current`].
pub fn remainder_branch<T: Scalar>(resistances: impl Iterator<Item = T>) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, r) in resistances.enumerate() {
        if best.is_none_or(|(_, b)| r >= b) {
            best = Some((i, r));
        }
    }
    best.map(|(i, _)| i)
}

/// Adds the equivalent cycles contributed by `level` over `dt`.
pub fn equivalent_cycles<T: Scalar>(running: T, level: T, dt: T, reference_capacity: T, rule: CycleRule) -> T {
    debug_assert!(reference_capacity > T::zero());
    let added = match rule {
        CycleRule::Throughput => level.abs() * dt / (lit::<T>(2.0) * reference_capacity),
        CycleRule::ChargeOnly => level.max(T::zero()) * dt / reference_capacity,
    };
    running + added
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub id: ClusterId,
    pub chemistry: Chemistry,
    pub cells: u32,
}

/// Per-cluster time series, one entry per recorded step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ClusterSeries<T> {
    pub mode: Vec<Mode>,
    pub current: Vec<T>,
    pub surface_concentration: Vec<T>,
    pub temperature: Vec<T>,
    pub resistance: Vec<T>,
    pub soc: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct SimulationTrace<T> {
    pub dt: T,
    pub steps: usize,
    pub protocol: String,
    pub clusters: Vec<ClusterInfo>,
    /// Step start times, s.
    pub time: Vec<T>,
    pub applied_level: Vec<T>,
    pub pack_voltage: Vec<T>,
    pub cluster_series: Vec<ClusterSeries<T>>,
    /// Equivalent cycles per chemistry, `[energy, power]`.
    pub equivalent_cycles: Vec<[T; 2]>,
    /// Retained capacity per chemistry, `[energy, power]`, %.
    pub retained_capacity: Vec<[T; 2]>,
    pub events: Vec<SchedulerEvent<T>>,
    pub peak_surface_concentration: T,
    pub charge_complete_at: Option<T>,
    pub final_clusters: Vec<ClusterState<T>>,
}

impl<T: Scalar> SimulationTrace<T> {
    pub fn rest_event_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Rest).count()
    }

    pub fn total_rest_time(&self) -> T {
        self.final_clusters.iter().map(|c| c.cumulative_rest_time).sum()
    }

    pub fn final_capacity(&self) -> Option<[T; 2]> {
        self.retained_capacity.last().copied()
    }
}

enum Controller<T> {
    Stateless,
    Percussive(PercussiveState<T>),
    Cccv(CccvState),
}

/// Runs a full simulation.
pub fn run_simulation<T: Scalar>(config: &PackConfig<T>) -> Result<SimulationTrace<T>, EngineError> {
    config.validate()?;
    let dt = config.timestep()?;
    let steps = step_count(config.timing.total_time, dt);
    let chemistry_of = config.cluster_chemistries();
    let ambient = config.environment.ambient_temperature;
    let family = config.protocol.family();
    let constraints = &config.constraints;
    let rule = config.accounting.cycles;

    let mut clusters: Vec<ClusterState<T>> = Vec::with_capacity(chemistry_of.len());
    let mut grids: Vec<DiffusionGrid<T>> = Vec::with_capacity(chemistry_of.len());
    let mut infos = Vec::with_capacity(chemistry_of.len());
    for group in &config.clusters {
        let params = config.chemistry.get(group.chemistry);
        for _ in 0..group.count {
            let id = clusters.len() as u32;
            let temperature = group.initial_temperature.unwrap_or(ambient);
            clusters.push(ClusterState::new(
                id,
                group.cells_per_cluster,
                group.initial_soc,
                temperature,
                params.resistance_at(temperature),
            ));
            grids.push(params.make_grid()?);
            infos.push(ClusterInfo {
                id: ClusterId(id),
                chemistry: group.chemistry,
                cells: group.cells_per_cluster,
            });
        }
    }

    // Reference charge per chemistry for cycle accounting.
    let mut reference = [T::zero(); 2];
    for chem in &chemistry_of {
        reference[chem.index()] += config.chemistry.get(*chem).capacity;
    }
    let fades = [
        *config.chemistry.energy.fade_for(family),
        *config.chemistry.power.fade_for(family),
    ];

    let model = VoltageModel {
        chemistries: &config.chemistry,
        electrical: &config.electrical,
        cluster_chemistry: &chemistry_of,
    };

    let mut controller = match &config.protocol {
        CurrentProfile::Percussive(p) => Controller::Percussive(PercussiveState::new(p)),
        CurrentProfile::Cccv(_) => Controller::Cccv(CccvState::default()),
        _ => Controller::Stateless,
    };

    let interval_steps = (config.timing.scheduler_interval / dt)
        .round()
        .to_usize()
        .unwrap_or(1)
        .max(1);
    let n = clusters.len();
    let capacity_hint = steps / config.timing.trace_every + 1;
    let mut trace = SimulationTrace {
        dt,
        steps,
        protocol: config.protocol.name().to_string(),
        clusters: infos,
        time: Vec::with_capacity(capacity_hint),
        applied_level: Vec::with_capacity(capacity_hint),
        pack_voltage: Vec::with_capacity(capacity_hint),
        cluster_series: vec![ClusterSeries::default(); n],
        equivalent_cycles: Vec::with_capacity(capacity_hint),
        retained_capacity: Vec::with_capacity(capacity_hint),
        events: Vec::new(),
        peak_surface_concentration: T::neg_infinity(),
        charge_complete_at: None,
        final_clusters: Vec::new(),
    };

    let mut cycles = [T::zero(); 2];
    let mut scratch = Vec::new();
    let mut currents = vec![T::zero(); n];
    let mut last_voltage: Option<T> = None;
    let mut infeasible_since: Option<T> = None;

    for k in 0..steps {
        let t = count::<T>(k) * dt;
        let active: Vec<&ClusterState<T>> = clusters.iter().filter(|c| c.is_active()).collect();

        // (1) protocol level
        let level = match (&config.protocol, &mut controller) {
            (CurrentProfile::Percussive(p), Controller::Percussive(state)) => {
                let hottest = hottest(&active);
                let idx = hottest.id.0 as usize;
                let sample = FeedbackSample {
                    time: t,
                    impedance: hottest.internal_resistance,
                    temperature: hottest.temperature,
                    surface_concentration: Some(grids[idx].surface()),
                };
                let (level, next) = next_percussive_level(p, state, &sample)?;
                *state = next;
                level
            }
            (CurrentProfile::Cccv(p), Controller::Cccv(state)) => {
                let (ocv, r) = model.thevenin(&active);
                let measured = last_voltage.unwrap_or(ocv);
                let (out, next) = cccv_level(p, state, measured, ocv, r);
                *state = next;
                if out.complete && trace.charge_complete_at.is_none() {
                    trace.charge_complete_at = Some(t);
                }
                out.level
            }
            (profile, _) => flux_at(profile, t)?,
        };

        // (2) current split across active clusters
        let shares = split_current(active.iter().map(|c| c.internal_resistance), level);
        currents.iter_mut().for_each(|i| *i = T::zero());
        for (c, share) in active.iter().zip(&shares) {
            currents[c.id.0 as usize] = *share;
        }
        let voltage = model.pack_voltage(&active, -level);
        drop(active);

        // (3)-(5) per-cluster physics
        let mut throughput = [T::zero(); 2];
        for (idx, cluster) in clusters.iter_mut().enumerate() {
            let chem = chemistry_of[idx];
            let params = config.chemistry.get(chem);
            let current = currents[idx];
            grids[idx].advance(current * params.flux_per_current, dt, &mut scratch)?;
            let surface = grids[idx].surface();
            if surface > trace.peak_surface_concentration {
                trace.peak_surface_concentration = surface;
            }

            let heating = current * current * cluster.internal_resistance / params.thermal_mass;
            let cooling = params.cooling_rate * (cluster.temperature - ambient);
            cluster.temperature += dt * (heating - cooling);
            cluster.internal_resistance = params.resistance_at(cluster.temperature);
            cluster.soc = (cluster.soc + current * dt / params.capacity)
                .max(T::zero())
                .min(T::one());
            throughput[chem.index()] += match rule {
                CycleRule::Throughput => current.abs(),
                CycleRule::ChargeOnly => current.max(T::zero()),
            };
        }
        for chem in Chemistry::ALL {
            let i = chem.index();
            if reference[i] > T::zero() {
                cycles[i] = equivalent_cycles(cycles[i], throughput[i], dt, reference[i], rule);
            }
        }
        let retained = [
            capacity_retained(&fades[0], cycles[0]),
            capacity_retained(&fades[1], cycles[1]),
        ];

        advance_time(&mut clusters, dt);

        // (6) scheduler
        if (k + 1) % interval_steps == 0 {
            let outcome = schedule_step(&mut clusters, constraints, t, |act| model.pack_voltage(act, -level))?;
            if outcome.infeasible && infeasible_since.is_none() {
                infeasible_since = Some(t);
            }
            trace.events.extend(outcome.events);
        }
        if voltage >= constraints.min_pack_voltage {
            infeasible_since = None;
        } else if let Some(since) = infeasible_since {
            if t - since > config.timing.infeasibility_grace {
                return Err(EngineError::Infeasible {
                    time: to_f64(t),
                    since: to_f64(since),
                    voltage: to_f64(voltage),
                    min_voltage: to_f64(constraints.min_pack_voltage),
                    grace: to_f64(config.timing.infeasibility_grace),
                });
            }
        }
        last_voltage = Some(voltage);

        if k % config.timing.trace_every == 0 {
            trace.time.push(t);
            trace.applied_level.push(level);
            trace.pack_voltage.push(voltage);
            trace.equivalent_cycles.push(cycles);
            trace.retained_capacity.push(retained);
            for (idx, series) in trace.cluster_series.iter_mut().enumerate() {
                let c = &clusters[idx];
                series.mode.push(c.mode);
                series.current.push(currents[idx]);
                series.surface_concentration.push(grids[idx].surface());
                series.temperature.push(c.temperature);
                series.resistance.push(c.internal_resistance);
                series.soc.push(c.soc);
            }
        }
    }

    let end = count::<T>(steps) * dt;
    for c in clusters.iter().filter(|c| c.mode == Mode::Rest) {
        trace.events.push(SchedulerEvent {
            time: end,
            cluster: c.id,
            kind: EventKind::EndOfRun,
            reason: EventReason::EndOfRun,
            score: crate::scheduler::stress_score(c, constraints),
        });
    }
    if steps == 0 {
        trace.peak_surface_concentration = grids.iter().map(|g| g.surface()).fold(T::neg_infinity(), T::max);
    }
    trace.final_clusters = clusters;
    Ok(trace)
}

/// Hottest cluster, lowest id on ties.
fn hottest<'a, T: Scalar>(active: &[&'a ClusterState<T>]) -> &'a ClusterState<T> {
    let mut best = active[0];
    for c in &active[1..] {
        if c.temperature > best.temperature {
            best = c;
        }
    }
    best
}

/// Parameters matching the reference diffusion setup: 50 µm electrode,
/// 100 nodes, D = 1e-13 m²/s, starting empty.
pub fn reference_chemistry<T: Scalar>() -> ChemistryParams<T> {
    ChemistryParams {
        standard_potential: lit(3.2),
        n_electrons: 1,
        voltage_window: [lit(2.0), lit(4.0)],
        diffusivity: lit(1e-13),
        electrode_thickness: lit(50e-6),
        grid_nodes: 100,
        initial_concentration: T::zero(),
        flux_per_current: T::one(),
        base_resistance: lit(0.02),
        resistance_temp_coeff: lit(2e-4),
        nominal_temperature: lit(298.15),
        thermal_mass: lit(1000.0),
        cooling_rate: lit(0.01),
        capacity: lit(36_000.0),
        fade_constant: FadeModel::constant_current(),
        fade_pulsed: FadeModel::pulsed(),
    }
}

/// Power-module counterpart of [`reference_chemistry`]: lower voltage window,
/// faster transport.
pub fn reference_power_chemistry<T: Scalar>() -> ChemistryParams<T> {
    ChemistryParams {
        standard_potential: lit(2.0),
        voltage_window: [lit(1.5), lit(2.5)],
        diffusivity: lit(1e-12),
        base_resistance: lit(0.01),
        capacity: lit(18_000.0),
        ..reference_chemistry()
    }
}

/// Single energy cluster under a constant level of 2.0 for 200 s with no
/// rest activity: the engine equivalent of the standalone diffusion example.
pub fn reference_config<T: Scalar>() -> PackConfig<T> {
    PackConfig {
        composition: PackComposition {
            e_energy: lit(250.0),
            e_power: lit(150.0),
            power_fraction: T::zero(),
        },
        chemistry: Chemistries {
            energy: reference_chemistry(),
            power: reference_power_chemistry(),
        },
        clusters: vec![ClusterGroup {
            chemistry: Chemistry::Energy,
            count: 1,
            cells_per_cluster: 12,
            initial_soc: lit(0.2),
            initial_temperature: None,
        }],
        protocol: CurrentProfile::Constant { level: lit(2.0) },
        constraints: ScheduleConstraints {
            resistance_threshold: lit(0.05),
            temperature_threshold: lit(333.15),
            min_active_clusters: 1,
            min_pack_voltage: T::zero(),
            max_rest_fraction: lit(0.5),
            min_rest_duration: lit(30.0),
            min_active_duration: lit(30.0),
        },
        timing: Timing {
            total_time: lit(200.0),
            dt_safety: lit(0.5),
            scheduler_interval: lit(10.0),
            infeasibility_grace: lit(60.0),
            trace_every: 1,
        },
        environment: Environment {
            ambient_temperature: lit(298.15),
        },
        electrical: Electrical::default(),
        accounting: Accounting::default(),
    }
}
