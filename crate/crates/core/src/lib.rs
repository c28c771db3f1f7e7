//! Dual-chemistry battery pack simulator.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases. The command-line
//! front end and its file formats run on `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diffusion;
pub mod electrochem;
pub mod engine;
pub mod protocols;
pub mod scalar;
pub mod scheduler;

pub use scalar::Scalar;

pub type PackCompositionF64 = electrochem::PackComposition<f64>;
pub type NernstInputF64 = electrochem::NernstInput<f64>;
pub type FadeModelF64 = electrochem::FadeModel<f64>;
pub type FadeModelF32 = electrochem::FadeModel<f32>;

pub type DiffusionGridF64 = diffusion::DiffusionGrid<f64>;
pub type DiffusionGridF32 = diffusion::DiffusionGrid<f32>;
pub type SurfaceTraceF64 = diffusion::SurfaceTrace<f64>;

pub type CurrentProfileF64 = protocols::CurrentProfile<f64>;
pub type PercussiveParamsF64 = protocols::PercussiveParams<f64>;
pub type FeedbackSampleF64 = protocols::FeedbackSample<f64>;

pub type ClusterStateF64 = scheduler::ClusterState<f64>;
pub type ScheduleConstraintsF64 = scheduler::ScheduleConstraints<f64>;

pub type PackConfigF64 = engine::PackConfig<f64>;
pub type PackConfigF32 = engine::PackConfig<f32>;
pub type SimulationTraceF64 = engine::SimulationTrace<f64>;
pub type SimulationTraceF32 = engine::SimulationTrace<f32>;
