//! Simulation and verification toolkit for the stochastic generalized
//! Burgers-Huxley equation on the unit interval with Dirichlet boundary
//! values and multiplicative space-time white noise.

pub mod analysis;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod malliavin;
pub mod model;
pub mod noise;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{SpatialGrid, TimeGrid};
pub use kernel::{CellSources, Convolver, DenseWindow, KernelConfig, KernelTable};
pub use model::{InitialCondition, KernelConvention, ModelParams, NoiseCoefficient, NoisePreset, TruncationLevel};
pub use noise::{walsh_integral, NoiseSheet, ProjectedWiener};
pub use solver::{FieldPath, GalerkinConfig, MildSystem, PicardConfig};
