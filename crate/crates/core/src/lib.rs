//! Transient drift-diffusion simulation of semiconductor devices.
//!
//! The crate discretizes the coupled Poisson and current-continuity
//! equations on layered 1D/2D boxes with a cell-centered finite-volume
//! scheme. Carrier fluxes use exponential fitting (Scharfetter–Gummel),
//! optionally corrected for Fermi–Dirac degeneracy. The electrostatic
//! potential is obtained from the nonlinear Poisson equation, either by
//! Newton's method or by a cut-off contraction iteration, and the carrier
//! equations are marched implicitly in time with Gummel decoupling.
//!
//! All quantities are nondimensional: potentials in thermal voltages,
//! densities in units of a reference density, lengths in units of a
//! reference length.

pub mod device;
pub mod error;
pub mod operators;
pub mod poisson;
pub mod quadrature;
pub mod recombination;
pub mod sparse;
pub mod statistics;
pub mod transient;

pub use device::{Device, DeviceSpec, Mesh};
pub use error::{Error, Result};
pub use statistics::{StatisticsModel, StatisticsPair};
