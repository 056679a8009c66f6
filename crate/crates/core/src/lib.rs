//! Worldline Monte Carlo estimation of Euclidean propagators `K(x, y; t)`.
//!
//! Unit loops are Brownian bridges on `[0, 1]` generated by one of three
//! equivalent algorithms ([`loopgen`]). They are rescaled to physical paths
//! between the endpoints, a potential's line integral is evaluated along each
//! path ([`potentials`]), and the averaged weights give the kernel
//! ([`estimator`]). [`analytic`] holds reference solutions and [`analysis`]
//! turns kernel scans into energies and goodness-of-fit diagnostics.

pub mod analysis;
pub mod analytic;
pub mod error;
pub mod estimator;
pub mod loopgen;
pub mod potentials;
pub mod rng;

pub use analysis::{EnergyFit, KernelSeries, Orientation, SeriesRow, TrajectoryReport};
pub use error::{Error, Result};
pub use estimator::{estimate_kernel, EnsembleConfig, Histogram, KernelEstimate};
pub use loopgen::{Algorithm, EnsembleSpec, LoopEnsemble, LoopSource, Provenance, UnitLoop};
pub use potentials::{LineIntegralMethod, PotentialSpec};
