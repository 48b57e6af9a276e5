//! Hamiltonian path integrals with local time scaling, worked out for a free
//! particle in plane polar coordinates.
//!
//! The crate is organised around the objects the scheme manipulates:
//!
//! * [`geometry`]: charts, metric data, the measure density and the scaling function.
//! * [`generators`]: pseudo-Hamiltonians and first-order slice actions.
//! * [`kernel`]: the unscaled canonical path integral, built from closed-form
//!   Gaussian momentum integrals and composed on coordinate grids.
//! * [`scaling`]: the scaled path integral after the pseudo-energy / pseudo-time
//!   reduction, and its Euclidean evaluation.
//! * [`schrod`]: finite-N replica of the short-time expansion that produces the
//!   Laplace–Beltrami Schrödinger operator.
//! * [`operators`]: finite-difference Hamiltonians and effective-potential extraction.
//! * [`oracle`]: exact free kernels used as references.
//!
//! All numerics are generic over [`Real`]; `f64` aliases are exported at the root.

pub mod error;
pub mod generators;
pub mod geometry;
pub mod grid;
pub mod kernel;
pub mod operators;
pub mod oracle;
pub mod probe;
pub mod quad;
pub mod scalar;
pub mod scaling;
pub mod schrod;
pub mod stats;

pub use error::{Error, Result};
pub use geometry::{Chart, ChartKind, MeasureDensity, Point2, ScalingFunction, Units};
pub use grid::{Axis, Grid2, Wavefunction};
pub use scalar::Real;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Double-precision point.
pub type Point = Point2<f64>;
/// Double-precision chart.
pub type Chart64 = Chart<f64>;
/// Double-precision grid.
pub type Grid = Grid2<f64>;
/// Double-precision wavefunction.
pub type Wave = Wavefunction<f64>;
/// Double-precision unit system.
pub type Units64 = Units<f64>;
