//! Learning curves and phase diagrams for teacher-student perceptrons.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: overlap/error conversion and the version-space survival law.
//! - [`entropy_energy`]: entropy densities, the data energy and the annealed
//!   log-volume density whose maximiser is the typical generalization error.
//! - [`solvers`]: rightmost entropy/energy crossings, annealed maximisers,
//!   first-order conditions, critical loads and learning curves.
//! - [`bounds`]: Hoeffding, uniform and finite-class error bounds, plus the
//!   refined error-spectrum bound.
//! - [`gibbs_sim`]: exact zero-temperature Gibbs learning by enumeration and
//!   Metropolis dynamics, empirical learning curves and `(alpha, tau)` maps.
//! - [`multilayer`]: committee, tree parity and reversed-wedge machines.
//! - [`linear_reg`]: ridge and truncated-SVD least squares.
//! - [`vsdl`]: label-noise / early-stopping knobs mapped onto `(alpha, tau)`.
//!
//! Generalization errors and overlaps are newtypes ([`GenError`],
//! [`Overlap`]); volumes are kept in log space throughout.

pub mod bounds;
pub mod entropy_energy;
pub mod error;
pub mod geometry;
pub mod gibbs_sim;
pub mod linear_reg;
pub mod multilayer;
pub mod output;
pub mod solvers;
pub mod vsdl;

mod numeric;
mod seeds;

pub use entropy_energy::{EntropyModel, EntropyTable, LoadParameter};
pub use error::{Error, Result};
pub use geometry::{GenError, Overlap};

/// Version string embedded in every output's provenance block.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
