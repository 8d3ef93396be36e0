// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod error;
pub mod evolution;
pub mod field;
pub mod functionals;
pub mod grid;
pub mod ground_state;
pub mod interp;
pub mod params;
pub mod pseudoconformal;
pub mod tridiag;
pub mod virial;

pub use error::{Error, Result};
pub use field::ComplexRadialField;
pub use grid::{build_grid, GridDescriptor, MeshKind, RadialGrid};
pub use params::PhysicalParams;
