//! Discrete divergence-form operators `-div A∇` on cubes: assembly, spectra,
//! explicit constants, and executable checks of unique-continuation, lifting,
//! Wegner, scaling and mollification inequalities.

pub mod bounds;
pub mod error;
pub mod fields;
pub mod lattice;
pub mod operator;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use fields::{AlloyModel, MatrixField};
pub use lattice::{Boundary, EquidistributedSeq, Grid, SubsetMask};
pub use operator::DiscreteOperator;
pub use spectral::Spectrum;
