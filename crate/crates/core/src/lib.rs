//! Numerical laboratory for lattice Gaussian free fields, their integer-valued and
//! periodically weighted variants, the Villain model and the multiscale charge expansion.

pub mod density;
pub mod duality;
pub mod ensemble;
pub mod error;
pub mod fields;
pub mod green;
pub mod lattice;
pub mod spinwave;
pub mod verify;
pub mod weights;

pub use error::{Error, Result};
