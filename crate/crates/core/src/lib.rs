//! Reversible two-tissue compartment model: forward simulation for
//! polyexponential plasma inputs, a Runge–Kutta reference solver,
//! exponential-polynomial algebra, identifiability checks and joint
//! multi-region estimation without a measured plasma input.

// `!(x > y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod identifiability;
pub mod io;
pub mod model;
pub mod oracle;
pub mod polyexp;
pub mod quadrature;

pub use error::{Error, Result};
pub use model::{Configuration, InputTerm, KineticParams, MixingModel, PolyexpInput, Region, TacTable};
