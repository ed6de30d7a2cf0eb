//! Numerical toolkit for β-ensembles with Freud weights |x|^p.

pub mod asymptotics;
pub mod chebyshev;
pub mod equilibrium;
pub mod error;
pub mod harness;
pub mod master_op;
pub mod quadrature;
pub mod sampler;
pub mod special_fn;
pub mod stieltjes;

pub use error::{Error, Result};
