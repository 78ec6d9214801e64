//! Log-concave MCMC toolkit: exact Gibbs, Hit-and-Run and
//! Metropolis-within-Gibbs kernels together with the closed-form Gaussian
//! calculus and numerical verification suites for their contraction rates.

pub mod ars;
pub mod blocks;
pub mod error;
pub mod gauss;
pub mod randmat;
pub mod rng;
pub mod samplers;
pub mod targets;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
