//! Numerical building blocks shared by every other module.

pub mod gauss;
pub mod linalg;
pub mod ode;
pub mod series;

pub use gauss::{gauss_legendre, gauss_legendre_on, integrate, Integral};
pub use ode::{OdeError, OdeOptions, OdeStats};
