//! Stationary covariance functions from spectral densities.
//!
//! This crate evaluates covariance functions `K(r)`, their parameter
//! derivatives, dense covariance matrices, and Gaussian log-likelihoods
//! directly from a user-specified spectral density `S(omega)` via the real
//! Fourier integral
//!
//! ```text
//! K(r) = 2 * int_0^inf S(omega) cos(2 pi omega r) d omega.
//! ```
//!
//! The integral is discretized by adaptive panel Gaussian quadrature sized by
//! a Nyquist heuristic, each panel sum is evaluated at all unconverged
//! distances at once by a type-3 nonuniform FFT, and per-distance error is
//! controlled by rule-doubling quadrature estimates plus analytic truncation
//! bounds on the spectral tail.
//!
//! Module map:
//!
//! * [`quadrature`] - Gauss-Legendre, Gauss-Jacobi (power weight), trapezoid.
//! * [`models`] - the catalog of parametric spectral densities.
//! * [`nufft`] - type-3 nonuniform discrete Fourier summation.
//! * [`truncation`] - analytic tail bounds and the incomplete gamma function.
//! * [`engine`] - the adaptive panel-integration driver.
//! * [`oracles`] - independent closed-form and extended-precision references.
//! * [`gp`] - covariance assembly, likelihoods, Fisher scoring, sampling.

pub mod engine;
pub mod error;
pub mod gp;
pub mod models;
pub mod nufft;
pub mod oracles;
pub mod quadrature;
pub mod truncation;

pub use error::{Error, Result};
