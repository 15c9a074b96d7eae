//! Quickest real-time detection of a drift that appears in one coordinate of a
//! two-dimensional Brownian motion.
//!
//! The crate is organised bottom-up:
//!
//! - [`params`] problem parameters, validation and the running cost `L`;
//! - [`quad`] adaptive Gauss–Kronrod and Gauss–Legendre quadrature;
//! - [`mayer`] the Mayer loss function `M` and the ODE reduction behind it;
//! - [`onedim`] the one-dimensional problem (threshold `φ*` and value `V̂`);
//! - [`kernel`] sampling and transition densities of the posterior ratio
//!   process `Φ`, and the kernel `K(t; φ1, φ2)`;
//! - [`fredholm`] the stopping boundary `b` as the solution of a nonlinear
//!   Fredholm equation, and the value function built from it;
//! - [`pde`] an independent variational-inequality solver for the same
//!   free-boundary problem;
//! - [`simulate`] Monte Carlo estimation of the Bayes risk of detection rules.

pub mod error;
pub mod fredholm;
pub mod kernel;
pub mod mayer;
pub mod onedim;
pub mod params;
pub mod pde;
pub mod quad;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use params::{DerivedConstants, Point2, ProblemParams};
