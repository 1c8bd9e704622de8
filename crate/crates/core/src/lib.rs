//! Smoothed-ℓ0 sparse recovery and a phase-transition benchmark harness.
//!
//! * [`linalg`]: QR-based pseudo-inverse and null-space projections.
//! * [`ensembles`]: seeded USE / Rademacher / Gaussian problem suites.
//! * [`solvers`]: SL0 STD, MIN, MSS (two implementations) and IHT, plus a
//!   name-keyed [`AlgorithmRegistry`](solvers::AlgorithmRegistry).
//! * [`phase`]: Monte Carlo grid sweeps and transition estimation.
//! * [`timing`]: reconstruction time below the transition.
//! * [`formats`], [`plot`]: CSV result files and SVG figures.

pub mod ensembles;
pub mod error;
pub mod formats;
pub mod linalg;
pub mod phase;
pub mod plot;
pub mod solvers;
pub mod timing;

pub use error::{Error, Result};
