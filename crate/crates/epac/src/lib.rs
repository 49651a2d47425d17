//! Effective potential analytic continuation (EPAC) for one-dimensional
//! quantum systems.
//!
//! The pipeline: a constrained-centroid path-integral Monte Carlo sampler
//! estimates the effective classical potential on a centroid grid
//! ([`sampler`]); quadrature turns it into the generating function and a
//! numerical Legendre transformation yields the standard effective potential
//! with its minimum position and effective frequency ([`transform`]); those
//! two parameters define a single-mode real-time position autocorrelation
//! function ([`correlation`], [`scheme`]). An exact grid eigensolver
//! ([`spectral`]) provides reference spectra, thermal averages, and exact
//! correlation functions, and closed harmonic forms live in [`analytic`].

pub mod analytic;
pub mod commands;
pub mod config;
pub mod correlation;
pub mod csvio;
pub mod error;
pub mod model;
pub mod numerics;
pub mod report;
pub mod sampler;
pub mod scheme;
pub mod spectral;
pub mod transform;

pub use error::{Error, Result};
pub use model::{decompose_linear, morse_taylor4, LinearDecomposition, Polynomial, PotentialModel, ThermoState};
