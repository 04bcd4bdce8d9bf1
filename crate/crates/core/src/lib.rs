//! Simulation, fitting and tuning-plan toolkit for Stark-controlled
//! single-molecule quantum emitters.
//!
//! The crate models a quadratic-response (polarizability-dominated) emitter
//! under two-axis electric-field control with charge noise:
//!
//! - [`physics`]: Stark-shift paraboloid, spectral-diffusion square-root law
//!   and field-noise propagation.
//! - [`voigt`]: Voigt lineshape evaluation and FWHM combination.
//! - [`polarizability`]: sum-over-states estimate of the shift coefficient
//!   from electronic level data.
//! - [`sim`]: Monte-Carlo virtual laboratory — photon-count excitation scans,
//!   voltage sweeps and trapped-charge (OSS/EGOSS) dynamics.
//! - [`fit`]: Voigt / parabola / square-root-law fits with uncertainties.
//! - [`plan`]: minimal-spectral-diffusion field planning and EGOSS schedule
//!   synthesis.
//! - [`io`] and [`scenario`]: file formats and scripted multi-step runs.

pub mod error;
pub mod fit;
pub mod io;
pub mod physics;
pub mod plan;
pub mod scenario;
pub mod polarizability;
pub mod sim;
pub mod voigt;

pub use error::{Result, StarkError};
