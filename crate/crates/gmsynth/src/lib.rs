//! Hierarchical stochastic ground-motion modeling.
//!
//! The crate covers the full workflow for modulated filtered white-noise
//! ground-motion models:
//!
//! 1. ingest and preprocess recorded acceleration time series ([`records`]),
//! 2. fit the spline time-modulating function from the Husid curve
//!    ([`envelope`]),
//! 3. estimate the evolutionary power spectral density of a record and fit
//!    time-varying frequency-filter parameters and their trends ([`epsd`],
//!    [`spectral`]),
//! 4. simulate synthetic motions by spectral representation with high-pass
//!    filtering, energy correction, and corner-frequency optimization
//!    ([`synth`]),
//! 5. compute elastic and constant-ductility response spectra ([`response`]),
//! 6. model record-to-record parameter variability with marginal
//!    distributions and Gaussian/vine copulas ([`uq`]),
//! 7. score synthetic catalogs against recorded datasets and rank model
//!    configurations ([`validate`]).
//!
//! [`pipeline`] wires the steps into reproducible batch runs used by the
//! `gmsynth` CLI.
//!
//! Conventions: accelerations are in units of g, time in seconds, and
//! angular frequencies in rad/s. Arias intensity is computed as
//! (pi/2g) * integral(a^2 dt) with the gravitational constant expressed in
//! g units, so numerically `ia = (pi/2) * trapz(a^2)` and the result carries
//! units of g*s.

pub mod config;
pub mod envelope;
pub mod epsd;
pub mod error;
pub mod optim;
pub mod pipeline;
pub mod records;
pub mod response;
pub mod rng;
pub mod spectral;
pub mod synth;
pub mod uq;
pub mod validate;

pub use error::{Error, Result};

/// Arias-intensity prefactor for accelerations expressed in g: pi/(2g) with
/// g itself measured in g units. The resulting intensity carries units of
/// g*s (multiply by 9.80665 m/s^2 to convert to m/s).
pub const ARIAS_FACTOR: f64 = std::f64::consts::PI / 2.0;

/// Standard gravity in cm/s^2, used to convert g-valued accelerations to
/// velocities in cm/s.
pub const GRAVITY_CM: f64 = 980.665;
