//! 1D pulse-wave hemodynamics in patient-specific arterial networks.
//!
//! The library simulates blood flow, pressure, and cross-sectional area in a
//! rooted tree of tapered elastic vessels, closes every terminal vessel with
//! a structured-tree impedance boundary condition, and post-processes the
//! converged cycles into wave-intensity, wall-shear-stress, and perfusion
//! summaries.

pub mod analysis;
pub mod config;
pub mod error;
pub mod network;
pub mod solver;
pub mod tree;
pub mod wall;
pub mod waveform;

pub use error::{Error, Result};

/// Characteristic scales used to report residuals in nondimensional form:
/// radius 1 cm, flow 10 mL/s, density of the working fluid.
pub mod scales {
    /// Characteristic length (cm).
    pub const LENGTH: f64 = 1.0;
    /// Characteristic flow (mL/s).
    pub const FLOW: f64 = 10.0;

    /// Characteristic velocity (cm/s).
    pub const fn velocity() -> f64 {
        FLOW / (LENGTH * LENGTH)
    }

    /// Characteristic pressure rho u^2 (g/cm/s^2) for a given density.
    pub fn pressure(rho: f64) -> f64 {
        rho * velocity() * velocity()
    }
}
