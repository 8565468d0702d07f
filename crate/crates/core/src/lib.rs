//! Photon-level model of a GHz-clocked, weak-pulse, time-bin phase-encoding
//! QKD link read out by sum-frequency up-conversion detectors.
//!
//! The crate is split the way the link is built:
//!
//! - [`photonics`]: pulsed source and fiber channel.
//! - [`updetector`]: the SFG + silicon SPAD hybrid detector.
//! - [`protocol`]: BB84 / SARG preparation, measurement and sifting.
//! - [`keyrate`]: closed-form QBER, sifting, Eve information and secure rate.
//! - [`simulator`]: seeded, block-parallel Monte Carlo of the whole link.

pub mod error;
pub mod keyrate;
pub mod photonics;
pub mod protocol;
pub mod reference;
pub mod simulator;
pub mod updetector;

pub use error::{Error, Result};

/// FWHM of a Gaussian divided by its standard deviation, `2·sqrt(2·ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;
