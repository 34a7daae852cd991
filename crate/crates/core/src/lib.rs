//! Periodic-phase state-space model of the menstrual cycle.
//!
//! The latent phase ω_t ∈ [0, 1) advances each day by a gamma-distributed
//! amount; onset of menstruation is the day the phase wraps past 1, and basal
//! body temperature follows a harmonic curve in the phase plus Gaussian noise.
//! The crate fits the model by maximum likelihood with a fixed-grid filter and
//! turns filtering distributions into day-of-onset forecasts.

pub mod cli;
pub mod densities;
pub mod error;
pub mod estimate;
pub mod evaluate;
pub mod forecast;
pub mod gridfilter;
pub mod io;
pub mod model;
pub mod simulate;

pub use error::{Error, Result};
