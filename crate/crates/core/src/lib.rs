//! Simulation and design toolkit for Josephson traveling-wave parametric
//! amplifiers phase-matched by an inverted Kerr nonlinearity.
//!
//! The crate is organised bottom-up:
//!
//! - [`cell`]: flux-tunable unit-cell physics (current-phase relation,
//!   inductance, Kerr coefficient, loss, impedance) and device presets.
//! - [`dispersion`]: wavenumber, plasma frequency, chromatic mismatch and
//!   the linear ABCD cascade.
//! - [`cme`]: four-wave-mixing gain from the coupled-mode equations, both in
//!   closed form and by direct integration.
//! - [`timedomain`]: large-signal transient simulation of the nonlinear
//!   ladder with tone-power extraction.
//! - [`fitkit`]: parameter extraction from transmission, noise and ripple
//!   data.
//! - [`tasks`]: config-driven batch recipes used by the `jtwpa` binary.

pub mod cell;
pub mod cme;
pub mod config;
pub mod csvio;
pub mod dispersion;
pub mod error;
pub mod fitkit;
pub mod tasks;
pub mod timedomain;
pub mod units;

pub use cell::{FluxBias, Preset, UnitCellParams};
pub use cme::{Convention, GainProfile, OperatingPoint, PumpState};
pub use dispersion::{ComplexTrace, FrequencyGrid};
pub use error::{Error, Result};
