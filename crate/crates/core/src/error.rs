//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// `r/2 + 2cos(2πf)` is not positive, so the linear inductance diverges.
    #[error("inductance divergence at flux {flux}: r/2 + 2cos(2πf) = {denominator}")]
    InductanceDivergence { flux: f64, denominator: f64 },

    #[error("no Kerr-free point: r = {r} exceeds 16")]
    NoKerrFreePoint { r: f64 },

    /// The requested frequency lies at or above the plasma frequency.
    #[error("above plasma frequency: ω = {omega:e} rad/s, ω_plasma = {omega_plasma:e} rad/s")]
    AbovePlasma { omega: f64, omega_plasma: f64 },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("ODE integration failed at z = {z} (step {step:e}, {steps} steps taken): {reason}")]
    IntegrationFailure {
        z: f64,
        step: f64,
        steps: usize,
        reason: String,
    },

    /// Transient state left the physical envelope.
    #[error(
        "numerical blow-up at step {step} (|V| = {max_abs:e} V); pump overdriven or dt too large"
    )]
    NumericalBlowUp { step: usize, max_abs: f64 },

    #[error("record spans {periods:.2} periods of the tone, at least {required} needed")]
    WindowTooShort { periods: f64, required: f64 },

    #[error("thru null: |thru| = {magnitude:e} at index {index} ({freq_hz} Hz)")]
    ThruNull {
        index: usize,
        freq_hz: f64,
        magnitude: f64,
    },

    #[error("phase unwrap ambiguous between {f_lo_hz} Hz and {f_hi_hz} Hz (interval {index}, step {step:.3} rad)")]
    UnwrapAmbiguity {
        index: usize,
        f_lo_hz: f64,
        f_hi_hz: f64,
        step: f64,
    },

    #[error("fit did not converge after {iterations} iterations; residual history {history:?}")]
    FitNonConvergence {
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("no linear region: only {remaining} points remain after trimming")]
    NoLinearRegion { remaining: usize },

    #[error("ill-conditioned fit at ω = {omega:e} rad/s: {reason}")]
    IllConditioned { omega: f64, reason: String },

    #[error("{path}:{line}: {message}")]
    Csv {
        path: String,
        line: u64,
        message: String,
    },

    #[error("config error at {key}: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
