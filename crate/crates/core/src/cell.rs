//! Unit-cell physics of the coupled asymmetric-SQUID line.
//!
//! Each cell carries a small junction (critical current `I0`) in one arm and
//! two large junctions (`r·I0`) in the other. Expanding the cell's
//! current-phase relation to third order gives a flux-tunable linear term and
//! a flux-tunable cubic (Kerr) term whose sign inverts between zero and half
//! flux.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{FLUX_QUANTUM, REDUCED_FLUX_QUANTUM};

/// Fabrication-level circuit constants of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitCellParams {
    /// Critical current of the small junction (A).
    pub i0: f64,
    /// Large-to-small junction area ratio.
    pub r: f64,
    /// Shunt capacitance of the small junction (F).
    pub c0: f64,
    /// Capacitance to ground per cell (F).
    pub cgnd: f64,
    /// Dielectric loss tangent of the ground capacitor.
    pub tan_delta: f64,
    /// Cell pitch (m).
    pub a: f64,
}

/// Loss tangent inferred from the measured in-situ insertion loss.
pub const DEFAULT_TAN_DELTA: f64 = 0.0027;
/// Cell pitch of both fabricated devices (m).
pub const CELL_PITCH: f64 = 10e-6;

impl UnitCellParams {
    pub fn new(i0: f64, r: f64, c0: f64, cgnd: f64, tan_delta: f64, a: f64) -> Result<Self> {
        let p = Self {
            i0,
            r,
            c0,
            cgnd,
            tan_delta,
            a,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.i0 > 0.0, "i0 must be > 0"),
            (self.r > 0.0, "r must be > 0"),
            (self.c0 >= 0.0, "c0 must be >= 0"),
            (self.cgnd > 0.0, "cgnd must be > 0"),
            (self.tan_delta >= 0.0, "tan_delta must be >= 0"),
            (self.a > 0.0, "a must be > 0"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Validation(format!("{msg} ({self:?})")));
            }
        }
        let all_finite = [self.i0, self.r, self.c0, self.cgnd, self.tan_delta, self.a]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Validation(format!(
                "non-finite cell parameter ({self:?})"
            )));
        }
        Ok(())
    }

    /// Single-junction inductance `L0 = Φ0 / (2π I0)` (H).
    pub fn l0(&self) -> f64 {
        FLUX_QUANTUM / (2.0 * PI * self.i0)
    }

    /// Capacitance shunting the series branch, `C0 (r/2 + 2)` (F).
    pub fn junction_capacitance(&self) -> f64 {
        self.c0 * (self.r / 2.0 + 2.0)
    }

    pub fn with_tan_delta(mut self, tan_delta: f64) -> Self {
        self.tan_delta = tan_delta;
        self
    }
}

/// Normalized flux bias Φ/Φ0. Every derived quantity is even and 1-periodic in it.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct FluxBias(pub f64);

impl FluxBias {
    pub fn new(f: f64) -> Self {
        Self(f)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    fn cos(self) -> f64 {
        (2.0 * PI * self.0).cos()
    }

    /// Linear coefficient `r/2 + 2cos(2πf)` of the current-phase relation.
    pub fn linear_factor(self, r: f64) -> f64 {
        r / 2.0 + 2.0 * self.cos()
    }

    /// Cubic coefficient `r/16 + cos(2πf)`.
    pub fn kerr_factor(self, r: f64) -> f64 {
        r / 16.0 + self.cos()
    }
}

impl fmt::Display for FluxBias {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Quantities derived from the cell parameters at one flux bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedCellConstants {
    pub l0: f64,
    pub l_lin: f64,
    pub gamma: f64,
    /// Low-frequency characteristic impedance (Ω).
    pub z0: f64,
}

impl DerivedCellConstants {
    pub fn new(flux: FluxBias, p: &UnitCellParams) -> Result<Self> {
        Ok(Self {
            l0: p.l0(),
            l_lin: linear_inductance(flux, p)?,
            gamma: kerr_coefficient(flux, p),
            z0: characteristic_impedance(0.0, flux, p)?,
        })
    }
}

/// Current through one cell for a superconducting phase drop `phi` (rad).
pub fn branch_current(phi: f64, flux: FluxBias, p: &UnitCellParams) -> f64 {
    p.i0 * flux.linear_factor(p.r) * phi - p.i0 / 3.0 * flux.kerr_factor(p.r) * phi.powi(3)
}

/// Small-signal branch inductance `L0 / (r/2 + 2cos(2πf))` (H).
pub fn linear_inductance(flux: FluxBias, p: &UnitCellParams) -> Result<f64> {
    let denominator = flux.linear_factor(p.r);
    if denominator <= 0.0 {
        return Err(Error::InductanceDivergence {
            flux: flux.value(),
            denominator,
        });
    }
    Ok(p.l0() / denominator)
}

/// Kerr coefficient `γ = [r/16 + cos(2πf)] / (3 φ0² L0)`.
///
/// This is the cubic coefficient of the branch current expressed in flux
/// (Wb) rather than phase, so `γ·(φ0·φ)³` is a current in amperes.
pub fn kerr_coefficient(flux: FluxBias, p: &UnitCellParams) -> f64 {
    flux.kerr_factor(p.r) / (3.0 * REDUCED_FLUX_QUANTUM.powi(2) * p.l0())
}

/// Flux in `[0, 0.5]` at which the Kerr coefficient vanishes.
pub fn kerr_free_flux(p: &UnitCellParams) -> Result<f64> {
    if p.r > 16.0 {
        return Err(Error::NoKerrFreePoint { r: p.r });
    }
    Ok((-p.r / 16.0).acos() / (2.0 * PI))
}

/// Dielectric loss conductance `ω Cgnd tanδ` of one cell (S).
pub fn shunt_conductance(omega: f64, p: &UnitCellParams) -> f64 {
    omega * p.cgnd * p.tan_delta
}

/// Effective series inductance including the junction-capacitance correction (H).
pub(crate) fn effective_inductance(omega: f64, flux: FluxBias, p: &UnitCellParams) -> Result<f64> {
    let lin = flux.linear_factor(p.r);
    if lin <= 0.0 {
        return Err(Error::InductanceDivergence {
            flux: flux.value(),
            denominator: lin,
        });
    }
    let denominator = lin - omega * omega * p.l0() * p.junction_capacitance();
    if denominator <= 0.0 {
        return Err(Error::AbovePlasma {
            omega,
            omega_plasma: (lin / (p.l0() * p.junction_capacitance())).sqrt(),
        });
    }
    Ok(p.l0() / denominator)
}

/// Characteristic impedance `sqrt(L_eff(ω)/Cgnd)` (Ω).
///
/// `omega = 0` gives the plain `sqrt(L/Cgnd)` limit. Errors with
/// [`Error::AbovePlasma`] in the evanescent band.
pub fn characteristic_impedance(omega: f64, flux: FluxBias, p: &UnitCellParams) -> Result<f64> {
    Ok((effective_inductance(omega, flux, p)? / p.cgnd).sqrt())
}

/// Named device presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    /// 865-cell device.
    JtwpaA,
    /// 350-cell device.
    JtwpaB,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::JtwpaA => "jtwpa-a",
            Preset::JtwpaB => "jtwpa-b",
        }
    }

    pub fn n_cells(self) -> usize {
        match self {
            Preset::JtwpaA => 865,
            Preset::JtwpaB => 350,
        }
    }

    /// Values extracted from transmission fits. Default for reproduction runs.
    pub fn fitted(self) -> UnitCellParams {
        UnitCellParams {
            i0: 1.25e-6,
            r: 6.2,
            c0: 45e-15,
            cgnd: 115e-15,
            tan_delta: DEFAULT_TAN_DELTA,
            a: CELL_PITCH,
        }
    }

    /// Values as drawn.
    pub fn design(self) -> UnitCellParams {
        UnitCellParams {
            i0: 1.2e-6,
            r: 6.0,
            c0: 40e-15,
            cgnd: 110e-15,
            tan_delta: DEFAULT_TAN_DELTA,
            a: CELL_PITCH,
        }
    }

    /// Flux bias used for the representative gain measurements.
    pub fn operating_flux(self) -> FluxBias {
        match self {
            Preset::JtwpaA => FluxBias(0.475),
            Preset::JtwpaB => FluxBias(0.45),
        }
    }

    /// Calibrated nonlinear pump phase shift at 6 GHz for the representative bias (rad).
    pub fn theta_nl_anchor(self) -> f64 {
        match self {
            Preset::JtwpaA => 3.1,
            Preset::JtwpaB => 2.1,
        }
    }

    /// Pump power paired with [`Self::theta_nl_anchor`] (dBm at the device input).
    pub fn pump_power_anchor_dbm(self) -> f64 {
        match self {
            Preset::JtwpaA => -78.0,
            Preset::JtwpaB => -75.0,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "jtwpa-a" | "a" => Ok(Preset::JtwpaA),
            "jtwpa-b" | "b" => Ok(Preset::JtwpaB),
            other => Err(Error::Validation(format!(
                "unknown preset '{other}' (expected jtwpa-a or jtwpa-b)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
