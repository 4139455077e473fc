//! Linear-regime propagation: wavenumber, plasma frequency, chromatic
//! mismatch and the ABCD cascade of identical cells.
//!
//! Lengths are counted in cells throughout; wavenumbers are in rad/cell.

use std::f64::consts::PI;
use std::io::Write;
use std::ops::Mul;
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::cell::{effective_inductance, shunt_conductance, FluxBias, UnitCellParams};
use crate::error::{Error, Result};
use crate::units::rad_to_hz;

/// Strictly increasing, positive angular frequencies (rad/s).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyGrid {
    points: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation("frequency grid is empty".into()));
        }
        if let Some(i) = points.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Validation(format!(
                "grid point {i} is not a positive finite frequency ({})",
                points[i]
            )));
        }
        if let Some(i) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "grid not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { points })
    }

    pub fn from_hz(freqs_hz: &[f64]) -> Result<Self> {
        Self::new(freqs_hz.iter().map(|f| 2.0 * PI * f).collect())
    }

    /// `n` evenly spaced points from `start_hz` to `stop_hz` inclusive.
    pub fn linspace_hz(start_hz: f64, stop_hz: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("grid needs at least one point".into()));
        }
        if n == 1 {
            return Self::from_hz(&[start_hz]);
        }
        let step = (stop_hz - start_hz) / (n - 1) as f64;
        let hz: Vec<f64> = (0..n).map(|i| start_hz + step * i as f64).collect();
        Self::from_hz(&hz)
    }

    pub fn omegas(&self) -> &[f64] {
        &self.points
    }

    pub fn hz(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|&w| rad_to_hz(w))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.points[0]
    }

    pub fn last(&self) -> f64 {
        self.points[self.points.len() - 1]
    }
}

/// Wavenumber per cell sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispersionCurve {
    pub grid: FrequencyGrid,
    pub k: Vec<f64>,
}

/// Complex transmission sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTrace {
    pub grid: FrequencyGrid,
    pub values: Vec<Complex64>,
}

pub const TRACE_COLUMNS: [&str; 5] = ["freq_hz", "re", "im", "mag_db", "phase_rad"];

impl ComplexTrace {
    pub fn new(grid: FrequencyGrid, values: Vec<Complex64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::Validation(format!(
                "trace has {} values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values
            .iter()
            .position(|v| !(v.re.is_finite() && v.im.is_finite()))
        {
            return Err(Error::Validation(format!(
                "non-finite trace value at index {i}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mag_db(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|v| 20.0 * v.norm().log10())
            .collect()
    }

    /// Unwrapped phase anchored so that its extrapolation to DC is zero.
    pub fn unwrapped_phase(&self) -> Result<Vec<f64>> {
        unwrap_phase_from_dc(self.grid.omegas(), &self.values)
    }

    /// Writes `freq_hz,re,im,mag_db,phase_rad`. The phase column is the
    /// DC-anchored unwrapped phase when unwrapping succeeds, the principal
    /// value otherwise.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let phase = self
            .unwrapped_phase()
            .unwrap_or_else(|_| self.values.iter().map(|v| v.arg()).collect());
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(TRACE_COLUMNS).map_err(io)?;
        for (i, (f, v)) in self.grid.hz().zip(&self.values).enumerate() {
            w.write_record(&[
                format!("{f:.6}"),
                format!("{:.12e}", v.re),
                format!("{:.12e}", v.im),
                format!("{:.6}", 20.0 * v.norm().log10()),
                format!("{:.9}", phase[i]),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a trace with a `freq_hz,re,im` header (the two derived
    /// columns of [`Self::write_csv`] are accepted and ignored).
    pub fn load_csv(path: &Path) -> Result<Self> {
        let rows =
            crate::csvio::read_columns(path, &["freq_hz", "re", "im"], &["mag_db", "phase_rad"])?;
        let freqs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let grid = FrequencyGrid::from_hz(&freqs).map_err(|e| Error::Csv {
            path: path.display().to_string(),
            line: 1,
            message: e.to_string(),
        })?;
        Self::new(
            grid,
            rows.iter().map(|r| Complex64::new(r[1], r[2])).collect(),
        )
    }
}

/// Pole of the dispersion relation (rad/s).
pub fn plasma_frequency(flux: FluxBias, p: &UnitCellParams) -> Result<f64> {
    let lin = flux.linear_factor(p.r);
    if lin <= 0.0 {
        return Err(Error::InductanceDivergence {
            flux: flux.value(),
            denominator: lin,
        });
    }
    Ok((lin / (p.l0() * p.junction_capacitance())).sqrt())
}

/// Wavenumber `k(ω)` in rad/cell.
pub fn wavenumber(omega: f64, flux: FluxBias, p: &UnitCellParams) -> Result<f64> {
    if omega < 0.0 || !omega.is_finite() {
        return Err(Error::Validation(format!(
            "invalid angular frequency {omega}"
        )));
    }
    let l_eff = effective_inductance(omega, flux, p)?;
    Ok(omega * (l_eff * p.cgnd).sqrt())
}

pub fn dispersion_curve(
    grid: &FrequencyGrid,
    flux: FluxBias,
    p: &UnitCellParams,
) -> Result<DispersionCurve> {
    let k = grid
        .omegas()
        .iter()
        .map(|&w| wavenumber(w, flux, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(DispersionCurve {
        grid: grid.clone(),
        k,
    })
}

/// Chromatic mismatch `k(ωs) + k(2ωp − ωs) − 2k(ωp)` (rad/cell).
pub fn delta_k(omega_s: f64, omega_p: f64, flux: FluxBias, p: &UnitCellParams) -> Result<f64> {
    let omega_i = 2.0 * omega_p - omega_s;
    if omega_i <= 0.0 {
        return Err(Error::Validation(format!(
            "idler frequency 2ωp − ωs = {omega_i:e} rad/s is not positive"
        )));
    }
    if omega_s == omega_p {
        return Ok(0.0);
    }
    Ok(
        wavenumber(omega_s, flux, p)? + wavenumber(omega_i, flux, p)?
            - 2.0 * wavenumber(omega_p, flux, p)?,
    )
}

/// Two-port chain matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Abcd {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
}

impl Abcd {
    pub fn identity() -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Self {
            a: one,
            b: zero,
            c: zero,
            d: one,
        }
    }

    pub fn series(z: Complex64) -> Self {
        Self {
            b: z,
            ..Self::identity()
        }
    }

    pub fn shunt(y: Complex64) -> Self {
        Self {
            c: y,
            ..Self::identity()
        }
    }

    /// The same network seen from the other port.
    pub fn reversed(&self) -> Self {
        Self {
            a: self.d,
            b: self.b,
            c: self.c,
            d: self.a,
        }
    }

    pub fn powi(self, mut n: usize) -> Self {
        let mut result = Self::identity();
        let mut base = self;
        while n > 0 {
            if n & 1 == 1 {
                result = result * base;
            }
            base = base * base;
            n >>= 1;
        }
        result
    }

    pub fn determinant(&self) -> Complex64 {
        self.a * self.d - self.b * self.c
    }

    /// Forward transmission between real source and load impedances.
    pub fn s21(&self, z_source: f64, z_load: f64) -> Complex64 {
        2.0 * (z_source * z_load).sqrt() / self.denominator(z_source, z_load)
    }

    pub fn s12(&self, z_source: f64, z_load: f64) -> Complex64 {
        2.0 * (z_source * z_load).sqrt() * self.determinant() / self.denominator(z_source, z_load)
    }

    fn denominator(&self, zs: f64, zl: f64) -> Complex64 {
        self.a * zl + self.b + self.c * zs * zl + self.d * zs
    }
}

impl Mul for Abcd {
    type Output = Abcd;

    fn mul(self, o: Abcd) -> Abcd {
        Abcd {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }
}

/// Chain matrix of one symmetric cell: half the shunt admittance on each
/// side of the series branch.
pub fn cell_abcd(omega: f64, flux: FluxBias, p: &UnitCellParams) -> Result<Abcd> {
    let l = crate::cell::linear_inductance(flux, p)?;
    let cj = p.junction_capacitance();
    let j = Complex64::i();
    // L in parallel with the junction capacitance; resonant at the plasma frequency
    let resonance = 1.0 - omega * omega * l * cj;
    if resonance == 0.0 {
        return Err(Error::AbovePlasma {
            omega,
            omega_plasma: omega,
        });
    }
    let series = j * omega * l / resonance;
    let y = Complex64::new(shunt_conductance(omega, p), omega * p.cgnd);
    let half = Abcd::shunt(y / 2.0);
    Ok(half * Abcd::series(series) * half)
}

pub fn line_abcd(omega: f64, flux: FluxBias, p: &UnitCellParams, n_cells: usize) -> Result<Abcd> {
    Ok(cell_abcd(omega, flux, p)?.powi(n_cells))
}

/// Small-signal transmission of `n_cells` identical cells between resistive terminations.
pub fn linear_s21(
    grid: &FrequencyGrid,
    flux: FluxBias,
    p: &UnitCellParams,
    n_cells: usize,
    z_source: f64,
    z_load: f64,
) -> Result<ComplexTrace> {
    p.validate()?;
    if n_cells == 0 {
        return Err(Error::Validation("n_cells must be >= 1".into()));
    }
    if !(z_source > 0.0 && z_load > 0.0) {
        return Err(Error::Validation(format!(
            "terminations must be positive (source {z_source}, load {z_load})"
        )));
    }
    let values = grid
        .omegas()
        .iter()
        .map(|&w| Ok(line_abcd(w, flux, p, n_cells)?.s21(z_source, z_load)))
        .collect::<Result<Vec<_>>>()?;
    ComplexTrace::new(grid.clone(), values)
}

/// Largest transmission-phase decrement accepted between neighbouring samples
/// before the interval is declared ambiguous (rad).
const MAX_PHASE_STEP: f64 = 0.95 * PI;
/// Largest transmission-phase increment tolerated (rad). A passive line's
/// phase falls with frequency; a larger rise is an aliased step.
const MAX_PHASE_RISE: f64 = PI / 4.0;

/// Continuous phase of `values` on `omegas`, anchored so that the linear
/// extrapolation of the first two samples to DC is zero modulo 2π.
pub fn unwrap_phase_from_dc(omegas: &[f64], values: &[Complex64]) -> Result<Vec<f64>> {
    if omegas.len() != values.len() {
        return Err(Error::Validation("phase and grid lengths differ".into()));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(values.len());
    out.push(values[0].arg());
    for i in 1..values.len() {
        let raw = values[i].arg() - values[i - 1].arg();
        let step = raw - 2.0 * PI * (raw / (2.0 * PI)).round();
        if step > MAX_PHASE_RISE || step < -MAX_PHASE_STEP {
            return Err(Error::UnwrapAmbiguity {
                index: i - 1,
                f_lo_hz: rad_to_hz(omegas[i - 1]),
                f_hi_hz: rad_to_hz(omegas[i]),
                step,
            });
        }
        out.push(out[i - 1] + step);
    }
    let at_dc = if out.len() >= 2 {
        out[0] - omegas[0] * (out[1] - out[0]) / (omegas[1] - omegas[0])
    } else {
        out[0]
    };
    let shift = 2.0 * PI * (at_dc / (2.0 * PI)).round();
    for v in &mut out {
        *v -= shift;
    }
    Ok(out)
}
