//! Four-wave-mixing gain under a stiff pump.
//!
//! A strong pump at `ωp` mixes a weak signal at `ωs` into an idler at
//! `ωi = 2ωp − ωs`. The signal/idler amplitudes obey
//!
//! ```text
//! da_s/dz = i κ_s a_i* e^{iκz}
//! da_i/dz = i κ_i a_s* e^{iκz}
//! ```
//!
//! with total mismatch `κ = Δk + α_nl`, the sum of chromatic mismatch and
//! the pump-induced self/cross-phase shifts. The closed-form power gain is
//! `G = cosh²(gz) + κ²/(4g²)·sinh²(gz)` with `g² = κ_s κ_i − (κ/2)²`.
//!
//! Pump amplitudes are node phase amplitudes (rad); the Kerr coefficient is
//! in flux units, so every coupling carries a factor `φ0²`.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cell::{characteristic_impedance, kerr_coefficient, FluxBias, UnitCellParams};
use crate::dispersion::{plasma_frequency, wavenumber, DispersionCurve, FrequencyGrid};
use crate::error::{Error, Result};
use crate::units::{dbm_to_watts, ratio_to_db, REDUCED_FLUX_QUANTUM};

/// Normalization of the pump self-phase and the signal/idler couplings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    /// `α_p ∝ k_p⁴` and `κ_{s,i} ∝ k_p k_s k_i (2k_p − k_{i,s})`. Makes
    /// `α_s(ωp) = 2α_p` and `√(κ_s κ_i)(ωp) = |α_p|` exact.
    #[default]
    Corrected,
    /// `α_p ∝ k_p⁵` and `κ_{s,i} ∝ k_p² k_s k_i (2k_p − k_{i,s})`.
    AsPrinted,
}

impl Convention {
    pub fn name(self) -> &'static str {
        match self {
            Convention::Corrected => "corrected",
            Convention::AsPrinted => "as-printed",
        }
    }
}

impl std::str::FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "corrected" => Ok(Convention::Corrected),
            "as-printed" => Ok(Convention::AsPrinted),
            other => Err(Error::Validation(format!(
                "unknown convention '{other}' (expected corrected or as-printed)"
            ))),
        }
    }
}

/// A bias choice for one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub flux: FluxBias,
    /// Pump angular frequency (rad/s).
    pub omega_p: f64,
    /// Pump power at the device input (dBm).
    pub pump_power_dbm: f64,
    pub n_cells: usize,
}

impl OperatingPoint {
    pub fn validate(&self, p: &UnitCellParams) -> Result<()> {
        if self.n_cells == 0 {
            return Err(Error::Validation("n_cells must be >= 1".into()));
        }
        if !(self.omega_p > 0.0 && self.omega_p.is_finite()) {
            return Err(Error::Validation(format!(
                "invalid pump frequency {}",
                self.omega_p
            )));
        }
        let wpl = plasma_frequency(self.flux, p)?;
        if self.omega_p >= wpl {
            return Err(Error::AbovePlasma {
                omega: self.omega_p,
                omega_plasma: wpl,
            });
        }
        if self.pump_power_dbm.is_nan() || self.pump_power_dbm == f64::INFINITY {
            return Err(Error::Validation(format!(
                "nonphysical pump power {} dBm",
                self.pump_power_dbm
            )));
        }
        Ok(())
    }
}

/// Pump amplitude and the self-phase it produces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PumpState {
    /// Node phase amplitude `|A_p|` (rad).
    pub amp: f64,
    /// Pump self-phase shift per cell (rad/cell); carries the sign of γ.
    pub alpha_p: f64,
    /// `alpha_p · n_cells` (rad).
    pub theta_nl: f64,
}

/// Pump-power-to-amplitude map: convention plus a calibration factor on `|A_p|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PumpModel {
    pub convention: Convention,
    pub amplitude_scale: f64,
}

impl Default for PumpModel {
    fn default() -> Self {
        Self {
            convention: Convention::Corrected,
            amplitude_scale: 1.0,
        }
    }
}

/// `φ0² γ` evaluated at the bias (A/rad³ per cell, phase units).
fn kerr_phase_units(flux: FluxBias, p: &UnitCellParams) -> f64 {
    kerr_coefficient(flux, p) * REDUCED_FLUX_QUANTUM.powi(2)
}

/// Pump self-phase per cell for unit `|A_p|²`.
fn alpha_p_per_amp2(
    op: &OperatingPoint,
    p: &UnitCellParams,
    convention: Convention,
) -> Result<f64> {
    let kp = wavenumber(op.omega_p, op.flux, p)?;
    let power = match convention {
        Convention::Corrected => 4,
        Convention::AsPrinted => 5,
    };
    Ok(3.0 * kerr_phase_units(op.flux, p) * kp.powi(power) / (8.0 * p.cgnd * op.omega_p.powi(2)))
}

/// Uncalibrated `|A_p|²` for the operating point's pump power.
fn raw_amp2(op: &OperatingPoint, p: &UnitCellParams) -> Result<f64> {
    let z0 = characteristic_impedance(op.omega_p, op.flux, p)?;
    let watts = dbm_to_watts(op.pump_power_dbm);
    Ok(2.0 * z0 * watts / (REDUCED_FLUX_QUANTUM * op.omega_p).powi(2))
}

/// Converts the pump power into a phase-wave amplitude through the line's
/// impedance (`V = φ0 ωp |A_p|` into `Z0(ωp)`), scales `|A_p|²` by the
/// model's calibration factor and derives the self-phase.
pub fn pump_amplitude_from_power(
    op: &OperatingPoint,
    p: &UnitCellParams,
    model: &PumpModel,
) -> Result<PumpState> {
    op.validate(p)?;
    if !(model.amplitude_scale >= 0.0 && model.amplitude_scale.is_finite()) {
        return Err(Error::Validation(format!(
            "invalid amplitude scale {}",
            model.amplitude_scale
        )));
    }
    let amp2 = raw_amp2(op, p)? * model.amplitude_scale;
    let alpha_p = alpha_p_per_amp2(op, p, model.convention)? * amp2;
    Ok(PumpState {
        amp: amp2.sqrt(),
        alpha_p,
        theta_nl: alpha_p * op.n_cells as f64,
    })
}

/// Pump state producing a nonlinear phase of magnitude `theta_nl` over the device.
pub fn pump_from_theta(
    theta_nl: f64,
    op: &OperatingPoint,
    p: &UnitCellParams,
    convention: Convention,
) -> Result<PumpState> {
    op.validate(p)?;
    if !(theta_nl >= 0.0 && theta_nl.is_finite()) {
        return Err(Error::Validation(format!(
            "theta_nl must be a finite magnitude, got {theta_nl}"
        )));
    }
    let per_amp2 = alpha_p_per_amp2(op, p, convention)?;
    if theta_nl == 0.0 {
        return Ok(PumpState {
            amp: 0.0,
            alpha_p: 0.0,
            theta_nl: 0.0,
        });
    }
    if per_amp2 == 0.0 {
        return Err(Error::Validation(
            "Kerr-free bias: no pump amplitude yields a nonlinear phase".into(),
        ));
    }
    let amp2 = theta_nl / (op.n_cells as f64 * per_amp2.abs());
    let alpha_p = per_amp2 * amp2;
    Ok(PumpState {
        amp: amp2.sqrt(),
        alpha_p,
        theta_nl: alpha_p * op.n_cells as f64,
    })
}

/// Result of [`calibrate_amplitude_scale`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmplitudeCalibration {
    /// Factor multiplying the uncalibrated `|A_p|²`.
    pub scale: f64,
    /// RMS residual of `|θ_NL|` (rad).
    pub residual: f64,
}

/// Least-squares factor on `|A_p|²` that makes the modelled `|θ_NL|` match
/// the measured linear-regime points.
///
/// A single point anchors the scale exactly; two or more points must span
/// more than one pump power.
pub fn calibrate_amplitude_scale(
    measured: &[(f64, f64)],
    op: &OperatingPoint,
    p: &UnitCellParams,
    convention: Convention,
) -> Result<AmplitudeCalibration> {
    if measured.is_empty() {
        return Err(Error::Validation("no calibration points".into()));
    }
    if measured.len() >= 2 {
        let first = measured[0].0;
        if measured.iter().all(|(dbm, _)| *dbm == first) {
            return Err(Error::Validation(
                "degenerate calibration: all pump powers are equal".into(),
            ));
        }
    }
    let model = PumpModel {
        convention,
        amplitude_scale: 1.0,
    };
    let mut num = 0.0;
    let mut den = 0.0;
    let mut pairs = Vec::with_capacity(measured.len());
    for &(dbm, theta) in measured {
        let at = OperatingPoint {
            pump_power_dbm: dbm,
            ..*op
        };
        let m = pump_amplitude_from_power(&at, p, &model)?.theta_nl.abs();
        num += m * theta.abs();
        den += m * m;
        pairs.push((m, theta.abs()));
    }
    if den == 0.0 {
        return Err(Error::Validation(
            "model predicts no nonlinear phase at these powers".into(),
        ));
    }
    let scale = num / den;
    let residual = (pairs
        .iter()
        .map(|(m, t)| (scale * m - t).powi(2))
        .sum::<f64>()
        / pairs.len() as f64)
        .sqrt();
    Ok(AmplitudeCalibration { scale, residual })
}

/// Mismatch and coupling terms at one signal frequency (all rad/cell).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MismatchPoint {
    pub omega_s: f64,
    pub dk: f64,
    pub alpha_nl: f64,
    pub kappa: f64,
    pub kappa_s: f64,
    pub kappa_i: f64,
    pub g: Complex64,
}

impl MismatchPoint {
    fn from_terms(omega_s: f64, dk: f64, alpha_nl: f64, kappa_s: f64, kappa_i: f64) -> Self {
        let kappa = dk + alpha_nl;
        let g = Complex64::new(kappa_s * kappa_i - 0.25 * kappa * kappa, 0.0).sqrt();
        Self {
            omega_s,
            dk,
            alpha_nl,
            kappa,
            kappa_s,
            kappa_i,
            g,
        }
    }

    /// Power gain after `z` cells for an initially empty idler.
    pub fn gain(&self, z: f64) -> f64 {
        power_gain(self.kappa, self.g, z)
    }
}

/// `sinh(x)/x` with the removable singularity at zero.
fn sinhc(x: Complex64) -> Complex64 {
    if x.norm() < 1e-4 {
        let x2 = x * x;
        Complex64::new(1.0, 0.0) + x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sinh() / x
    }
}

/// `cosh²(gz) + κ²/(4g²)·sinh²(gz)`, evaluated as `(κz/2)²·sinhc²(gz)` in
/// the second term so that `g = 0` gives `1 + (κz/2)²`.
pub fn power_gain(kappa: f64, g: Complex64, z: f64) -> f64 {
    let gz = g * z;
    let c = gz.cosh();
    let s = sinhc(gz);
    let half = 0.5 * kappa * z;
    let value = c * c + half * half * s * s;
    debug_assert!(
        value.im.abs() <= 1e-9 * value.re.abs().max(1.0),
        "imaginary gain residue {value}"
    );
    value.re
}

/// Self/cross-phase shifts and couplings at signal frequency `omega_s`.
pub fn mismatch_terms(
    omega_s: f64,
    op: &OperatingPoint,
    pump: &PumpState,
    p: &UnitCellParams,
    convention: Convention,
) -> Result<MismatchPoint> {
    let wp = op.omega_p;
    let wi = 2.0 * wp - omega_s;
    if !(omega_s > 0.0 && wi > 0.0) {
        return Err(Error::Validation(format!(
            "signal {omega_s:e} rad/s and idler {wi:e} rad/s must both be positive"
        )));
    }
    let ks = wavenumber(omega_s, op.flux, p)?;
    let ki = wavenumber(wi, op.flux, p)?;
    let kp = wavenumber(wp, op.flux, p)?;
    // shared prefactor 3 γ φ0² |A_p|² / Cgnd
    let pre = 3.0 * kerr_phase_units(op.flux, p) * pump.amp * pump.amp / p.cgnd;

    let alpha_s = pre * ks * ks * kp * kp / (4.0 * omega_s * omega_s);
    let alpha_i = pre * ki * ki * kp * kp / (4.0 * wi * wi);
    let alpha_p = alpha_p_per_amp2(op, p, convention)? * pump.amp * pump.amp;
    let kp_factor = match convention {
        Convention::Corrected => kp,
        Convention::AsPrinted => kp * kp,
    };
    let kappa_s = pre * kp_factor * ks * ki * (2.0 * kp - ki) / (8.0 * omega_s * omega_s);
    let kappa_i = pre * kp_factor * ks * ki * (2.0 * kp - ks) / (8.0 * wi * wi);

    let dk = if omega_s == wp {
        0.0
    } else {
        ks + ki - 2.0 * kp
    };
    Ok(MismatchPoint::from_terms(
        omega_s,
        dk,
        alpha_s + alpha_i - 2.0 * alpha_p,
        kappa_s,
        kappa_i,
    ))
}

/// Signal gain spectrum with its mismatch decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct GainProfile {
    pub grid: FrequencyGrid,
    pub gain_db: Vec<f64>,
    pub decomposition: Vec<MismatchPoint>,
}

pub const GAIN_COLUMNS: [&str; 7] = [
    "freq_hz", "gain_db", "dk", "alpha_nl", "kappa", "g_re", "g_im",
];

impl GainProfile {
    /// `(omega, gain_db)` at the highest grid gain.
    pub fn peak(&self) -> (f64, f64) {
        self.grid.omegas().iter().zip(&self.gain_db).fold(
            (0.0, f64::NEG_INFINITY),
            |acc, (&w, &g)| if g > acc.1 { (w, g) } else { acc },
        )
    }

    pub fn linear_gain(&self) -> Vec<f64> {
        self.gain_db.iter().map(|g| 10f64.powf(g / 10.0)).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(GAIN_COLUMNS).map_err(io)?;
        for (i, f) in self.grid.hz().enumerate() {
            let (dk, anl, kap, g) = match self.decomposition.get(i) {
                Some(m) => (m.dk, m.alpha_nl, m.kappa, m.g),
                None => (
                    f64::NAN,
                    f64::NAN,
                    f64::NAN,
                    Complex64::new(f64::NAN, f64::NAN),
                ),
            };
            w.write_record(&[
                format!("{f:.6}"),
                format!("{:.9}", self.gain_db[i]),
                format!("{dk:.12e}"),
                format!("{anl:.12e}"),
                format!("{kap:.12e}"),
                format!("{:.12e}", g.re),
                format!("{:.12e}", g.im),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Closed-form gain after `op.n_cells` cells on every grid point.
pub fn analytic_gain(
    grid: &FrequencyGrid,
    op: &OperatingPoint,
    pump: &PumpState,
    p: &UnitCellParams,
    convention: Convention,
) -> Result<GainProfile> {
    gain_at_length(grid, op, pump, p, convention, op.n_cells as f64)
}

/// As [`analytic_gain`] with an explicit propagation length in cells.
pub fn gain_at_length(
    grid: &FrequencyGrid,
    op: &OperatingPoint,
    pump: &PumpState,
    p: &UnitCellParams,
    convention: Convention,
    z: f64,
) -> Result<GainProfile> {
    let decomposition = grid
        .omegas()
        .iter()
        .map(|&w| mismatch_terms(w, op, pump, p, convention))
        .collect::<Result<Vec<_>>>()?;
    let gain_db = decomposition
        .iter()
        .map(|m| ratio_to_db(m.gain(z)))
        .collect();
    Ok(GainProfile {
        grid: grid.clone(),
        gain_db,
        decomposition,
    })
}

/// Step control for [`integrate_cme`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmeOptions {
    pub rtol: f64,
    pub max_steps: usize,
}

impl Default for CmeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            max_steps: 1_000_000,
        }
    }
}

/// Signal and idler amplitudes sampled at every cell boundary `z = 0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmeSolution {
    pub z: Vec<f64>,
    pub a_s: Vec<Complex64>,
    pub a_i: Vec<Complex64>,
    pub terms: MismatchPoint,
}

impl CmeSolution {
    /// `|a_s(l)/a_s(0)|²`.
    pub fn signal_gain(&self) -> f64 {
        (self.a_s[self.a_s.len() - 1] / self.a_s[0]).norm_sqr()
    }

    /// `|a_s|²/κ_s − |a_i|²/κ_i` along z.
    pub fn manley_rowe(&self) -> Vec<f64> {
        self.a_s
            .iter()
            .zip(&self.a_i)
            .map(|(s, i)| s.norm_sqr() / self.terms.kappa_s - i.norm_sqr() / self.terms.kappa_i)
            .collect()
    }
}

type State = [Complex64; 2];

fn cme_rhs(z: f64, y: &State, t: &MismatchPoint) -> State {
    let phase = Complex64::from_polar(1.0, t.kappa * z);
    let i = Complex64::i();
    [
        i * t.kappa_s * y[1].conj() * phase,
        i * t.kappa_i * y[0].conj() * phase,
    ]
}

fn axpy(y: &State, h: f64, terms: &[(f64, &State)]) -> State {
    let mut out = *y;
    for (c, k) in terms {
        out[0] += k[0] * (h * c);
        out[1] += k[1] * (h * c);
    }
    out
}

/// Numerically integrates the coupled-mode equations from `z = 0` to
/// `op.n_cells` with an embedded Dormand-Prince 5(4) pair.
pub fn integrate_cme(
    omega_s: f64,
    op: &OperatingPoint,
    pump: &PumpState,
    p: &UnitCellParams,
    convention: Convention,
    a_s0: Complex64,
    a_i0: Complex64,
    options: &CmeOptions,
) -> Result<CmeSolution> {
    let terms = mismatch_terms(omega_s, op, pump, p, convention)?;
    integrate_terms(&terms, op.n_cells, a_s0, a_i0, options)
}

/// [`integrate_cme`] for precomputed coupling terms.
pub fn integrate_terms(
    terms: &MismatchPoint,
    n_cells: usize,
    a_s0: Complex64,
    a_i0: Complex64,
    options: &CmeOptions,
) -> Result<CmeSolution> {
    // Dormand-Prince tableau
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A2: [f64; 1] = [1.0 / 5.0];
    const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
    const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
    const A5: [f64; 4] = [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
    ];
    const A6: [f64; 5] = [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ];
    const B5: [f64; 6] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let scale0 = a_s0.norm().max(a_i0.norm());
    if scale0 == 0.0 {
        let n = n_cells + 1;
        return Ok(CmeSolution {
            z: (0..n).map(|i| i as f64).collect(),
            a_s: vec![a_s0; n],
            a_i: vec![a_i0; n],
            terms: *terms,
        });
    }
    let rtol = options.rtol;
    let atol = rtol * scale0 * 1e-3;

    let mut zs = Vec::with_capacity(n_cells + 1);
    let mut a_s = Vec::with_capacity(n_cells + 1);
    let mut a_i = Vec::with_capacity(n_cells + 1);
    let mut y: State = [a_s0, a_i0];
    let mut z = 0.0;
    zs.push(0.0);
    a_s.push(a_s0);
    a_i.push(a_i0);

    let rate = terms
        .kappa_s
        .abs()
        .max(terms.kappa_i.abs())
        .max(terms.kappa.abs());
    let mut h = if rate > 0.0 {
        (0.1 / rate).min(1.0)
    } else {
        1.0
    };
    let mut steps = 0usize;
    let mut k1 = cme_rhs(z, &y, terms);

    for cell in 1..=n_cells {
        let target = cell as f64;
        while z < target {
            if steps >= options.max_steps {
                return Err(Error::IntegrationFailure {
                    z,
                    step: h,
                    steps,
                    reason: format!("step budget of {} exhausted", options.max_steps),
                });
            }
            let last = z + h >= target;
            let step = if last { target - z } else { h };
            let k2 = cme_rhs(z + C[1] * step, &axpy(&y, step, &[(A2[0], &k1)]), terms);
            let k3 = cme_rhs(
                z + C[2] * step,
                &axpy(&y, step, &[(A3[0], &k1), (A3[1], &k2)]),
                terms,
            );
            let k4 = cme_rhs(
                z + C[3] * step,
                &axpy(&y, step, &[(A4[0], &k1), (A4[1], &k2), (A4[2], &k3)]),
                terms,
            );
            let k5 = cme_rhs(
                z + C[4] * step,
                &axpy(
                    &y,
                    step,
                    &[(A5[0], &k1), (A5[1], &k2), (A5[2], &k3), (A5[3], &k4)],
                ),
                terms,
            );
            let k6 = cme_rhs(
                z + C[5] * step,
                &axpy(
                    &y,
                    step,
                    &[
                        (A6[0], &k1),
                        (A6[1], &k2),
                        (A6[2], &k3),
                        (A6[3], &k4),
                        (A6[4], &k5),
                    ],
                ),
                terms,
            );
            let y5 = axpy(
                &y,
                step,
                &[
                    (B5[0], &k1),
                    (B5[2], &k3),
                    (B5[3], &k4),
                    (B5[4], &k5),
                    (B5[5], &k6),
                ],
            );
            let k7 = cme_rhs(z + C[6] * step, &y5, terms);
            let y4 = axpy(
                &y,
                step,
                &[
                    (B4[0], &k1),
                    (B4[2], &k3),
                    (B4[3], &k4),
                    (B4[4], &k5),
                    (B4[5], &k6),
                    (B4[6], &k7),
                ],
            );
            let err = (0..2)
                .map(|j| {
                    let sc = atol + rtol * y[j].norm().max(y5[j].norm());
                    ((y5[j] - y4[j]).norm() / sc).powi(2)
                })
                .sum::<f64>()
                .sqrt()
                / std::f64::consts::SQRT_2;
            steps += 1;
            if !err.is_finite() {
                return Err(Error::IntegrationFailure {
                    z,
                    step,
                    steps,
                    reason: "non-finite error estimate".into(),
                });
            }
            if err <= 1.0 {
                z = if last { target } else { z + step };
                y = y5;
                k1 = k7;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if !(last && err <= 1.0) {
                h = step * factor;
            }
            if h < 1e-12 {
                return Err(Error::IntegrationFailure {
                    z,
                    step: h,
                    steps,
                    reason: format!("step size underflow (error ratio {err:.3e})"),
                });
            }
        }
        zs.push(target);
        a_s.push(y[0]);
        a_i.push(y[1]);
    }
    Ok(CmeSolution {
        z: zs,
        a_s,
        a_i,
        terms: *terms,
    })
}

/// Window searched for phase-matching roots: 10% of ωp above DC, and
/// signal and idler both at least 5% below the plasma frequency.
pub fn phase_match_window(op: &OperatingPoint, p: &UnitCellParams) -> Result<(f64, f64)> {
    let wpl = plasma_frequency(op.flux, p)?;
    let upper = (1.9 * op.omega_p).min(0.95 * wpl);
    let lower = (0.1 * op.omega_p).max(2.0 * op.omega_p - upper);
    Ok((lower, upper))
}

/// Signal frequencies where `κ = 0`, as mirror pairs `(ω, 2ωp − ω)` with
/// `ω < ωp`. Empty when no sign change exists.
pub fn phase_match_frequencies(
    op: &OperatingPoint,
    pump: &PumpState,
    p: &UnitCellParams,
    convention: Convention,
) -> Result<Vec<(f64, f64)>> {
    const SCAN: usize = 4000;
    const RESOLUTION_RAD: f64 = 2.0 * std::f64::consts::PI * 1e3;
    let (lower, _) = phase_match_window(op, p)?;
    let wp = op.omega_p;
    if lower >= wp {
        return Ok(Vec::new());
    }
    let kappa = |w: f64| mismatch_terms(w, op, pump, p, convention).map(|m| m.kappa);
    // the degenerate point is excluded: κ(ωp) = 2α_p is not a root
    let span = wp - lower;
    let samples: Vec<f64> = (0..SCAN)
        .map(|i| lower + span * i as f64 / SCAN as f64)
        .collect();
    let values = samples
        .iter()
        .map(|&w| kappa(w))
        .collect::<Result<Vec<_>>>()?;
    let mut roots = Vec::new();
    for i in 0..SCAN - 1 {
        let (fa, fb) = (values[i], values[i + 1]);
        if fa == 0.0 {
            roots.push(samples[i]);
            continue;
        }
        if fa.signum() == fb.signum() || fb == 0.0 {
            continue;
        }
        let (mut lo, mut hi, mut flo) = (samples[i], samples[i + 1], fa);
        while hi - lo > RESOLUTION_RAD {
            let mid = 0.5 * (lo + hi);
            let fm = kappa(mid)?;
            if fm.signum() == flo.signum() {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        roots.push(0.5 * (lo + hi));
    }
    Ok(roots.into_iter().map(|w| (w, 2.0 * wp - w)).collect())
}

/// Δk and α_nl traces taken from measurement on a shared signal grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredMismatch {
    pub grid: FrequencyGrid,
    pub dk: Vec<f64>,
    pub alpha_nl: Vec<f64>,
}

/// Linear interpolation of a dispersion curve; exact at grid points.
fn interpolate_k(curve: &DispersionCurve, omega: f64) -> Result<f64> {
    let w = curve.grid.omegas();
    let out_of_range = || {
        Error::Validation(format!(
            "ω = {omega:e} rad/s outside the measured wavenumber range [{:e}, {:e}]",
            w[0],
            w[w.len() - 1]
        ))
    };
    let tol = 1e-12 * omega.abs();
    if omega < w[0] - tol || omega > w[w.len() - 1] + tol {
        return Err(out_of_range());
    }
    let idx = w.partition_point(|&x| x < omega - tol);
    if idx < w.len() && (w[idx] - omega).abs() <= tol {
        return Ok(curve.k[idx]);
    }
    if idx == 0 || idx >= w.len() {
        return Err(out_of_range());
    }
    let t = (omega - w[idx - 1]) / (w[idx] - w[idx - 1]);
    Ok(curve.k[idx - 1] + t * (curve.k[idx] - curve.k[idx - 1]))
}

/// Gain reconstructed from measured mismatch traces without fit parameters.
///
/// `κ = Δk + α_nl` comes straight from the traces. The couplings use the
/// measured wavenumbers and the measured pump self-phase `α_p = θ_NL/l`:
/// eliminating `γ|A_p|²/Cgnd` through `α_p` gives
/// `κ_s = α_p k_s k_i (2k_p − k_i) ωp² / (k_p³ ωs²)` in either convention.
pub fn gain_from_measured_mismatch(
    traces: &MeasuredMismatch,
    wavenumbers: &DispersionCurve,
    omega_p: f64,
    n_cells: usize,
    pump: &PumpState,
) -> Result<GainProfile> {
    let n = traces.grid.len();
    if traces.dk.len() != n || traces.alpha_nl.len() != n {
        return Err(Error::Validation(format!(
            "trace lengths differ from the grid: dk {}, alpha_nl {}, grid {n}",
            traces.dk.len(),
            traces.alpha_nl.len()
        )));
    }
    let kp = interpolate_k(wavenumbers, omega_p)?;
    let z = n_cells as f64;
    let mut decomposition = Vec::with_capacity(n);
    let mut gain_db = Vec::with_capacity(n);
    for (j, &ws) in traces.grid.omegas().iter().enumerate() {
        let wi = 2.0 * omega_p - ws;
        let ks = interpolate_k(wavenumbers, ws)?;
        let ki = interpolate_k(wavenumbers, wi)?;
        let common = pump.alpha_p * ks * ki * omega_p * omega_p / kp.powi(3);
        let kappa_s = common * (2.0 * kp - ki) / (ws * ws);
        let kappa_i = common * (2.0 * kp - ks) / (wi * wi);
        let m = MismatchPoint::from_terms(ws, traces.dk[j], traces.alpha_nl[j], kappa_s, kappa_i);
        gain_db.push(ratio_to_db(m.gain(z)));
        decomposition.push(m);
    }
    Ok(GainProfile {
        grid: traces.grid.clone(),
        gain_db,
        decomposition,
    })
}

/// Zero crossings of `κ` along a profile by linear interpolation between samples.
pub fn kappa_roots(profile: &GainProfile) -> Vec<f64> {
    let w = profile.grid.omegas();
    let k: Vec<f64> = profile.decomposition.iter().map(|m| m.kappa).collect();
    let mut roots = Vec::new();
    for i in 0..k.len().saturating_sub(1) {
        if k[i] == 0.0 {
            roots.push(w[i]);
        } else if k[i].signum() != k[i + 1].signum() && k[i + 1] != 0.0 {
            let t = k[i] / (k[i] - k[i + 1]);
            roots.push(w[i] + t * (w[i + 1] - w[i]));
        }
    }
    if let (Some(&last), Some(&wl)) = (k.last(), w.last()) {
        if last == 0.0 {
            roots.push(wl);
        }
    }
    roots
}

/// Gain profile seen between `z_ref` terminations when the line impedance
/// differs from `z_ref`.
///
/// The amplified wave reflects at each end with `Γ = (Z0 − z_ref)/(Z0 + z_ref)`
/// and returns without gain, so each round trip carries
/// `Γ² sqrt(G) exp(−2jkl)`:
/// `G' = G (1 − Γ²)² / |1 − Γ² sqrt(G) exp(−2jkl)|²`.
pub fn standing_wave_gain(
    profile: &GainProfile,
    op: &OperatingPoint,
    p: &UnitCellParams,
    z_ref: f64,
) -> Result<GainProfile> {
    if !(z_ref > 0.0) {
        return Err(Error::Validation(
            "reference impedance must be positive".into(),
        ));
    }
    let n = op.n_cells as f64;
    let mut gain_db = Vec::with_capacity(profile.grid.len());
    for (&w, &g_db) in profile.grid.omegas().iter().zip(&profile.gain_db) {
        let z0 = characteristic_impedance(w, op.flux, p)?;
        let gamma2 = ((z0 - z_ref) / (z0 + z_ref)).powi(2);
        let amp = crate::units::db_to_ratio(g_db).sqrt();
        let round_trip = Complex64::from_polar(gamma2 * amp, -2.0 * wavenumber(w, op.flux, p)? * n);
        let g =
            amp * amp * (1.0 - gamma2).powi(2) / (Complex64::new(1.0, 0.0) - round_trip).norm_sqr();
        gain_db.push(ratio_to_db(g));
    }
    Ok(GainProfile {
        grid: profile.grid.clone(),
        gain_db,
        decomposition: profile.decomposition.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::Preset;
    use crate::dispersion::{delta_k, dispersion_curve};
    use crate::units::hz_to_rad;

    fn setup() -> (UnitCellParams, OperatingPoint) {
        let p = Preset::JtwpaA.fitted();
        let op = OperatingPoint {
            flux: FluxBias(0.475),
            omega_p: hz_to_rad(6e9),
            pump_power_dbm: -78.0,
            n_cells: 865,
        };
        (p, op)
    }

    #[test]
    fn zero_pump_power() {
        let (p, mut op) = setup();
        op.pump_power_dbm = f64::NEG_INFINITY;
        let pump = pump_amplitude_from_power(&op, &p, &PumpModel::default()).unwrap();
        assert_eq!(pump.amp, 0.0);
        assert_eq!(pump.theta_nl, 0.0);
        let m = mismatch_terms(hz_to_rad(4e9), &op, &pump, &p, Convention::Corrected).unwrap();
        assert_eq!(m.alpha_nl, 0.0);
        assert_eq!(m.kappa_s, 0.0);
        assert_eq!(m.kappa_i, 0.0);
        assert_eq!(m.kappa, m.dk);
        op.pump_power_dbm = f64::NAN;
        assert!(pump_amplitude_from_power(&op, &p, &PumpModel::default()).is_err());
    }

    #[test]
    fn theta_linear_in_power() {
        let (p, op) = setup();
        let model = PumpModel::default();
        let a = pump_amplitude_from_power(&op, &p, &model).unwrap();
        let doubled = OperatingPoint {
            pump_power_dbm: op.pump_power_dbm + 10.0 * 2f64.log10(),
            ..op
        };
        let b = pump_amplitude_from_power(&doubled, &p, &model).unwrap();
        assert!((b.amp.powi(2) / a.amp.powi(2) - 2.0).abs() < 1e-12);
        assert!((b.theta_nl / a.theta_nl - 2.0).abs() < 1e-12);
        assert!(
            a.theta_nl < 0.0,
            "inverse Kerr bias gives a negative self-phase"
        );
        assert!((a.theta_nl - a.alpha_p * 865.0).abs() < 1e-15);
    }

    #[test]
    fn calibration_roundtrips() {
        let (p, op) = setup();
        let conv = Convention::Corrected;
        let truth = PumpModel {
            convention: conv,
            amplitude_scale: 1.0,
        };
        let powers = [-90.0, -86.0, -82.0, -80.0];
        let synth: Vec<(f64, f64)> = powers
            .iter()
            .map(|&dbm| {
                let at = OperatingPoint {
                    pump_power_dbm: dbm,
                    ..op
                };
                (
                    dbm,
                    pump_amplitude_from_power(&at, &p, &truth)
                        .unwrap()
                        .theta_nl
                        .abs(),
                )
            })
            .collect();
        let cal = calibrate_amplitude_scale(&synth, &op, &p, conv).unwrap();
        assert!((cal.scale - 1.0).abs() < 1e-9);
        assert!(cal.residual < 1e-12);

        let doubled: Vec<(f64, f64)> = synth.iter().map(|&(d, t)| (d, 2.0 * t)).collect();
        let cal2 = calibrate_amplitude_scale(&doubled, &op, &p, conv).unwrap();
        assert!((cal2.scale - 2.0).abs() < 1e-6);

        let anchor = calibrate_amplitude_scale(&[(-78.0, 3.1)], &op, &p, conv).unwrap();
        let model = PumpModel {
            convention: conv,
            amplitude_scale: anchor.scale,
        };
        let pump = pump_amplitude_from_power(&op, &p, &model).unwrap();
        assert!((pump.theta_nl.abs() - 3.1).abs() < 1e-12);

        assert!(calibrate_amplitude_scale(&[(-80.0, 1.0), (-80.0, 1.1)], &op, &p, conv).is_err());
    }

    #[test]
    fn linear_limit_and_degenerate_limits() {
        let (p, op) = setup();
        let conv = Convention::Corrected;
        let pump = pump_from_theta(3.1, &op, &p, conv).unwrap();
        assert!((pump.theta_nl + 3.1).abs() < 1e-12);
        let at_pump = mismatch_terms(op.omega_p, &op, &pump, &p, conv).unwrap();
        assert!((at_pump.kappa - 2.0 * pump.alpha_p).abs() < 1e-15);
        assert!(((at_pump.kappa_s * at_pump.kappa_i).sqrt() - pump.alpha_p.abs()).abs() < 1e-15);
        assert!(at_pump.g.norm() < 1e-9);
        let near = mismatch_terms(op.omega_p * (1.0 + 1e-7), &op, &pump, &p, conv).unwrap();
        assert!((near.kappa - 2.0 * pump.alpha_p).abs() < 1e-9);
        assert!(((near.kappa_s * near.kappa_i).sqrt() - pump.alpha_p.abs()).abs() < 1e-9);
        assert!(near.g.norm() < 1e-5);
        // continuity through the degenerate point
        let g_pump = at_pump.gain(865.0);
        assert!((g_pump - (1.0 + 3.1f64.powi(2))).abs() < 1e-9);
        assert!((near.gain(865.0) - g_pump).abs() < 1e-3);
    }

    #[test]
    fn as_printed_breaks_the_degenerate_limit() {
        let (p, op) = setup();
        let pump = pump_from_theta(3.1, &op, &p, Convention::AsPrinted).unwrap();
        let m = mismatch_terms(op.omega_p, &op, &pump, &p, Convention::AsPrinted).unwrap();
        let kp = wavenumber(op.omega_p, op.flux, &p).unwrap();
        // α_s(ωp) = 2α_p / k_p under the printed exponents, so κ(ωp) ≠ 2α_p
        let expected = 2.0 * pump.alpha_p * (2.0 / kp - 1.0);
        assert!((m.kappa - expected).abs() < 1e-12 * m.kappa.abs());
        assert!((m.kappa - 2.0 * pump.alpha_p).abs() > 0.1 * m.kappa.abs());
    }

    #[test]
    fn kappa_sign_bookkeeping() {
        let (p, op) = setup();
        let conv = Convention::Corrected;
        let grid = FrequencyGrid::linspace_hz(1.0e9, 11.0e9, 201).unwrap();

        let positive = OperatingPoint {
            flux: FluxBias(0.0),
            ..op
        };
        let pump = pump_from_theta(3.1, &positive, &p, conv).unwrap();
        for &w in grid.omegas() {
            let m = mismatch_terms(w, &positive, &pump, &p, conv).unwrap();
            if w != positive.omega_p {
                assert!(m.dk > 0.0);
                assert!(m.alpha_nl > 0.0);
                assert!(m.kappa > 0.0);
            }
        }
        assert!(phase_match_frequencies(&positive, &pump, &p, conv)
            .unwrap()
            .is_empty());

        let pump = pump_from_theta(3.1, &op, &p, conv).unwrap();
        let signs: Vec<f64> = grid
            .omegas()
            .iter()
            .map(|&w| {
                mismatch_terms(w, &op, &pump, &p, conv)
                    .unwrap()
                    .kappa
                    .signum()
            })
            .collect();
        assert!(signs.windows(2).any(|s| s[0] != s[1]));
    }

    #[test]
    fn roots_for_representative_bias() {
        let (p, op) = setup();
        let conv = Convention::Corrected;
        let pump = pump_from_theta(3.1, &op, &p, conv).unwrap();
        let roots = phase_match_frequencies(&op, &pump, &p, conv).unwrap();
        assert_eq!(roots.len(), 1);
        let (lo, hi) = roots[0];
        assert!((lo + hi - 2.0 * op.omega_p).abs() < hz_to_rad(1e3));
        let lo_ghz = lo / hz_to_rad(1e9);
        assert!((3.0..4.5).contains(&lo_ghz), "{lo_ghz}");
        let m = mismatch_terms(lo, &op, &pump, &p, conv).unwrap();
        assert!(m.kappa.abs() < 1e-6);
        assert!(m.gain(865.0) >= 1.0);
    }

    #[test]
    fn zero_length_and_closed_form_limits() {
        let (p, op) = setup();
        let conv = Convention::Corrected;
        let pump = pump_from_theta(3.1, &op, &p, conv).unwrap();
        let grid = FrequencyGrid::linspace_hz(2.0e9, 10.0e9, 81).unwrap();
        let g0 = gain_at_length(&grid, &op, &pump, &p, conv, 0.0).unwrap();
        assert!(g0.gain_db.iter().all(|g| g.abs() < 1e-12));

        let alpha = 3.1 / 865.0;
        let phase_matched = power_gain(0.0, Complex64::new(alpha, 0.0), 865.0);
        assert!((ratio_to_db(phase_matched) - 20.9).abs() < 0.1);
        let z = 20.0;
        let quad = power_gain(2.0 * alpha, Complex64::new(0.0, 0.0), z);
        assert!((quad - (1.0 + (alpha * z).powi(2))).abs() < 1e-15);
        // imaginary g gives the trigonometric form
        let gi = Complex64::new(0.0, 0.01);
        let kap = 0.05;
        let trig = (0.01f64 * 100.0).cos().powi(2)
            + (kap / 0.02f64).powi(2) * (0.01f64 * 100.0).sin().powi(2);
        assert!((power_gain(kap, gi, 100.0) - trig).abs() < 1e-12);
    }

    #[test]
    fn ode_matches_closed_form() {
        let (p, op) = setup();
        let conv = Convention::Corrected;
        let pump = pump_from_theta(3.1, &op, &p, conv).unwrap();
        for ghz in [2.5, 3.8, 5.0, 5.99, 7.3, 9.0] {
            let w = hz_to_rad(ghz * 1e9);
            let sol = integrate_cme(
                w,
                &op,
                &pump,
                &p,
                conv,
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
                &CmeOptions::default(),
            )
            .unwrap();
            assert_eq!(sol.z.len(), 866);
            let closed = sol.terms.gain(865.0);
            assert!(
                (sol.signal_gain() - closed).abs() / closed < 1e-6,
                "{ghz}: {} vs {closed}",
                sol.signal_gain()
            );
        }
    }

    #[test]
    fn uncoupled_amplitudes_are_constant() {
        let terms = MismatchPoint::from_terms(1.0, 0.01, 0.0, 0.0, 0.0);
        let a = Complex64::new(0.3, -0.2);
        let b = Complex64::new(0.1, 0.4);
        let sol = integrate_terms(&terms, 100, a, b, &CmeOptions::default()).unwrap();
        assert!(sol.a_s.iter().all(|x| (*x - a).norm() < 1e-15));
        assert!(sol.a_i.iter().all(|x| (*x - b).norm() < 1e-15));
    }

    #[test]
    fn integration_failure_is_reported() {
        let terms = MismatchPoint::from_terms(1.0, 0.0, 0.0, 0.5, 0.5);
        let opts = CmeOptions {
            rtol: 1e-10,
            max_steps: 3,
        };
        let err = integrate_terms(
            &terms,
            100,
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, Error::IntegrationFailure { .. }));
    }

    #[test]
    fn measured_roundtrip_and_asymmetry() {
        let (p, op) = setup();
        let conv = Convention::Corrected;
        let pump = pump_from_theta(3.1, &op, &p, conv).unwrap();
        // grid symmetric about the pump so every idler is a grid point
        let hz: Vec<f64> = (0..=160).map(|i| 2.0e9 + 0.05e9 * i as f64).collect();
        let grid = FrequencyGrid::from_hz(&hz).unwrap();
        let model = analytic_gain(&grid, &op, &pump, &p, conv).unwrap();
        let k_curve = dispersion_curve(&grid, op.flux, &p).unwrap();
        let traces = MeasuredMismatch {
            grid: grid.clone(),
            dk: model.decomposition.iter().map(|m| m.dk).collect(),
            alpha_nl: model.decomposition.iter().map(|m| m.alpha_nl).collect(),
        };
        let rebuilt =
            gain_from_measured_mismatch(&traces, &k_curve, op.omega_p, 865, &pump).unwrap();
        for (a, b) in rebuilt.gain_db.iter().zip(&model.gain_db) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }

        let silent = MeasuredMismatch {
            alpha_nl: vec![0.0; grid.len()],
            ..traces.clone()
        };
        let off = PumpState {
            amp: 0.0,
            alpha_p: 0.0,
            theta_nl: 0.0,
        };
        let flat = gain_from_measured_mismatch(&silent, &k_curve, op.omega_p, 865, &off).unwrap();
        assert!(flat.gain_db.iter().all(|g| g.abs() < 1e-12));

        // tilt Δk so the upper root moves inward, the lower root outward
        let tilted = MeasuredMismatch {
            dk: grid
                .omegas()
                .iter()
                .zip(&traces.dk)
                .map(|(&w, &dk)| dk - 2e-3 * (w - op.omega_p) / op.omega_p)
                .collect(),
            ..traces.clone()
        };
        let prof = gain_from_measured_mismatch(&tilted, &k_curve, op.omega_p, 865, &pump).unwrap();
        let roots = kappa_roots(&prof);
        assert_eq!(roots.len(), 2);
        let asym = (roots[0] + roots[1]) / 2.0 - op.omega_p;
        assert!(asym.abs() > hz_to_rad(50e6), "{asym}");

        let short = MeasuredMismatch {
            dk: vec![0.0; 3],
            ..traces
        };
        assert!(gain_from_measured_mismatch(&short, &k_curve, op.omega_p, 865, &pump).is_err());
    }

    #[test]
    fn mirror_symmetry_of_model_profile() {
        let (p, op) = setup();
        let conv = Convention::Corrected;
        let pump = pump_from_theta(3.1, &op, &p, conv).unwrap();
        for ghz in [2.0, 3.3, 4.1, 5.5] {
            let w = hz_to_rad(ghz * 1e9);
            let a = mismatch_terms(w, &op, &pump, &p, conv).unwrap();
            let b = mismatch_terms(2.0 * op.omega_p - w, &op, &pump, &p, conv).unwrap();
            assert!((a.gain(865.0) - b.gain(865.0)).abs() < 1e-9 * a.gain(865.0));
            assert!((a.dk - delta_k(w, op.omega_p, op.flux, &p).unwrap()).abs() < 1e-15);
        }
    }
    #[test]
    fn standing_waves_vanish_when_matched() {
        let p = Preset::JtwpaA.fitted();
        let op = OperatingPoint {
            flux: FluxBias(0.475),
            omega_p: hz_to_rad(6e9),
            pump_power_dbm: -78.0,
            n_cells: 865,
        };
        let pump = pump_from_theta(3.1, &op, &p, Convention::Corrected).unwrap();
        let grid = FrequencyGrid::linspace_hz(3e9, 5e9, 50).unwrap();
        let bare = analytic_gain(&grid, &op, &pump, &p, Convention::Corrected).unwrap();
        let z0 = characteristic_impedance(hz_to_rad(4e9), op.flux, &p).unwrap();
        let single = FrequencyGrid::from_hz(&[4e9]).unwrap();
        let bare4 = analytic_gain(&single, &op, &pump, &p, Convention::Corrected).unwrap();
        let matched = standing_wave_gain(&bare4, &op, &p, z0).unwrap();
        assert!((matched.gain_db[0] - bare4.gain_db[0]).abs() < 1e-12);
        // unpumped and mismatched: the lossless-line Fabry-Perot formula
        let off = pump_from_theta(0.0, &op, &p, Convention::Corrected).unwrap();
        let flat = analytic_gain(&grid, &op, &off, &p, Convention::Corrected).unwrap();
        let dressed = standing_wave_gain(&flat, &op, &p, 50.0).unwrap();
        assert!(dressed.gain_db.iter().all(|g| *g <= 1e-12));
        let pumped = standing_wave_gain(&bare, &op, &p, 50.0).unwrap();
        assert!(pumped
            .gain_db
            .iter()
            .zip(&bare.gain_db)
            .any(|(a, b)| (a - b).abs() > 1e-3));
    }
}
