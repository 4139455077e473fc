//! Parameter extraction and measurement analysis.
//!
//! Thru-line calibration, phase-to-wavenumber extraction, the dispersion
//! fit, the nonlinear-phase slope fit, ripple statistics and the Y-factor
//! and SNR-improvement noise calculations.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::cell::{FluxBias, UnitCellParams};
use crate::cme::{kappa_roots, GainProfile};
use crate::csvio;
use crate::dispersion::{
    plasma_frequency, unwrap_phase_from_dc, wavenumber, ComplexTrace, FrequencyGrid,
};
use crate::error::{Error, Result};
use crate::units::{dbm_to_watts, rad_to_hz, ratio_to_db, HBAR, K_B};

/// Smallest thru magnitude accepted by [`calibrate_thru`].
pub const THRU_NULL: f64 = 1e-12;

/// Pointwise `raw / thru`.
pub fn calibrate_thru(raw: &ComplexTrace, thru: &ComplexTrace) -> Result<ComplexTrace> {
    if raw.grid != thru.grid {
        return Err(Error::Validation(
            "raw and thru traces must share a frequency grid".into(),
        ));
    }
    let mut values = Vec::with_capacity(raw.len());
    for (i, (r, t)) in raw.values.iter().zip(&thru.values).enumerate() {
        if t.norm() < THRU_NULL {
            return Err(Error::ThruNull {
                index: i,
                freq_hz: rad_to_hz(raw.grid.omegas()[i]),
                magnitude: t.norm(),
            });
        }
        values.push(r / t);
    }
    ComplexTrace::new(raw.grid.clone(), values)
}

/// Electrical length `k·l` (rad) on a frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlTrace {
    #[serde(skip)]
    pub grid: FrequencyGrid,
    pub kl: Vec<f64>,
}

impl KlTrace {
    pub fn new(grid: FrequencyGrid, kl: Vec<f64>) -> Result<Self> {
        if grid.len() != kl.len() {
            return Err(Error::Validation(format!(
                "grid has {} points but k·l has {}",
                grid.len(),
                kl.len()
            )));
        }
        Ok(Self { grid, kl })
    }

    /// Same data for a line `factor` times longer.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            kl: self.kl.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Unwraps the transmission phase from DC and returns `k·l = −∠S21`.
pub fn extract_kl(trace: &ComplexTrace) -> Result<KlTrace> {
    let phase = unwrap_phase_from_dc(trace.grid.omegas(), &trace.values)?;
    KlTrace::new(trace.grid.clone(), phase.into_iter().map(|p| -p).collect())
}

/// A k·l trace measured at one flux bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxTrace {
    pub flux: FluxBias,
    pub kl: KlTrace,
}

/// Parameters held fixed in [`fit_dispersion`].
///
/// `Cgnd` always anchors the scale: k·l depends on `I0`, `C0` and `Cgnd`
/// only through `L0 Cgnd` and `L0 C0`, so it is taken from `init`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct KnownParams {
    /// Fixed junction ratio; `None` fits it (needs two or more flux biases).
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispersionFit {
    pub params: UnitCellParams,
    /// Names of the fitted parameters, in covariance order.
    pub names: Vec<&'static str>,
    /// 1-σ uncertainties in SI units, in `names` order.
    pub sigma: Vec<f64>,
    /// Row-major covariance, in `names` order.
    pub covariance: Vec<Vec<f64>>,
    /// Root-mean-square residual (rad).
    pub rms_residual: f64,
    pub iterations: usize,
    /// Model minus data per trace point (rad).
    pub residuals: Vec<f64>,
}

const LM_MAX_ITERATIONS: usize = 200;

/// Nonlinear least squares of the chromatic dispersion relation over `I0`,
/// `C0` and optionally `r`, with uniform weights.
pub fn fit_dispersion(
    data: &[FluxTrace],
    n_cells: usize,
    known: &KnownParams,
    init: &UnitCellParams,
) -> Result<DispersionFit> {
    init.validate()?;
    if n_cells == 0 {
        return Err(Error::Validation("n_cells must be >= 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Validation("no k·l traces supplied".into()));
    }
    let fit_r = known.r.is_none();
    if fit_r {
        let mut fluxes: Vec<f64> = data.iter().map(|d| d.flux.value()).collect();
        fluxes.sort_by(f64::total_cmp);
        fluxes.dedup();
        if fluxes.len() < 2 {
            return Err(Error::Validation(
                "fitting r needs traces at two or more flux biases".into(),
            ));
        }
    }
    let mut base = *init;
    if let Some(r) = known.r {
        base.r = r;
    }
    base.validate()?;

    let mut usable = 0;
    for d in data {
        if d.kl.kl.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Validation(
                "k·l must be positive at every point (zero-phase data cannot be fitted)".into(),
            ));
        }
        let limit = 0.8 * plasma_frequency(d.flux, &base)?;
        usable += d.kl.grid.omegas().iter().filter(|w| **w < limit).count();
    }
    if usable < 10 {
        return Err(Error::Validation(format!(
            "{usable} points below 0.8·ω_plasma, at least 10 needed"
        )));
    }

    let names: Vec<&'static str> = if fit_r {
        vec!["i0", "c0", "r"]
    } else {
        vec!["i0", "c0"]
    };
    let scales: Vec<f64> = if fit_r {
        vec![base.i0, base.c0, base.r]
    } else {
        vec![base.i0, base.c0]
    };
    let apply = |x: &[f64]| -> UnitCellParams {
        let mut p = base;
        p.i0 = scales[0] * x[0];
        p.c0 = scales[1] * x[1];
        if fit_r {
            p.r = scales[2] * x[2];
        }
        p
    };
    let residuals = |x: &[f64]| -> Result<Vec<f64>> {
        let p = apply(x);
        p.validate()?;
        let mut out = Vec::new();
        for d in data {
            for (w, kl) in d.kl.grid.omegas().iter().zip(&d.kl.kl) {
                out.push(n_cells as f64 * wavenumber(*w, d.flux, &p)? - kl);
            }
        }
        Ok(out)
    };

    let x0 = vec![1.0; names.len()];
    let (x, iterations, res, jac) = levenberg_marquardt(&residuals, x0)?;

    let m = res.len();
    let n = x.len();
    let rss: f64 = res.iter().map(|r| r * r).sum();
    let jtj = &jac.transpose() * &jac;
    let inv = jtj.clone().try_inverse().ok_or_else(|| {
        Error::Validation(
            "dispersion fit Jacobian is singular; parameters are not identifiable".into(),
        )
    })?;
    let s2 = if m > n { rss / (m - n) as f64 } else { 0.0 };
    let covariance: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| s2 * inv[(i, j)] * scales[i] * scales[j])
                .collect()
        })
        .collect();
    let sigma = (0..n).map(|i| covariance[i][i].max(0.0).sqrt()).collect();
    Ok(DispersionFit {
        params: apply(&x),
        names,
        sigma,
        covariance,
        rms_residual: (rss / m as f64).sqrt(),
        iterations,
        residuals: res,
    })
}

type LmOutcome = (Vec<f64>, usize, Vec<f64>, DMatrix<f64>);

fn numeric_jacobian(
    f: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    x: &[f64],
    m: usize,
) -> Result<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(m, x.len());
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1e-3);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (f(&xp)?, f(&xm)?);
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Marquardt-scaled Levenberg–Marquardt; trial points where the model
/// cannot be evaluated count as rejected steps.
fn levenberg_marquardt(
    f: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    mut x: Vec<f64>,
) -> Result<LmOutcome> {
    let cost = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut r = f(&x)?;
    let m = r.len();
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    let mut history = vec![c];
    for iteration in 1..=LM_MAX_ITERATIONS {
        let jac = numeric_jacobian(f, &x, m)?;
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * DVector::from_vec(r.clone());
        let mut accepted = false;
        let mut small_step = false;
        while lambda < 1e12 {
            let mut damped = a.clone();
            for i in 0..x.len() {
                damped[(i, i)] += lambda * a[(i, i)].max(1e-300);
            }
            let Some(step) = damped.lu().solve(&(-&g)) else {
                lambda *= 4.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            match f(&trial) {
                Ok(rt) if cost(&rt) <= c => {
                    let ct = cost(&rt);
                    small_step = step.norm() <= 1e-12 * (1.0 + DVector::from_vec(x.clone()).norm())
                        || c - ct <= 1e-15 * c;
                    x = trial;
                    r = rt;
                    c = ct;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    break;
                }
                _ => lambda *= 4.0,
            }
        }
        history.push(c);
        if !accepted || small_step || c == 0.0 {
            let jac = numeric_jacobian(f, &x, m)?;
            return Ok((x, iteration, r, jac));
        }
    }
    Err(Error::FitNonConvergence {
        iterations: LM_MAX_ITERATIONS,
        history,
    })
}

/// Relative residual tolerated inside the linear region.
pub const LINEAR_TRIM_TOLERANCE: f64 = 0.02;
/// Relative residual marking departure from linearity.
pub const DEPARTURE_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaSlope {
    /// Slope of θ_NL against pump power (rad/pW).
    pub slope_rad_per_pw: f64,
    pub intercept_rad: f64,
    /// Points kept in the linear region.
    pub n_linear: usize,
    /// First power (dBm) whose residual exceeds 5% of the fit; `None` if none.
    pub departure_dbm: Option<f64>,
}

fn affine_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits the low-power affine region of θ_NL versus pump power.
///
/// Points are sorted by power; the highest-power point is dropped until
/// every residual is within 2% of the fitted value.
pub fn fit_theta_slope(points: &[(f64, f64)]) -> Result<ThetaSlope> {
    if points.len() < 4 {
        return Err(Error::Validation(format!(
            "{} points given, at least 4 needed",
            points.len()
        )));
    }
    if points.iter().any(|(p, t)| !p.is_finite() || !t.is_finite()) {
        return Err(Error::Validation("non-finite θ_NL point".into()));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pw: Vec<f64> = sorted
        .iter()
        .map(|(dbm, _)| dbm_to_watts(*dbm) * 1e12)
        .collect();
    let theta: Vec<f64> = sorted.iter().map(|(_, t)| *t).collect();
    let relative = |slope: f64, icpt: f64, i: usize| {
        let fit = slope * pw[i] + icpt;
        ((theta[i] - fit) / fit).abs()
    };

    let mut kept = pw.len();
    loop {
        if kept < 3 {
            return Err(Error::NoLinearRegion { remaining: kept });
        }
        let (slope, icpt) = affine_fit(&pw[..kept], &theta[..kept]);
        if (0..kept).all(|i| relative(slope, icpt, i) < LINEAR_TRIM_TOLERANCE) {
            let departure = (0..pw.len())
                .find(|&i| relative(slope, icpt, i) > DEPARTURE_TOLERANCE)
                .map(|i| sorted[i].0);
            return Ok(ThetaSlope {
                slope_rad_per_pw: slope,
                intercept_rad: icpt,
                n_linear: kept,
                departure_dbm: departure,
            });
        }
        kept -= 1;
    }
}

/// One Y-factor sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoisePoint {
    pub omega: f64,
    pub temp_k: f64,
    pub p_watts: f64,
}

/// Reads `(freq_hz, temp_k, p_watts)` rows.
pub fn load_noise_csv(path: &Path) -> Result<Vec<NoisePoint>> {
    let rows = csvio::read_columns(path, &["freq_hz", "temp_k", "p_watts"], &[])?;
    Ok(rows
        .iter()
        .map(|r| NoisePoint {
            omega: crate::units::hz_to_rad(r[0]),
            temp_k: r[1],
            p_watts: r[2],
        })
        .collect())
}

pub fn write_noise_csv<W: Write>(points: &[NoisePoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(["freq_hz", "temp_k", "p_watts"])
        .map_err(io)?;
    for p in points {
        w.write_record(&[
            format!("{:.6}", rad_to_hz(p.omega)),
            format!("{:.9e}", p.temp_k),
            format!("{:.12e}", p.p_watts),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Symmetrized source term `(ħω/2) coth(ħω / 2 kB T)` (J).
pub fn quantum_source_term(omega: f64, temp_k: f64) -> f64 {
    let half = 0.5 * HBAR * omega;
    if temp_k <= 0.0 {
        return half;
    }
    half / (half / (K_B * temp_k)).tanh()
}

/// Readout-chain noise referenced to its input, per frequency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseModel {
    pub omegas: Vec<f64>,
    /// Effective HEMT noise temperature (K).
    pub t_hemt: Vec<f64>,
    /// Gain–bandwidth scale `G·B` (W/J).
    pub gb: Vec<f64>,
    /// Measurement bandwidth (Hz).
    pub b: f64,
}

impl NoiseModel {
    pub fn new(omegas: Vec<f64>, t_hemt: Vec<f64>, gb: Vec<f64>, b: f64) -> Result<Self> {
        if omegas.len() != t_hemt.len() || omegas.len() != gb.len() {
            return Err(Error::Validation(
                "noise model columns differ in length".into(),
            ));
        }
        if t_hemt.iter().any(|t| !(*t > 0.0)) || gb.iter().any(|g| !(*g > 0.0)) || !(b > 0.0) {
            return Err(Error::Validation(
                "T_HEMT, G·B and B must be positive".into(),
            ));
        }
        Ok(Self {
            omegas,
            t_hemt,
            gb,
            b,
        })
    }

    /// Predicted noise power at `index` for a source at `temp_k` (W).
    pub fn power(&self, index: usize, temp_k: f64) -> f64 {
        let w = self.omegas[index];
        (quantum_source_term(w, temp_k) + K_B * self.t_hemt[index]) * self.gb[index]
    }
}

/// Frequency whose Y-factor fit failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitFailure {
    pub freq_hz: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YFactorFit {
    pub model: NoiseModel,
    pub failures: Vec<FitFailure>,
}

fn yfactor_single(omega: f64, points: &[NoisePoint]) -> Result<(f64, f64)> {
    let ill = |reason: String| Error::IllConditioned { omega, reason };
    if points.len() < 3 {
        return Err(ill(format!(
            "{} temperatures, at least 3 needed",
            points.len()
        )));
    }
    let t_min = points
        .iter()
        .map(|p| p.temp_k)
        .fold(f64::INFINITY, f64::min);
    let t_max = points.iter().map(|p| p.temp_k).fold(0.0, f64::max);
    if !(t_min > 0.0) || t_max < 5.0 * t_min {
        return Err(ill(format!(
            "temperatures span {t_min}–{t_max} K, a factor 5 is needed"
        )));
    }
    let q: Vec<f64> = points
        .iter()
        .map(|p| quantum_source_term(omega, p.temp_k))
        .collect();
    let pw: Vec<f64> = points.iter().map(|p| p.p_watts).collect();
    let (gb, offset) = affine_fit(&q, &pw);
    if !(gb > 0.0) {
        return Err(ill("noise power does not rise with temperature".into()));
    }
    let t_hemt = offset / (gb * K_B);
    if !(t_hemt > 0.0) {
        return Err(ill(format!("fitted T_HEMT = {t_hemt} K is not positive")));
    }
    Ok((t_hemt, gb))
}

/// Per-frequency least squares of `P = [q(T) + kB T_HEMT]·G·B`.
///
/// Points sharing an `omega` value form one fit. Frequencies that cannot be
/// fitted are listed in `failures`; the call errors only if none succeed.
pub fn yfactor_fit(data: &[NoisePoint], b: f64) -> Result<YFactorFit> {
    if !(b > 0.0) {
        return Err(Error::Validation(
            "measurement bandwidth must be positive".into(),
        ));
    }
    let mut omegas: Vec<f64> = data.iter().map(|p| p.omega).collect();
    omegas.sort_by(f64::total_cmp);
    omegas.dedup();
    let (mut ws, mut ts, mut gbs, mut failures) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for w in omegas {
        let group: Vec<NoisePoint> = data.iter().filter(|p| p.omega == w).copied().collect();
        match yfactor_single(w, &group) {
            Ok((t, gb)) => {
                ws.push(w);
                ts.push(t);
                gbs.push(gb);
            }
            Err(e) => failures.push(FitFailure {
                freq_hz: rad_to_hz(w),
                message: e.to_string(),
            }),
        }
    }
    if ws.is_empty() {
        return Err(Error::Validation(format!(
            "Y-factor fit failed at every frequency ({} failures)",
            failures.len()
        )));
    }
    Ok(YFactorFit {
        model: NoiseModel::new(ws, ts, gbs, b)?,
        failures,
    })
}

/// Noise temperatures and photon numbers per model frequency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseResult {
    pub omegas: Vec<f64>,
    pub t_system: Vec<f64>,
    pub t_jtwpa: Vec<f64>,
    pub n_system: Vec<f64>,
    pub n_jtwpa: Vec<f64>,
    pub n_hemt: Vec<f64>,
    /// `g_noise < 1` at this point; `t_jtwpa` is clamped to zero.
    pub nonphysical: Vec<bool>,
}

/// `N = kB T / ħω`.
pub fn kelvin_to_photons(temp_k: f64, omega: f64) -> f64 {
    K_B * temp_k / (HBAR * omega)
}

/// System and amplifier noise from the SNR-improvement method.
pub fn snr_noise(g_noise: &[f64], g_jtwpa: &[f64], nm: &NoiseModel) -> Result<NoiseResult> {
    let n = nm.omegas.len();
    if g_noise.len() != n || g_jtwpa.len() != n {
        return Err(Error::Validation(format!(
            "gain columns must have {n} entries to match the noise model"
        )));
    }
    let mut out = NoiseResult {
        omegas: nm.omegas.clone(),
        t_system: Vec::with_capacity(n),
        t_jtwpa: Vec::with_capacity(n),
        n_system: Vec::with_capacity(n),
        n_jtwpa: Vec::with_capacity(n),
        n_hemt: Vec::with_capacity(n),
        nonphysical: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (gn, gj, th, w) = (g_noise[i], g_jtwpa[i], nm.t_hemt[i], nm.omegas[i]);
        if !(gj > 0.0) || !gn.is_finite() {
            return Err(Error::Validation(format!(
                "invalid gains at index {i}: g_noise={gn}, g_jtwpa={gj}"
            )));
        }
        let t_sys = gn * th / gj;
        let flagged = gn < 1.0;
        let t_j = if flagged { 0.0 } else { th * (gn - 1.0) / gj };
        out.t_system.push(t_sys);
        out.t_jtwpa.push(t_j);
        out.n_system.push(kelvin_to_photons(t_sys, w));
        out.n_jtwpa.push(kelvin_to_photons(t_j, w));
        out.n_hemt.push(kelvin_to_photons(th, w));
        out.nonphysical.push(flagged);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RippleStats {
    /// Band edges (Hz).
    pub band: (f64, f64),
    /// Mean linear gain over the band.
    pub mean_gain: f64,
    /// `Var[G/mean(G)]` over the band.
    pub variance_normalized: f64,
    pub points: usize,
}

/// Normalized gain variance of `gp` between `band.0` and `band.1` (Hz).
pub fn ripple_variance(gp: &GainProfile, band: (f64, f64)) -> Result<RippleStats> {
    let (lo, hi) = band;
    let hz: Vec<f64> = gp.grid.hz().collect();
    if !(lo < hi) || lo < hz[0] || hi > hz[hz.len() - 1] {
        return Err(Error::Validation(format!(
            "band {lo}–{hi} Hz is not inside the profile grid"
        )));
    }
    let gains: Vec<f64> = hz
        .iter()
        .zip(gp.linear_gain())
        .filter(|(f, _)| **f >= lo && **f <= hi)
        .map(|(_, g)| g)
        .collect();
    if gains.len() < 20 {
        return Err(Error::Validation(format!(
            "{} points in band, at least 20 needed",
            gains.len()
        )));
    }
    let n = gains.len() as f64;
    let mean = gains.iter().sum::<f64>() / n;
    let variance = gains.iter().map(|g| (g / mean - 1.0).powi(2)).sum::<f64>() / n;
    Ok(RippleStats {
        band,
        mean_gain: mean,
        variance_normalized: variance,
        points: gains.len(),
    })
}

/// Contiguous spans (Hz) with gain at or above `peak − 3 dB` that contain a
/// `κ = 0` root, one per root.
pub fn phase_matched_bands(gp: &GainProfile) -> Vec<(f64, f64)> {
    let hz: Vec<f64> = gp.grid.hz().collect();
    let (_, peak) = gp.peak();
    let level = peak - 3.0;
    let mut bands: Vec<(f64, f64)> = Vec::new();
    for root in kappa_roots(gp) {
        let root_hz = rad_to_hz(root);
        let Some(i) = hz.iter().position(|f| *f >= root_hz) else {
            continue;
        };
        let i = if i > 0 && (hz[i] - root_hz) > (root_hz - hz[i - 1]) {
            i - 1
        } else {
            i
        };
        if gp.gain_db[i] < level {
            continue;
        }
        let mut a = i;
        while a > 0 && gp.gain_db[a - 1] >= level {
            a -= 1;
        }
        let mut b = i;
        while b + 1 < hz.len() && gp.gain_db[b + 1] >= level {
            b += 1;
        }
        let band = (hz[a], hz[b]);
        if !bands.contains(&band) {
            bands.push(band);
        }
    }
    bands
}

/// Widths (Hz) of contiguous spans at or above `peak − 3 dB`.
pub fn lobe_widths(gp: &GainProfile) -> Vec<(f64, f64)> {
    let hz: Vec<f64> = gp.grid.hz().collect();
    let (_, peak) = gp.peak();
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..hz.len() {
        let inside = gp.gain_db[i] >= peak - 3.0;
        match (inside, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((hz[s], hz[i - 1]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((hz[s], hz[hz.len() - 1]));
    }
    out
}

/// Mean linear gain over a band, in dB.
pub fn mean_gain_db(stats: &RippleStats) -> f64 {
    ratio_to_db(stats.mean_gain)
}

/// `raw · thru` built for synthetic calibration data.
pub fn apply_cable(device: &ComplexTrace, cable: &[Complex64]) -> Result<ComplexTrace> {
    if cable.len() != device.len() {
        return Err(Error::Validation(
            "cable response length differs from the trace".into(),
        ));
    }
    ComplexTrace::new(
        device.grid.clone(),
        device
            .values
            .iter()
            .zip(cable)
            .map(|(a, b)| a * b)
            .collect(),
    )
}
