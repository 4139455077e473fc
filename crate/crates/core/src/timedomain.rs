//! Large-signal transient simulation of the nonlinear ladder.
//!
//! The line is `n_cells` series branches between `n_cells + 1` nodes. Each
//! branch is the cell's nonlinear inductor (current from
//! [`branch_current`]) shunted by the junction capacitance `C0 (r/2 + 2)`.
//! Each node sees `Cgnd` to ground, halved at the two end nodes so the
//! ladder is the same symmetric cascade as the ABCD model. A Thevenin
//! source drives node 0 through `z_source`; node `n_cells` is loaded by
//! `z_load`.
//!
//! State: node voltages, branch phases (`φ0 dφ/dt = ΔV`) and, in
//! [`LossMode::PerCellRc`], the voltage on each node's loss capacitor. The
//! junction capacitances couple neighbouring `dV/dt`, so each derivative
//! evaluation solves a constant tridiagonal system.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{branch_current, linear_inductance, shunt_conductance, FluxBias, UnitCellParams};
use crate::cme::{GainProfile, OperatingPoint};
use crate::dispersion::{plasma_frequency, FrequencyGrid};
use crate::error::{Error, Result};
use crate::units::{dbm_to_watts, rad_to_hz, watts_to_dbm, REDUCED_FLUX_QUANTUM};

/// Fraction of every run discarded as start-up transient.
pub const DISCARD_FRACTION: f64 = 0.2;
/// Sources ramp up with a raised cosine over this fraction of the run.
const RAMP_FRACTION: f64 = 0.1;
/// Node voltage treated as divergence (V).
const BLOW_UP_VOLTS: f64 = 1e3;
/// Minimum number of tone periods in an extraction window.
pub const MIN_PERIODS: f64 = 20.0;

/// Causal stand-ins for the dielectric loss `G = ω Cgnd tanδ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum LossMode {
    Off,
    /// Constant conductance evaluated at `omega` (normally the pump).
    FixedAtPump {
        omega: f64,
    },
    /// Series R–C branch per node whose conductance rises as ω near
    /// `omega` and matches `ω Cgnd tanδ` there.
    PerCellRc {
        omega: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    pub p: UnitCellParams,
    pub flux: FluxBias,
    pub n_cells: usize,
    pub z_source: f64,
    pub z_load: f64,
    /// Integration step (s).
    pub dt: f64,
    /// Run length (s), including the discarded start-up.
    pub t_total: f64,
    pub loss_mode: LossMode,
}

impl LadderConfig {
    /// 50 Ω terminations, `dt = 1/(64 f_plasma)` and a run long enough for a
    /// 5 MHz resolution bandwidth after the start-up discard.
    pub fn new(p: UnitCellParams, flux: FluxBias, n_cells: usize) -> Result<Self> {
        let f_plasma = rad_to_hz(plasma_frequency(flux, &p)?);
        Ok(Self {
            p,
            flux,
            n_cells,
            z_source: 50.0,
            z_load: 50.0,
            dt: 1.0 / (64.0 * f_plasma),
            t_total: 200e-9 / (1.0 - DISCARD_FRACTION),
            loss_mode: LossMode::Off,
        })
    }

    pub fn with_loss(mut self, loss_mode: LossMode) -> Self {
        self.loss_mode = loss_mode;
        self
    }

    pub fn with_duration(mut self, t_total: f64) -> Self {
        self.t_total = t_total;
        self
    }

    /// Low-frequency group delay through the line (s).
    pub fn transit_time(&self) -> Result<f64> {
        let l = linear_inductance(self.flux, &self.p)?;
        Ok(self.n_cells as f64 * (l * self.p.cgnd).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        self.p.validate()?;
        if self.n_cells == 0 {
            return Err(Error::Validation("n_cells must be >= 1".into()));
        }
        if !(self.z_source > 0.0 && self.z_load > 0.0) {
            return Err(Error::Validation("terminations must be positive".into()));
        }
        let f_plasma = rad_to_hz(plasma_frequency(self.flux, &self.p)?);
        if !(self.dt > 0.0 && self.dt < 0.05 / f_plasma) {
            return Err(Error::Validation(format!(
                "dt = {:e} s must be below 0.05/f_plasma = {:e} s",
                self.dt,
                0.05 / f_plasma
            )));
        }
        let transit = self.transit_time()?;
        if !(self.t_total > 10.0 * transit) {
            return Err(Error::Validation(format!(
                "t_total = {:e} s must exceed ten transit times ({:e} s)",
                self.t_total,
                10.0 * transit
            )));
        }
        Ok(())
    }
}

/// One drive tone: angular frequency, available power and phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub omega: f64,
    pub power_dbm: f64,
    pub phase: f64,
}

/// Thevenin sum of tones behind the source impedance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ToneSource {
    pub tones: Vec<Tone>,
}

impl ToneSource {
    pub fn new(tones: Vec<Tone>) -> Result<Self> {
        for (i, t) in tones.iter().enumerate() {
            if !(t.omega > 0.0 && t.omega.is_finite()) {
                return Err(Error::Validation(format!(
                    "tone {i} has non-positive frequency"
                )));
            }
            if t.power_dbm.is_nan() || t.power_dbm == f64::INFINITY {
                return Err(Error::Validation(format!("tone {i} has invalid power")));
            }
            if tones[..i].iter().any(|o| o.omega == t.omega) {
                return Err(Error::Validation(format!(
                    "tone {i} duplicates an earlier frequency"
                )));
            }
        }
        Ok(Self { tones })
    }

    pub fn single(omega: f64, power_dbm: f64) -> Result<Self> {
        Self::new(vec![Tone {
            omega,
            power_dbm,
            phase: 0.0,
        }])
    }

    /// Open-circuit amplitudes `sqrt(8 R P_avail)` for a source resistance `r`.
    fn amplitudes(&self, r: f64) -> Vec<(f64, f64, f64)> {
        self.tones
            .iter()
            .map(|t| {
                (
                    (8.0 * r * dbm_to_watts(t.power_dbm)).sqrt(),
                    t.omega,
                    t.phase,
                )
            })
            .filter(|(a, _, _)| *a > 0.0)
            .collect()
    }
}

/// Port voltages sampled uniformly after the start-up discard.
#[derive(Debug, Clone, PartialEq)]
pub struct PortRecord {
    /// Time of the first retained sample (s).
    pub t0: f64,
    /// Sample period (s).
    pub dt: f64,
    pub v_in: Vec<f64>,
    pub v_out: Vec<f64>,
}

impl PortRecord {
    pub fn duration(&self) -> f64 {
        self.v_out.len() as f64 * self.dt
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(["t_s", "v_in", "v_out"]).map_err(io)?;
        for (i, (a, b)) in self.v_in.iter().zip(&self.v_out).enumerate() {
            let t = self.t0 + i as f64 * self.dt;
            w.write_record(&[
                format!("{t:.15e}"),
                format!("{a:.12e}"),
                format!("{b:.12e}"),
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

/// Writes `(freq_hz, power_dbm)` rows.
pub fn write_spectrum_csv<W: Write>(rows: &[(f64, f64)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(["freq_hz", "power_dbm"]).map_err(io)?;
    for (f, p) in rows {
        w.write_record(&[format!("{f:.6}"), format!("{p:.6}")])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Precomputed ladder topology and the factored capacitance matrix.
struct Ladder {
    p: UnitCellParams,
    flux: FluxBias,
    nodes: usize,
    branches: usize,
    /// Conductance to ground per node (S).
    g_node: Vec<f64>,
    /// Per-node R–C loss branch (resistance, capacitance), if any.
    rc: Option<(Vec<f64>, Vec<f64>)>,
    cj: f64,
    /// Thomas-algorithm forward coefficients.
    c_prime: Vec<f64>,
    inv_denom: Vec<f64>,
    rs: f64,
    rl: f64,
    drive: Vec<(f64, f64, f64)>,
    ramp: f64,
}

impl Ladder {
    fn new(cfg: &LadderConfig, src: &ToneSource) -> Self {
        let n = cfg.n_cells;
        let nodes = n + 1;
        let end_weight = |i: usize| if i == 0 || i == n { 0.5 } else { 1.0 };
        let p = cfg.p;
        let cj = p.junction_capacitance();

        let mut cgnd: Vec<f64> = (0..nodes).map(|i| p.cgnd * end_weight(i)).collect();
        let (g_node, rc) = match cfg.loss_mode {
            LossMode::Off => (vec![0.0; nodes], None),
            LossMode::FixedAtPump { omega } => {
                let g = shunt_conductance(omega, &p);
                ((0..nodes).map(|i| g * end_weight(i)).collect(), None)
            }
            LossMode::PerCellRc { omega } => {
                // Re Y = ω Cgnd tanδ at ωRC = 1 requires C = 2 Cgnd tanδ;
                // Im Y there is ωC/2, taken out of the ground capacitor
                let c_loss = 2.0 * p.cgnd * p.tan_delta;
                let r_loss = if c_loss > 0.0 {
                    1.0 / (omega * c_loss)
                } else {
                    f64::INFINITY
                };
                let caps: Vec<f64> = (0..nodes).map(|i| c_loss * end_weight(i)).collect();
                let res: Vec<f64> = (0..nodes).map(|i| r_loss / end_weight(i)).collect();
                for (c, cl) in cgnd.iter_mut().zip(&caps) {
                    *c -= 0.5 * cl;
                }
                (
                    vec![0.0; nodes],
                    if c_loss > 0.0 {
                        Some((res, caps))
                    } else {
                        None
                    },
                )
            }
        };

        // tridiagonal: diag = Cgnd_i + cj·(adjacent branches), off-diagonal = −cj
        let diag: Vec<f64> = (0..nodes)
            .map(|i| {
                let adjacent = usize::from(i > 0) + usize::from(i < n);
                cgnd[i] + cj * adjacent as f64
            })
            .collect();
        let mut c_prime = vec![0.0; nodes];
        let mut inv_denom = vec![0.0; nodes];
        let off = -cj;
        for i in 0..nodes {
            let denom = if i == 0 {
                diag[0]
            } else {
                diag[i] - off * c_prime[i - 1]
            };
            inv_denom[i] = 1.0 / denom;
            c_prime[i] = off * inv_denom[i];
        }

        Self {
            p,
            flux: cfg.flux,
            nodes,
            branches: n,
            g_node,
            rc,
            cj,
            c_prime,
            inv_denom,
            rs: cfg.z_source,
            rl: cfg.z_load,
            drive: src.amplitudes(cfg.z_source),
            ramp: RAMP_FRACTION * cfg.t_total,
        }
    }

    fn state_len(&self) -> usize {
        self.nodes + self.branches + if self.rc.is_some() { self.nodes } else { 0 }
    }

    fn source(&self, t: f64) -> f64 {
        if self.drive.is_empty() {
            return 0.0;
        }
        let envelope = if t >= self.ramp {
            1.0
        } else {
            0.5 * (1.0 - (PI * t / self.ramp).cos())
        };
        envelope
            * self
                .drive
                .iter()
                .map(|(a, w, ph)| a * (w * t + ph).cos())
                .sum::<f64>()
    }

    /// Writes `dy/dt` into `dy`; `rhs` is scratch of length `nodes`.
    fn derivative(&self, t: f64, y: &[f64], dy: &mut [f64], rhs: &mut [f64]) {
        let nodes = self.nodes;
        let v = &y[..nodes];
        let phi = &y[nodes..nodes + self.branches];
        let (dv, rest) = dy.split_at_mut(nodes);
        let (dphi, dvc) = rest.split_at_mut(self.branches);

        for i in 0..nodes {
            rhs[i] = -self.g_node[i] * v[i];
        }
        if let Some((res, caps)) = &self.rc {
            let vc = &y[nodes + self.branches..];
            for i in 0..nodes {
                let current = (v[i] - vc[i]) / res[i];
                rhs[i] -= current;
                dvc[i] = current / caps[i];
            }
        }
        for j in 0..self.branches {
            let current = branch_current(phi[j], self.flux, &self.p);
            rhs[j] -= current;
            rhs[j + 1] += current;
            dphi[j] = (v[j] - v[j + 1]) / REDUCED_FLUX_QUANTUM;
        }
        rhs[0] += (self.source(t) - v[0]) / self.rs;
        rhs[nodes - 1] -= v[nodes - 1] / self.rl;

        // Thomas solve of M dv = rhs with constant off-diagonal −cj
        let off = -self.cj;
        dv[0] = rhs[0] * self.inv_denom[0];
        for i in 1..nodes {
            dv[i] = (rhs[i] - off * dv[i - 1]) * self.inv_denom[i];
        }
        for i in (0..nodes - 1).rev() {
            dv[i] -= self.c_prime[i] * dv[i + 1];
        }
    }
}

/// Integrates the ladder with fixed-step RK4 and returns the port voltages
/// after discarding the first 20% of the run.
pub fn run_transient(cfg: &LadderConfig, src: &ToneSource) -> Result<PortRecord> {
    cfg.validate()?;
    let ladder = Ladder::new(cfg, src);
    let steps = (cfg.t_total / cfg.dt).round() as usize;
    let first_kept = (DISCARD_FRACTION * steps as f64).ceil() as usize;
    let out_node = ladder.nodes - 1;
    let mut record = PortRecord {
        t0: first_kept as f64 * cfg.dt,
        dt: cfg.dt,
        v_in: Vec::with_capacity(steps + 1 - first_kept),
        v_out: Vec::with_capacity(steps + 1 - first_kept),
    };
    if ladder.drive.is_empty() {
        record.v_in = vec![0.0; steps + 1 - first_kept];
        record.v_out = vec![0.0; steps + 1 - first_kept];
        return Ok(record);
    }

    let len = ladder.state_len();
    let mut y = vec![0.0; len];
    let mut k1 = vec![0.0; len];
    let mut k2 = vec![0.0; len];
    let mut k3 = vec![0.0; len];
    let mut k4 = vec![0.0; len];
    let mut tmp = vec![0.0; len];
    let mut rhs = vec![0.0; ladder.nodes];
    let h = cfg.dt;

    for step in 0..=steps {
        if step >= first_kept {
            record.v_in.push(y[0]);
            record.v_out.push(y[out_node]);
        }
        if step == steps {
            break;
        }
        let t = step as f64 * h;
        ladder.derivative(t, &y, &mut k1, &mut rhs);
        for i in 0..len {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        ladder.derivative(t + 0.5 * h, &tmp, &mut k2, &mut rhs);
        for i in 0..len {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        ladder.derivative(t + 0.5 * h, &tmp, &mut k3, &mut rhs);
        for i in 0..len {
            tmp[i] = y[i] + h * k3[i];
        }
        ladder.derivative(t + h, &tmp, &mut k4, &mut rhs);
        for i in 0..len {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if step % 64 == 0 || step + 1 == steps {
            let max_abs = y[..ladder.nodes].iter().fold(0.0f64, |m, v| {
                if v.is_nan() {
                    f64::INFINITY
                } else {
                    m.max(v.abs())
                }
            });
            if !(max_abs <= BLOW_UP_VOLTS) {
                return Err(Error::NumericalBlowUp {
                    step: step + 1,
                    max_abs,
                });
            }
        }
    }
    Ok(record)
}

// flat-top window coefficients (peak amplitude error below 0.01 dB off-bin)
const FLAT_TOP: [f64; 5] = [
    0.21557895,
    0.41663158,
    0.277263158,
    0.083578947,
    0.006947368,
];

/// Complex peak amplitude of the tone at `omega` in `samples`, phase
/// referenced to absolute time (`t0` is the time of the first sample).
///
/// The window covers the largest whole number of tone periods in the record.
pub fn tone_phasor(samples: &[f64], t0: f64, dt: f64, omega: f64) -> Result<Complex64> {
    if !(omega > 0.0) {
        return Err(Error::Validation(format!(
            "tone frequency must be positive, got {omega}"
        )));
    }
    let period = 2.0 * PI / omega;
    let periods = samples.len() as f64 * dt / period;
    if periods < MIN_PERIODS {
        return Err(Error::WindowTooShort {
            periods,
            required: MIN_PERIODS,
        });
    }
    let m = ((periods.floor() * period) / dt).round() as usize;
    let m = m.min(samples.len());
    let x = &samples[..m];
    let mean = x.iter().sum::<f64>() / m as f64;
    let spread = x.iter().fold(0.0f64, |a, v| a.max((v - mean).abs()));
    if spread <= 1e-12 * mean.abs() {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    let mut wsum = 0.0;
    let step = 2.0 * PI / m as f64;
    for (n, &v) in x.iter().enumerate() {
        let a = step * n as f64;
        let w = FLAT_TOP[0] - FLAT_TOP[1] * a.cos() + FLAT_TOP[2] * (2.0 * a).cos()
            - FLAT_TOP[3] * (3.0 * a).cos()
            + FLAT_TOP[4] * (4.0 * a).cos();
        let t = t0 + n as f64 * dt;
        acc += Complex64::from_polar(w * (v - mean), -omega * t);
        wsum += w;
    }
    Ok(2.0 * acc / wsum)
}

/// Power of the tone at `omega` delivered into `z_ref` (dBm).
pub fn extract_tone_power(rec: &PortRecord, omega: f64, z_ref: f64) -> Result<f64> {
    power_from_samples(&rec.v_out, rec.t0, rec.dt, omega, z_ref)
}

pub fn power_from_samples(
    samples: &[f64],
    t0: f64,
    dt: f64,
    omega: f64,
    z_ref: f64,
) -> Result<f64> {
    let a = tone_phasor(samples, t0, dt, omega)?.norm();
    Ok(watts_to_dbm(a * a / (2.0 * z_ref)))
}

/// Output power at each listed frequency: `(freq_hz, dBm)` rows.
pub fn output_spectrum(rec: &PortRecord, omegas: &[f64], z_ref: f64) -> Result<Vec<(f64, f64)>> {
    omegas
        .iter()
        .map(|&w| Ok((rad_to_hz(w), extract_tone_power(rec, w, z_ref)?)))
        .collect()
}

/// Output powers at the pump, its harmonics and the main mixing products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarmonicReport {
    pub pump_dbm: f64,
    pub second_harmonic_dbm: f64,
    pub third_harmonic_dbm: f64,
    pub signal_dbm: f64,
    pub idler_dbm: f64,
}

pub fn harmonic_report(
    rec: &PortRecord,
    omega_p: f64,
    omega_s: f64,
    z_ref: f64,
) -> Result<HarmonicReport> {
    Ok(HarmonicReport {
        pump_dbm: extract_tone_power(rec, omega_p, z_ref)?,
        second_harmonic_dbm: extract_tone_power(rec, 2.0 * omega_p, z_ref)?,
        third_harmonic_dbm: extract_tone_power(rec, 3.0 * omega_p, z_ref)?,
        signal_dbm: extract_tone_power(rec, omega_s, z_ref)?,
        idler_dbm: extract_tone_power(rec, 2.0 * omega_p - omega_s, z_ref)?,
    })
}

/// Transmission `P_out − P_available` of a small tone (dB).
pub fn transmission_db(cfg: &LadderConfig, omega: f64, power_dbm: f64) -> Result<f64> {
    let rec = run_transient(cfg, &ToneSource::single(omega, power_dbm)?)?;
    Ok(extract_tone_power(&rec, omega, cfg.z_load)? - power_dbm)
}

/// Pump-on minus pump-off output signal power at each grid frequency.
pub fn simulate_gain(
    cfg: &LadderConfig,
    op: &OperatingPoint,
    signal_dbm: f64,
    grid: &FrequencyGrid,
) -> Result<GainProfile> {
    simulate_gain_with_progress(cfg, op, signal_dbm, grid, &|_, _| {})
}

/// [`simulate_gain`] reporting `(finished, total)` after each frequency.
pub fn simulate_gain_with_progress(
    cfg: &LadderConfig,
    op: &OperatingPoint,
    signal_dbm: f64,
    grid: &FrequencyGrid,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<GainProfile> {
    if op.pump_power_dbm.is_finite() && signal_dbm > op.pump_power_dbm - 20.0 {
        return Err(Error::Validation(format!(
            "signal {signal_dbm} dBm must be at least 20 dB below the pump ({} dBm)",
            op.pump_power_dbm
        )));
    }
    let total = grid.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let gains = grid
        .omegas()
        .par_iter()
        .map(|&ws| {
            let g = simulate_gain_point(cfg, op, ws, signal_dbm);
            let finished = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
            progress(finished, total);
            g
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GainProfile {
        grid: grid.clone(),
        gain_db: gains,
        decomposition: Vec::new(),
    })
}

fn pump_and_signal(op: &OperatingPoint, omega_s: f64, signal_dbm: f64) -> Result<ToneSource> {
    ToneSource::new(vec![
        Tone {
            omega: op.omega_p,
            power_dbm: op.pump_power_dbm,
            phase: 0.0,
        },
        Tone {
            omega: omega_s,
            power_dbm: signal_dbm,
            phase: 0.0,
        },
    ])
}

/// Pump-on minus pump-off output power at one signal frequency (dB).
pub fn simulate_gain_point(
    cfg: &LadderConfig,
    op: &OperatingPoint,
    omega_s: f64,
    signal_dbm: f64,
) -> Result<f64> {
    let on = run_transient(cfg, &pump_and_signal(op, omega_s, signal_dbm)?)?;
    let off = run_transient(cfg, &ToneSource::single(omega_s, signal_dbm)?)?;
    Ok(extract_tone_power(&on, omega_s, cfg.z_load)?
        - extract_tone_power(&off, omega_s, cfg.z_load)?)
}

/// Nonlinear pump phase `|∠S21(P) − ∠S21(P → 0)|` at the pump frequency (rad).
pub fn measure_theta_nl(cfg: &LadderConfig, omega_p: f64, pump_dbm: f64) -> Result<f64> {
    let reference_dbm = pump_dbm - 30.0;
    let phase = |dbm: f64| -> Result<f64> {
        let rec = run_transient(cfg, &ToneSource::single(omega_p, dbm)?)?;
        Ok(tone_phasor(&rec.v_out, rec.t0, rec.dt, omega_p)?.arg())
    };
    let raw = phase(pump_dbm)? - phase(reference_dbm)?;
    let wrapped = raw - 2.0 * PI * (raw / (2.0 * PI)).round();
    Ok(wrapped.abs())
}

/// Pump power (dBm) whose simulated nonlinear phase equals `target_theta`.
///
/// Starts from the linear-regime estimate and refines by secant steps on
/// `θ(P_watts)`.
pub fn calibrate_pump_power(
    cfg: &LadderConfig,
    omega_p: f64,
    target_theta: f64,
    probe_dbm: f64,
) -> Result<f64> {
    if !(target_theta > 0.0) {
        return Err(Error::Validation("target θ_NL must be positive".into()));
    }
    let mut p_prev = dbm_to_watts(probe_dbm);
    let mut th_prev = measure_theta_nl(cfg, omega_p, probe_dbm)?;
    if th_prev <= 0.0 {
        return Err(Error::Validation(
            "no nonlinear phase at the probe power".into(),
        ));
    }
    let mut p = p_prev * target_theta / th_prev;
    for _ in 0..4 {
        let th = measure_theta_nl(cfg, omega_p, watts_to_dbm(p))?;
        if (th - target_theta).abs() < 0.01 * target_theta {
            break;
        }
        let slope = (th - th_prev) / (p - p_prev);
        let next = if slope > 0.0 {
            p + (target_theta - th) / slope
        } else {
            p * target_theta / th
        };
        p_prev = p;
        th_prev = th;
        p = next.max(0.1 * p).min(10.0 * p);
    }
    Ok(watts_to_dbm(p))
}

/// Gain versus input signal power and the 1 dB compression point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionResult {
    pub signal_dbm: Vec<f64>,
    pub gain_db: Vec<f64>,
    /// Output signal power at each input power (dBm).
    pub output_signal_dbm: Vec<f64>,
    pub small_signal_gain_db: f64,
    /// Input power at 1 dB compression; `None` when the gain never drops 1 dB.
    pub p1db: Option<f64>,
    /// Output signal power at `p1db` (dBm).
    pub output_at_p1db: Option<f64>,
    /// Output pump power in the small-signal run (dBm).
    pub pump_output_dbm: f64,
}

impl CompressionResult {
    pub fn is_compressed(&self) -> bool {
        self.p1db.is_some()
    }
}

fn interpolate_crossing(x: &[f64], y: &[f64], level: f64) -> Option<(usize, f64)> {
    (1..y.len()).find_map(|i| {
        if y[i] <= level && y[i - 1] > level {
            let t = (y[i - 1] - level) / (y[i - 1] - y[i]);
            Some((i, x[i - 1] + t * (x[i] - x[i - 1])))
        } else {
            None
        }
    })
}

/// Sweeps the input signal power at `omega_s` with the pump on.
///
/// Gain is referenced to one pump-off run at the lowest power; the pump-off
/// line is linear so its output scales 1:1 with input.
pub fn compression_sweep(
    cfg: &LadderConfig,
    op: &OperatingPoint,
    omega_s: f64,
    signal_powers: &[f64],
) -> Result<CompressionResult> {
    if signal_powers.len() < 2 || signal_powers.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation(
            "signal powers must be strictly ascending with at least two points".into(),
        ));
    }
    let span = signal_powers[signal_powers.len() - 1] - signal_powers[0];
    if span < 15.0 {
        return Err(Error::Validation(format!(
            "signal powers span {span} dB, at least 15 dB needed"
        )));
    }
    let lowest = signal_powers[0];
    let off = run_transient(cfg, &ToneSource::single(omega_s, lowest)?)?;
    let off_db = extract_tone_power(&off, omega_s, cfg.z_load)?;

    let runs = signal_powers
        .par_iter()
        .map(|&ps| {
            let rec = run_transient(cfg, &pump_and_signal(op, omega_s, ps)?)?;
            Ok((
                extract_tone_power(&rec, omega_s, cfg.z_load)?,
                extract_tone_power(&rec, op.omega_p, cfg.z_load)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let output_signal_dbm: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let gain_db: Vec<f64> = output_signal_dbm
        .iter()
        .zip(signal_powers)
        .map(|(out, ps)| out - (off_db + ps - lowest))
        .collect();
    let small = gain_db[0];
    let crossing = interpolate_crossing(signal_powers, &gain_db, small - 1.0);
    let p1db = crossing.map(|(_, x)| x);
    let output_at_p1db = crossing.map(|(_, x)| off_db + (x - lowest) + small - 1.0);
    Ok(CompressionResult {
        signal_dbm: signal_powers.to_vec(),
        gain_db,
        output_signal_dbm,
        small_signal_gain_db: small,
        p1db,
        output_at_p1db,
        pump_output_dbm: runs[0].1,
    })
}
