//! Config-driven batch recipes behind the `jtwpa` binary.
//!
//! Each command reads a [`RunConfig`], computes on a worker pool and writes
//! into one output directory:
//!
//! - data files (CSV or JSON), each with a `<name>.provenance.json` sidecar
//!   holding the config hash, preset and convention;
//! - `summary.json`, the command's headline numbers;
//! - `provenance.json`, the full config echo and toolkit version;
//! - `failures.json`, the failed sub-tasks (empty when everything ran).
//!
//! Outputs contain no timestamps or host data, so identical inputs give
//! byte-identical files. Results are computed in parallel and written in a
//! fixed order by the calling thread.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::cell::{characteristic_impedance, kerr_coefficient, FluxBias, Preset, UnitCellParams};
use crate::cme::{
    analytic_gain, calibrate_amplitude_scale, integrate_cme, phase_match_frequencies,
    pump_amplitude_from_power, pump_from_theta, standing_wave_gain, CmeOptions, Convention,
    GainProfile, OperatingPoint, PumpModel, PumpState,
};
use crate::config::{RunConfig, TimedomainMode};
use crate::csvio;
use crate::dispersion::{linear_s21, ComplexTrace, FrequencyGrid};
use crate::error::{Error, Result};
use crate::fitkit::{
    calibrate_thru, extract_kl, fit_dispersion, lobe_widths, phase_matched_bands, ripple_variance,
    snr_noise, yfactor_fit, FluxTrace, KnownParams, NoiseModel,
};
use crate::timedomain::{
    calibrate_pump_power, compression_sweep, harmonic_report, output_spectrum, run_transient,
    simulate_gain_point, transmission_db, write_spectrum_csv, Tone, ToneSource,
};
use crate::units::{db_to_ratio, hz_to_rad, rad_to_hz, round_db};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gain,
    Timedomain,
    Fit,
    Noise,
    Matchpoint,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Gain => "gain",
            Command::Timedomain => "timedomain",
            Command::Fit => "fit",
            Command::Noise => "noise",
            Command::Matchpoint => "matchpoint",
        }
    }
}

/// Command-line overrides; `None` falls back to the config, then the default.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
    pub convention: Option<Convention>,
    pub preset: Option<Preset>,
}

/// A sub-task that failed; the run continues without it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskFailure {
    pub task: String,
    pub index: Option<usize>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub failures: Vec<TaskFailure>,
    pub summary: Value,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Settings shared by every command after applying overrides.
struct Context<'a> {
    cfg: &'a RunConfig,
    preset: Preset,
    convention: Convention,
    params: UnitCellParams,
}

struct Outputs {
    dir: PathBuf,
    sidecar: Value,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path, sidecar: Value) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            sidecar,
            files: Vec::new(),
        })
    }

    fn write_with<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut bytes = Vec::new();
        body(&mut bytes)?;
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        let mut side = self.sidecar.clone();
        side["file"] = json!(name);
        fs::write(
            self.dir.join(format!("{name}.provenance.json")),
            pretty(&side)?,
        )?;
        self.files.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = pretty(value)?;
        self.write_with(name, |w| Ok(w.write_all(text.as_bytes())?))
    }
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s =
        serde_json::to_string_pretty(value).map_err(|e| Error::Validation(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn csv_writer(w: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::Writer::from_writer(w)
}

fn csv_row(w: &mut csv::Writer<&mut Vec<u8>>, row: &[String]) -> Result<()> {
    w.write_record(row).map_err(|e| Error::Io(e.into()))
}

fn num(v: f64) -> String {
    format!("{v:.9e}")
}

/// JSON number for a dB quantity rounded half-even to 0.01 dB; null if not finite.
fn db_json(v: f64) -> Value {
    if v.is_finite() {
        json!(round_db(v))
    } else {
        Value::Null
    }
}

fn finite_json(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Runs `cmd` and writes all of its outputs into `opts.out_dir`.
///
/// Errors are returned only when nothing useful can be produced (bad
/// config, unwritable directory); sub-task failures land in
/// [`RunOutcome::failures`].
pub fn run(cmd: Command, cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let preset = match opts.preset {
        Some(p) => p,
        None => cfg.preset()?.unwrap_or(Preset::JtwpaA),
    };
    let convention = match opts.convention {
        Some(c) => c,
        None => cfg.convention()?.unwrap_or_default(),
    };
    let params = cfg.cell_params(preset)?;
    let ctx = Context {
        cfg,
        preset,
        convention,
        params,
    };
    let sidecar = json!({
        "command": cmd.name(),
        "config_sha256": cfg.hash(),
        "preset": preset.name(),
        "convention": convention.name(),
        "toolkit_version": VERSION,
    });
    let mut out = Outputs::new(&opts.out_dir, sidecar.clone())?;
    let mut failures = Vec::new();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.workers {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Validation(format!("worker pool: {e}")))?;
    let summary = pool.install(|| match cmd {
        Command::Gain => cmd_gain(&ctx, &mut out, &mut failures),
        Command::Timedomain => cmd_timedomain(&ctx, &mut out, &mut failures),
        Command::Fit => cmd_fit(&ctx, &mut out, &mut failures),
        Command::Noise => cmd_noise(&ctx, &mut out, &mut failures),
        Command::Matchpoint => cmd_matchpoint(&ctx, &mut out, &mut failures),
    });
    let summary = match summary {
        Ok(s) => s,
        Err(e) => {
            failures.push(TaskFailure {
                task: cmd.name().into(),
                index: None,
                error: e.to_string(),
            });
            Value::Null
        }
    };

    out.write_json("summary.json", &summary)?;
    let mut prov = sidecar;
    prov["config"] = json!(cfg.entries());
    prov["files"] = json!(out
        .files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect::<Vec<_>>());
    fs::write(opts.out_dir.join("provenance.json"), pretty(&prov)?)?;
    fs::write(opts.out_dir.join("failures.json"), pretty(&failures)?)?;
    Ok(RunOutcome {
        files: out.files,
        failures,
        summary,
    })
}

fn operating_point(ctx: &Context, omega_p: f64) -> Result<OperatingPoint> {
    Ok(OperatingPoint {
        flux: ctx.cfg.flux(ctx.preset)?,
        omega_p,
        pump_power_dbm: ctx
            .cfg
            .get_f64("operating_point", "pump_power_dbm")?
            .unwrap_or_else(|| ctx.preset.pump_power_anchor_dbm()),
        n_cells: ctx.cfg.n_cells(ctx.preset)?,
    })
}

/// Scale on `|A_p|²` from the config, or anchored so the preset's reference
/// pump power gives its reference θ_NL at 6 GHz.
fn amplitude_scale(ctx: &Context, flux: FluxBias, n_cells: usize) -> Result<f64> {
    if let Some(s) = ctx.cfg.get_f64("operating_point", "amplitude_scale")? {
        return Ok(s);
    }
    let anchor = OperatingPoint {
        flux,
        omega_p: hz_to_rad(6e9),
        pump_power_dbm: ctx.preset.pump_power_anchor_dbm(),
        n_cells,
    };
    let cal = calibrate_amplitude_scale(
        &[(
            ctx.preset.pump_power_anchor_dbm(),
            ctx.preset.theta_nl_anchor(),
        )],
        &anchor,
        &ctx.params,
        ctx.convention,
    )?;
    Ok(cal.scale)
}

/// Pump from `theta_nl_rad` if given, else from the pump power.
fn pump_state(ctx: &Context, op: &OperatingPoint) -> Result<PumpState> {
    if let Some(theta) = ctx.cfg.get_f64("operating_point", "theta_nl_rad")? {
        return pump_from_theta(theta, op, &ctx.params, ctx.convention);
    }
    if ctx
        .cfg
        .get_f64("operating_point", "pump_power_dbm")?
        .is_none()
    {
        return pump_from_theta(
            ctx.preset.theta_nl_anchor(),
            op,
            &ctx.params,
            ctx.convention,
        );
    }
    let model = PumpModel {
        convention: ctx.convention,
        amplitude_scale: amplitude_scale(ctx, op.flux, op.n_cells)?,
    };
    pump_amplitude_from_power(op, &ctx.params, &model)
}

fn pump_freqs(ctx: &Context, section: &str) -> Result<Vec<f64>> {
    let list = match ctx.cfg.get_list(section, "pump_freqs_ghz")? {
        Some(l) => l,
        None => vec![ctx
            .cfg
            .get_f64("operating_point", "pump_freq_ghz")?
            .unwrap_or(6.0)],
    };
    if list.is_empty() || list.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::Config {
            key: format!("[{section}].pump_freqs_ghz"),
            message: "pump frequencies must be positive".into(),
        });
    }
    Ok(list)
}

fn write_gain_csv(out: &mut Outputs, name: &str, gp: &GainProfile) -> Result<()> {
    out.write_with(name, |w| gp.write_csv(w))
}

fn hz_pairs(v: &[(f64, f64)]) -> Value {
    json!(v.iter().map(|(a, b)| [*a, *b]).collect::<Vec<_>>())
}

#[derive(Debug)]
struct GainRun {
    pump_ghz: f64,
    profile: GainProfile,
    pump: PumpState,
    roots: Vec<(f64, f64)>,
    cme_dev: Option<f64>,
}

/// The part of `grid` where both signal and idler have positive frequency.
fn clip_to_pump(grid: &FrequencyGrid, omega_p: f64) -> Result<FrequencyGrid> {
    FrequencyGrid::new(
        grid.omegas()
            .iter()
            .copied()
            .filter(|w| *w < 2.0 * omega_p)
            .collect(),
    )
}

fn gain_for_pump(
    ctx: &Context,
    pump_ghz: f64,
    grid: &FrequencyGrid,
    cme_check: bool,
    rtol: f64,
) -> Result<GainRun> {
    let op = operating_point(ctx, hz_to_rad(pump_ghz * 1e9))?;
    let grid = &clip_to_pump(grid, op.omega_p)?;
    let pump = pump_state(ctx, &op)?;
    let profile = analytic_gain(grid, &op, &pump, &ctx.params, ctx.convention)?;
    let roots = phase_match_frequencies(&op, &pump, &ctx.params, ctx.convention)?;
    let cme_dev = if cme_check {
        let opts = CmeOptions {
            rtol,
            ..CmeOptions::default()
        };
        let mut worst: f64 = 0.0;
        for (w, g_db) in grid.omegas().iter().zip(&profile.gain_db) {
            let sol = integrate_cme(
                *w,
                &op,
                &pump,
                &ctx.params,
                ctx.convention,
                1.0.into(),
                0.0.into(),
                &opts,
            )?;
            let g = db_to_ratio(*g_db);
            worst = worst.max((sol.signal_gain() - g).abs() / g);
        }
        Some(worst)
    } else {
        None
    };
    Ok(GainRun {
        pump_ghz,
        profile,
        pump,
        roots,
        cme_dev,
    })
}

/// Headline numbers of a gain run, one entry per pump.
fn gain_summary(runs: &[GainRun]) -> Value {
    let mut all_lobes: Vec<(f64, f64)> = Vec::new();
    let pumps: Vec<Value> = runs
        .iter()
        .map(|r| {
            let (peak_w, peak_db) = r.profile.peak();
            let lobes = if peak_db > 3.0 { lobe_widths(&r.profile) } else { Vec::new() };
            all_lobes.extend(&lobes);
            let width: f64 = lobes.iter().map(|(a, b)| b - a).sum();
            json!({
                "pump_freq_hz": r.pump_ghz * 1e9,
                "theta_nl_rad": r.pump.theta_nl,
                "peak_gain_db": db_json(peak_db),
                "peak_freq_hz": rad_to_hz(peak_w),
                "lobes_3db_hz": hz_pairs(&lobes),
                "bandwidth_3db_hz": width,
                "kappa_roots_hz": hz_pairs(&r.roots.iter().map(|(a, b)| (rad_to_hz(*a), rad_to_hz(*b))).collect::<Vec<_>>()),
                "cme_max_relative_deviation": r.cme_dev,
            })
        })
        .collect();
    let (lo, hi) = all_lobes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), (a, b)| {
            (l.min(*a), h.max(*b))
        });
    let union = if all_lobes.is_empty() {
        Value::Null
    } else {
        json!({"lo_hz": lo, "hi_hz": hi, "span_hz": hi - lo})
    };
    json!({"pumps": pumps, "lobe_union": union})
}

fn cmd_gain(ctx: &Context, out: &mut Outputs, failures: &mut Vec<TaskFailure>) -> Result<Value> {
    let grid = ctx.cfg.grid((1.0, 11.0, 501))?;
    let freqs = pump_freqs(ctx, "gain")?;
    let cme_check = ctx.cfg.get_bool("gain", "cme_check")?.unwrap_or(false);
    let rtol = ctx.cfg.get_f64("gain", "cme_rtol")?.unwrap_or(1e-10);
    let results: Vec<Result<GainRun>> = freqs
        .par_iter()
        .map(|&f| gain_for_pump(ctx, f, &grid, cme_check, rtol))
        .collect();
    let mut runs = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(run) => {
                write_gain_csv(
                    out,
                    &format!("gain_pump_{:.3}ghz.csv", run.pump_ghz),
                    &run.profile,
                )?;
                runs.push(run);
            }
            Err(e) => failures.push(TaskFailure {
                task: format!("gain pump {} GHz", freqs[i]),
                index: Some(i),
                error: e.to_string(),
            }),
        }
    }
    Ok(gain_summary(&runs))
}

fn cmd_timedomain(
    ctx: &Context,
    out: &mut Outputs,
    failures: &mut Vec<TaskFailure>,
) -> Result<Value> {
    let cfg = ctx.cfg;
    let omega_p = hz_to_rad(
        cfg.get_f64("operating_point", "pump_freq_ghz")?
            .unwrap_or(6.0)
            * 1e9,
    );
    let mut op = operating_point(ctx, omega_p)?;
    let ladder = cfg.ladder(ctx.params, op.flux, op.n_cells, omega_p)?;
    let mode = cfg.timedomain_mode()?;
    let mut summary = json!({
        "mode": format!("{mode:?}").to_lowercase(),
        "n_cells": op.n_cells,
        "flux_phi0": op.flux.value(),
        "dt_s": ladder.dt,
        "t_total_s": ladder.t_total,
    });

    let needs_pump = matches!(
        mode,
        TimedomainMode::Gain | TimedomainMode::Compression | TimedomainMode::Record
    );
    if needs_pump {
        if let Some(theta) = cfg.get_f64("timedomain", "calibrate_theta_nl_rad")? {
            let probe = cfg
                .get_f64("timedomain", "calibration_probe_dbm")?
                .unwrap_or(ctx.preset.pump_power_anchor_dbm() - 4.0);
            op.pump_power_dbm = calibrate_pump_power(&ladder, omega_p, theta, probe)?;
            summary["calibrated_theta_nl_rad"] = json!(theta);
        }
        summary["pump_power_dbm"] = finite_json(op.pump_power_dbm);
    }
    let signal_dbm = cfg
        .get_f64("timedomain", "signal_dbm")?
        .unwrap_or(op.pump_power_dbm - 30.0);

    match mode {
        TimedomainMode::Gain => {
            let grid = cfg.grid((3.0, 5.5, 11))?;
            let progress_total = grid.len();
            let done = std::sync::atomic::AtomicUsize::new(0);
            let gains: Vec<Result<f64>> = grid
                .omegas()
                .par_iter()
                .map(|&w| {
                    let g = simulate_gain_point(&ladder, &op, w, signal_dbm);
                    let n = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
                    eprintln!("timedomain gain: {n}/{progress_total}");
                    g
                })
                .collect();
            let theta = cfg.get_f64("timedomain", "calibrate_theta_nl_rad")?;
            let analytic = match theta {
                Some(t) => {
                    let pump = pump_from_theta(t, &op, &ctx.params, ctx.convention)?;
                    Some(analytic_gain(
                        &grid,
                        &op,
                        &pump,
                        &ctx.params,
                        ctx.convention,
                    )?)
                }
                None => None,
            };
            let mut rows = Vec::new();
            for (i, (g, w)) in gains.into_iter().zip(grid.omegas()).enumerate() {
                match g {
                    Ok(g) => rows.push((rad_to_hz(*w), g, analytic.as_ref().map(|a| a.gain_db[i]))),
                    Err(e) => failures.push(TaskFailure {
                        task: "timedomain gain".into(),
                        index: Some(i),
                        error: e.to_string(),
                    }),
                }
            }
            out.write_with("timedomain_gain.csv", |w| {
                let mut c = csv_writer(w);
                csv_row(
                    &mut c,
                    &[
                        "freq_hz".into(),
                        "gain_db".into(),
                        "analytic_gain_db".into(),
                    ],
                )?;
                for (f, g, a) in &rows {
                    csv_row(&mut c, &[num(*f), num(*g), a.map(num).unwrap_or_default()])?;
                }
                Ok(c.flush()?)
            })?;
            if let Some((f, g, _)) = rows.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)) {
                summary["peak_gain_db"] = db_json(g);
                summary["peak_freq_hz"] = json!(f);
            }
            if let Some(a) = &analytic {
                let (w, g) = a.peak();
                summary["analytic_peak_gain_db"] = db_json(g);
                summary["analytic_peak_freq_hz"] = json!(rad_to_hz(w));
            }
        }
        TimedomainMode::Transmission => {
            let grid = cfg.grid((3.0, 9.0, 7))?;
            let linear = linear_s21(
                &grid,
                op.flux,
                &ctx.params,
                op.n_cells,
                ladder.z_source,
                ladder.z_load,
            )?
            .mag_db();
            let results: Vec<Result<f64>> = grid
                .omegas()
                .par_iter()
                .map(|&w| transmission_db(&ladder, w, signal_dbm))
                .collect();
            let mut rows = Vec::new();
            for (i, r) in results.into_iter().enumerate() {
                match r {
                    Ok(t) => rows.push((grid.omegas()[i], t, linear[i])),
                    Err(e) => failures.push(TaskFailure {
                        task: "timedomain transmission".into(),
                        index: Some(i),
                        error: e.to_string(),
                    }),
                }
            }
            out.write_with("transmission.csv", |w| {
                let mut c = csv_writer(w);
                csv_row(
                    &mut c,
                    &["freq_hz".into(), "s21_db".into(), "linear_s21_db".into()],
                )?;
                for (f, t, l) in &rows {
                    csv_row(&mut c, &[num(rad_to_hz(*f)), num(*t), num(*l)])?;
                }
                Ok(c.flush()?)
            })?;
            let dev = rows
                .iter()
                .map(|(_, t, l)| (t - l).abs())
                .fold(0.0, f64::max);
            summary["max_deviation_from_linear_db"] = json!(dev);
        }
        TimedomainMode::Compression => {
            let ws = hz_to_rad(cfg.get_f64("timedomain", "signal_freq_ghz")?.unwrap_or(4.0) * 1e9);
            let powers = match cfg.get_list("timedomain", "signal_powers_dbm")? {
                Some(p) => p,
                None => (0..14)
                    .map(|i| op.pump_power_dbm - 36.0 + 3.0 * i as f64)
                    .collect(),
            };
            let res = compression_sweep(&ladder, &op, ws, &powers)?;
            out.write_with("compression.csv", |w| {
                let mut c = csv_writer(w);
                csv_row(
                    &mut c,
                    &[
                        "signal_dbm".into(),
                        "gain_db".into(),
                        "output_signal_dbm".into(),
                    ],
                )?;
                for i in 0..res.signal_dbm.len() {
                    csv_row(
                        &mut c,
                        &[
                            num(res.signal_dbm[i]),
                            num(res.gain_db[i]),
                            num(res.output_signal_dbm[i]),
                        ],
                    )?;
                }
                Ok(c.flush()?)
            })?;
            summary["signal_freq_hz"] = json!(rad_to_hz(ws));
            summary["small_signal_gain_db"] = db_json(res.small_signal_gain_db);
            summary["p1db_dbm"] = match res.p1db {
                Some(p) => db_json(p),
                None => json!("not compressed"),
            };
            summary["output_at_p1db_dbm"] = res.output_at_p1db.map(db_json).unwrap_or(Value::Null);
            summary["pump_output_dbm"] = db_json(res.pump_output_dbm);
        }
        TimedomainMode::Record => {
            let ws = hz_to_rad(cfg.get_f64("timedomain", "signal_freq_ghz")?.unwrap_or(4.0) * 1e9);
            let src = ToneSource::new(vec![
                Tone {
                    omega: omega_p,
                    power_dbm: op.pump_power_dbm,
                    phase: 0.0,
                },
                Tone {
                    omega: ws,
                    power_dbm: signal_dbm,
                    phase: 0.0,
                },
            ])?;
            let rec = run_transient(&ladder, &src)?;
            out.write_with("record.csv", |w| rec.write_csv(w))?;
            let wi = 2.0 * omega_p - ws;
            let mut tones = vec![
                ws,
                wi,
                omega_p,
                2.0 * omega_p,
                3.0 * omega_p,
                2.0 * ws - omega_p,
                2.0 * wi - omega_p,
            ];
            tones.retain(|w| *w > 0.0);
            tones.sort_by(f64::total_cmp);
            tones.dedup();
            let spectrum = output_spectrum(&rec, &tones, ladder.z_load)?;
            out.write_with("spectrum.csv", |w| write_spectrum_csv(&spectrum, w))?;
            let report = harmonic_report(&rec, omega_p, ws, ladder.z_load)?;
            summary["harmonics_dbm"] = json!({
                "pump": finite_json(report.pump_dbm),
                "second_harmonic": finite_json(report.second_harmonic_dbm),
                "third_harmonic": finite_json(report.third_harmonic_dbm),
                "signal": finite_json(report.signal_dbm),
                "idler": finite_json(report.idler_dbm),
            });
        }
    }
    Ok(summary)
}

fn cmd_fit(ctx: &Context, out: &mut Outputs, _failures: &mut Vec<TaskFailure>) -> Result<Value> {
    let cfg = ctx.cfg;
    let missing = |k: &str| Error::Config {
        key: format!("[fit].{k}"),
        message: "required key is missing".into(),
    };
    let raws = cfg
        .get_paths("fit", "raw_csv")
        .ok_or_else(|| missing("raw_csv"))?;
    let thrus = cfg
        .get_paths("fit", "thru_csv")
        .ok_or_else(|| missing("thru_csv"))?;
    let fluxes = cfg
        .get_list("fit", "flux_phi0")?
        .ok_or_else(|| missing("flux_phi0"))?;
    if raws.len() != thrus.len() || raws.len() != fluxes.len() {
        return Err(Error::Config {
            key: "[fit]".into(),
            message: "raw_csv, thru_csv and flux_phi0 must list the same number of entries".into(),
        });
    }
    let n_cells = cfg
        .get_usize("fit", "n_cells")?
        .unwrap_or_else(|| ctx.preset.n_cells());
    let fit_r = cfg.get_bool("fit", "fit_r")?.unwrap_or(false);
    let known = KnownParams {
        r: if fit_r {
            None
        } else {
            Some(cfg.get_f64("fit", "r")?.unwrap_or(ctx.params.r))
        },
    };
    let mut data = Vec::new();
    for ((raw, thru), flux) in raws.iter().zip(&thrus).zip(&fluxes) {
        let raw = ComplexTrace::load_csv(raw)?;
        let thru = ComplexTrace::load_csv(thru)?;
        let kl = extract_kl(&calibrate_thru(&raw, &thru)?)?;
        data.push(FluxTrace {
            flux: FluxBias(*flux),
            kl,
        });
    }
    let fit = fit_dispersion(&data, n_cells, &known, &ctx.params)?;
    out.write_with("fit_residuals.csv", |w| {
        let mut c = csv_writer(w);
        csv_row(
            &mut c,
            &[
                "flux_phi0".into(),
                "freq_hz".into(),
                "kl_data_rad".into(),
                "kl_fit_rad".into(),
                "residual_rad".into(),
            ],
        )?;
        let mut k = 0;
        for d in &data {
            for (w, kl) in d.kl.grid.omegas().iter().zip(&d.kl.kl) {
                let r = fit.residuals[k];
                csv_row(
                    &mut c,
                    &[
                        num(d.flux.value()),
                        num(rad_to_hz(*w)),
                        num(*kl),
                        num(kl + r),
                        num(r),
                    ],
                )?;
                k += 1;
            }
        }
        Ok(c.flush()?)
    })?;
    let p = fit.params;
    let report = json!({
        "n_cells": n_cells,
        "i0_ua": p.i0 * 1e6,
        "c0_ff": p.c0 * 1e15,
        "cgnd_ff": p.cgnd * 1e15,
        "r": p.r,
        "fitted": fit.names,
        "sigma_si": fit.sigma,
        "covariance_si": fit.covariance,
        "rms_residual_rad": fit.rms_residual,
        "iterations": fit.iterations,
    });
    out.write_json("fit_report.json", &report)?;
    Ok(report)
}

fn cmd_noise(ctx: &Context, out: &mut Outputs, failures: &mut Vec<TaskFailure>) -> Result<Value> {
    let cfg = ctx.cfg;
    let path = cfg
        .get_paths("noise", "noise_csv")
        .and_then(|v| v.into_iter().next())
        .ok_or_else(|| Error::Config {
            key: "[noise].noise_csv".into(),
            message: "required key is missing".into(),
        })?;
    let b = cfg.require_f64("noise", "bandwidth_hz")?;
    let data = crate::fitkit::load_noise_csv(&path)?;
    let fit = yfactor_fit(&data, b)?;
    for f in &fit.failures {
        failures.push(TaskFailure {
            task: format!("yfactor {} Hz", f.freq_hz),
            index: None,
            error: f.message.clone(),
        });
    }
    let nm = &fit.model;
    out.write_with("noise_model.csv", |w| {
        let mut c = csv_writer(w);
        csv_row(&mut c, &["freq_hz".into(), "t_hemt_k".into(), "gb".into()])?;
        for i in 0..nm.omegas.len() {
            csv_row(
                &mut c,
                &[
                    num(rad_to_hz(nm.omegas[i])),
                    num(nm.t_hemt[i]),
                    num(nm.gb[i]),
                ],
            )?;
        }
        Ok(c.flush()?)
    })?;
    let mut summary = json!({
        "frequencies_fitted": nm.omegas.len(),
        "frequencies_failed": fit.failures.len(),
        "t_hemt_k": nm.t_hemt,
    });

    if let Some(gpath) = cfg
        .get_paths("noise", "gains_csv")
        .and_then(|v| v.into_iter().next())
    {
        let rows = csvio::read_columns(&gpath, &["freq_hz", "g_noise", "g_jtwpa"], &[])?;
        let (mut ws, mut th, mut gb, mut gn, mut gj) = (vec![], vec![], vec![], vec![], vec![]);
        for (i, row) in rows.iter().enumerate() {
            let f = &row[0];
            match nm
                .omegas
                .iter()
                .position(|w| (rad_to_hz(*w) - f).abs() <= 1.0)
            {
                Some(k) => {
                    ws.push(nm.omegas[k]);
                    th.push(nm.t_hemt[k]);
                    gb.push(nm.gb[k]);
                    gn.push(row[1]);
                    gj.push(row[2]);
                }
                None => failures.push(TaskFailure {
                    task: format!("snr noise {f} Hz"),
                    index: Some(i),
                    error: "no fitted noise model at this frequency".into(),
                }),
            }
        }
        if !ws.is_empty() {
            let sub = NoiseModel::new(ws, th, gb, b)?;
            let res = snr_noise(&gn, &gj, &sub)?;
            out.write_with("noise_result.csv", |w| {
                let mut c = csv_writer(w);
                csv_row(
                    &mut c,
                    &[
                        "freq_hz".into(),
                        "t_hemt_k".into(),
                        "t_system_k".into(),
                        "t_jtwpa_k".into(),
                        "n_hemt".into(),
                        "n_system".into(),
                        "n_jtwpa".into(),
                        "nonphysical".into(),
                    ],
                )?;
                for i in 0..res.omegas.len() {
                    csv_row(
                        &mut c,
                        &[
                            num(rad_to_hz(res.omegas[i])),
                            num(sub.t_hemt[i]),
                            num(res.t_system[i]),
                            num(res.t_jtwpa[i]),
                            num(res.n_hemt[i]),
                            num(res.n_system[i]),
                            num(res.n_jtwpa[i]),
                            res.nonphysical[i].to_string(),
                        ],
                    )?;
                }
                Ok(c.flush()?)
            })?;
            summary["n_jtwpa"] = json!(res.n_jtwpa);
            summary["n_system"] = json!(res.n_system);
            summary["nonphysical_points"] = json!(res.nonphysical.iter().filter(|f| **f).count());
        }
    }
    Ok(summary)
}

/// One evaluated bias/pump point of a matchpoint scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanPoint {
    pub pump_freq_hz: f64,
    pub flux_phi0: f64,
    pub pump_power_dbm: f64,
    pub theta_nl_rad: f64,
    pub z0_ohm: f64,
    pub roots_hz: Vec<(f64, f64)>,
    pub peak_gain_db: f64,
    pub ripple_variance: Option<f64>,
    pub flags: Vec<String>,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Largest normalized gain variance over the phase-matched bands of `bare`
/// once standing waves against `z_ref` ports are added; `None` without a
/// usable band.
pub fn dressed_ripple(
    bare: &GainProfile,
    op: &OperatingPoint,
    p: &UnitCellParams,
    z_ref: f64,
) -> Result<Option<f64>> {
    let dressed = standing_wave_gain(bare, op, p, z_ref)?;
    Ok(phase_matched_bands(bare)
        .into_iter()
        .filter_map(|band| ripple_variance(&dressed, band).ok())
        .map(|s| s.variance_normalized)
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        }))
}

/// Evaluates one scan point; `scale` multiplies the uncalibrated `|A_p|²`.
pub fn scan_point(
    p: &UnitCellParams,
    convention: Convention,
    op: &OperatingPoint,
    scale: f64,
    grid: &FrequencyGrid,
    theta_budget: f64,
    z_ref: f64,
) -> Result<ScanPoint> {
    let model = PumpModel {
        convention,
        amplitude_scale: scale,
    };
    let pump = pump_amplitude_from_power(op, p, &model)?;
    let grid = &clip_to_pump(grid, op.omega_p)?;
    let roots = if kerr_coefficient(op.flux, p) < 0.0 {
        phase_match_frequencies(op, &pump, p, convention)?
    } else {
        Vec::new()
    };
    let bare = analytic_gain(grid, op, &pump, p, convention)?;
    let ripple = dressed_ripple(&bare, op, p, z_ref)?;
    let mut flags = Vec::new();
    if roots.is_empty() {
        flags.push("no phase matching".to_string());
    }
    if pump.theta_nl.abs() > theta_budget {
        flags.push("exceeds linearity budget".to_string());
    }
    Ok(ScanPoint {
        pump_freq_hz: rad_to_hz(op.omega_p),
        flux_phi0: op.flux.value(),
        pump_power_dbm: op.pump_power_dbm,
        theta_nl_rad: pump.theta_nl.abs(),
        z0_ohm: characteristic_impedance(op.omega_p, op.flux, p)?,
        roots_hz: roots
            .iter()
            .map(|(a, b)| (rad_to_hz(*a), rad_to_hz(*b)))
            .collect(),
        peak_gain_db: bare.peak().1,
        ripple_variance: ripple,
        flags,
    })
}

/// Picks, per pump frequency, the phase-matched flux whose `Z0(ωp)` is
/// closest to `z_ref`, at the highest pump power inside the θ_NL budget.
pub fn select_point<'a>(points: &[&'a ScanPoint], z_ref: f64) -> Option<&'a ScanPoint> {
    let usable: Vec<&ScanPoint> = points
        .iter()
        .copied()
        .filter(|p| p.flags.is_empty())
        .collect();
    let best_flux = usable
        .iter()
        .min_by(|a, b| {
            (a.z0_ohm - z_ref)
                .abs()
                .total_cmp(&(b.z0_ohm - z_ref).abs())
        })?
        .flux_phi0;
    usable
        .into_iter()
        .filter(|p| p.flux_phi0 == best_flux)
        .max_by(|a, b| a.pump_power_dbm.total_cmp(&b.pump_power_dbm))
}

fn cmd_matchpoint(
    ctx: &Context,
    out: &mut Outputs,
    failures: &mut Vec<TaskFailure>,
) -> Result<Value> {
    let cfg = ctx.cfg;
    let f = |k: &str, d: f64| cfg.get_f64("matchpoint", k).map(|v| v.unwrap_or(d));
    let u = |k: &str, d: usize| cfg.get_usize("matchpoint", k).map(|v| v.unwrap_or(d));
    let flux_op = ctx.preset.operating_flux().value();
    let fluxes = linspace(
        f("flux_start_phi0", flux_op - 0.1)?,
        f("flux_stop_phi0", 0.5)?,
        u("flux_points", 5)?,
    );
    let anchor = ctx.preset.pump_power_anchor_dbm();
    let powers = linspace(
        f("pump_power_start_dbm", anchor - 6.0)?,
        f("pump_power_stop_dbm", anchor + 2.0)?,
        u("pump_power_points", 5)?,
    );
    if fluxes.is_empty() || powers.is_empty() {
        return Err(Error::Config {
            key: "[matchpoint]".into(),
            message: "empty scan range".into(),
        });
    }
    let theta_budget = f("theta_budget_rad", ctx.preset.theta_nl_anchor())?;
    let z_ref = f("z_ref_ohm", 50.0)?;
    let pumps = pump_freqs(ctx, "matchpoint")?;
    let grid = ctx.cfg.grid((1.0, 11.0, 501))?;
    let n_cells = ctx.cfg.n_cells(ctx.preset)?;
    let scale = amplitude_scale(ctx, ctx.preset.operating_flux(), n_cells)?;

    let mut jobs: Vec<(f64, f64, f64)> = Vec::new();
    for &pf in &pumps {
        for &fl in &fluxes {
            for &pw in &powers {
                jobs.push((pf, fl, pw));
            }
        }
    }
    let results: Vec<Result<ScanPoint>> = jobs
        .par_iter()
        .map(|&(pf, fl, pw)| {
            let op = OperatingPoint {
                flux: FluxBias(fl),
                omega_p: hz_to_rad(pf * 1e9),
                pump_power_dbm: pw,
                n_cells,
            };
            scan_point(
                &ctx.params,
                ctx.convention,
                &op,
                scale,
                &grid,
                theta_budget,
                z_ref,
            )
        })
        .collect();
    let mut points = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => points.push(p),
            Err(e) => failures.push(TaskFailure {
                task: format!(
                    "matchpoint pump {} GHz flux {} power {} dBm",
                    jobs[i].0, jobs[i].1, jobs[i].2
                ),
                index: Some(i),
                error: e.to_string(),
            }),
        }
    }
    out.write_with("matchpoint_scan.csv", |w| {
        let mut c = csv_writer(w);
        csv_row(
            &mut c,
            &[
                "pump_freq_hz",
                "flux_phi0",
                "pump_power_dbm",
                "theta_nl_rad",
                "z0_ohm",
                "root_lo_hz",
                "root_hi_hz",
                "peak_gain_db",
                "ripple_variance",
                "flags",
            ]
            .map(String::from),
        )?;
        for p in &points {
            let (lo, hi) = p
                .roots_hz
                .first()
                .map(|(a, b)| (num(*a), num(*b)))
                .unwrap_or_default();
            csv_row(
                &mut c,
                &[
                    num(p.pump_freq_hz),
                    num(p.flux_phi0),
                    num(p.pump_power_dbm),
                    num(p.theta_nl_rad),
                    num(p.z0_ohm),
                    lo,
                    hi,
                    num(p.peak_gain_db),
                    p.ripple_variance.map(num).unwrap_or_default(),
                    p.flags.join(";"),
                ],
            )?;
        }
        Ok(c.flush()?)
    })?;
    let selected: Vec<Value> = pumps
        .iter()
        .map(|&pf| {
            let of_pump: Vec<&ScanPoint> = points
                .iter()
                .filter(|p| p.pump_freq_hz == pf * 1e9)
                .collect();
            match select_point(&of_pump, z_ref) {
                Some(p) => json!({
                    "pump_freq_hz": p.pump_freq_hz,
                    "flux_phi0": p.flux_phi0,
                    "pump_power_dbm": p.pump_power_dbm,
                    "theta_nl_rad": p.theta_nl_rad,
                    "z0_ohm": p.z0_ohm,
                    "kappa_roots_hz": hz_pairs(&p.roots_hz),
                    "peak_gain_db": db_json(p.peak_gain_db),
                    "ripple_variance": p.ripple_variance,
                }),
                None => json!({"pump_freq_hz": pf * 1e9, "selected": null}),
            }
        })
        .collect();
    Ok(json!({
        "amplitude_scale": scale,
        "flux_step_phi0": if fluxes.len() > 1 { fluxes[1] - fluxes[0] } else { 0.0 },
        "theta_budget_rad": theta_budget,
        "points": points.len(),
        "no_phase_matching": points.iter().filter(|p| p.flags.iter().any(|f| f == "no phase matching")).count(),
        "selected": selected,
    }))
}
