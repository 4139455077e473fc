//! Acceptance criteria 1–12, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`) so the report is printed even
//! when every check passes. Exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use jtwpa::cell::{characteristic_impedance, kerr_coefficient, kerr_free_flux};
use jtwpa::cme::{
    analytic_gain, integrate_cme, mismatch_terms, phase_match_frequencies, power_gain,
    pump_from_theta, CmeOptions,
};
use jtwpa::dispersion::{dispersion_curve, linear_s21};
use jtwpa::fitkit::{
    fit_dispersion, quantum_source_term, yfactor_fit, FluxTrace, KlTrace, KnownParams, NoisePoint,
};
use jtwpa::timedomain::{
    calibrate_pump_power, compression_sweep, simulate_gain_point, transmission_db, LadderConfig,
    LossMode,
};
use jtwpa::units::{hz_to_rad, rad_to_hz, ratio_to_db};
use jtwpa::{Convention, FluxBias, FrequencyGrid, OperatingPoint, Preset, UnitCellParams};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const K_B: f64 = 1.380649e-23;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn preset_a_op(theta: f64) -> (UnitCellParams, OperatingPoint, jtwpa::PumpState) {
    let p = Preset::JtwpaA.fitted();
    let op = OperatingPoint {
        flux: FluxBias(0.475),
        omega_p: hz_to_rad(6e9),
        pump_power_dbm: Preset::JtwpaA.pump_power_anchor_dbm(),
        n_cells: 865,
    };
    let pump = pump_from_theta(theta, &op, &p, Convention::Corrected).unwrap();
    (p, op, pump)
}

fn c1_kerr_free() -> Outcome {
    let p = UnitCellParams {
        r: 6.0,
        ..Preset::JtwpaA.fitted()
    };
    let f = kerr_free_flux(&p).unwrap();
    check(
        (f - 0.3112).abs() <= 1e-4 && (f - 0.3).abs() <= 0.02,
        format!("kerr_free_flux(r=6) = {f:.5}"),
    )
}

fn c2_kerr_sign() -> Outcome {
    let p = UnitCellParams {
        r: 6.2,
        ..Preset::JtwpaA.fitted()
    };
    let signs: Vec<f64> = [0.0, 0.475, 0.5]
        .iter()
        .map(|&f| kerr_coefficient(FluxBias(f), &p).signum())
        .collect();
    check(
        signs == [1.0, -1.0, -1.0],
        format!("signs at 0, 0.475, 0.5: {signs:?}"),
    )
}

fn c3_impedance() -> Outcome {
    let p = Preset::JtwpaA.fitted();
    let z_dc = characteristic_impedance(0.0, FluxBias(0.0), &p).unwrap();
    let z_op = characteristic_impedance(hz_to_rad(6e9), FluxBias(0.475), &p).unwrap();
    check(
        (z_dc - 22.0).abs() <= 2.0 && (44.0..=52.0).contains(&z_op),
        format!("Z0(0, 0) = {z_dc:.2} ohm, Z0(6 GHz, 0.475) = {z_op:.2} ohm"),
    )
}

fn c4_ripple() -> Outcome {
    let p = Preset::JtwpaA.fitted();
    let grid = FrequencyGrid::linspace_hz(3e9, 9e9, 2001).unwrap();
    let s = linear_s21(&grid, FluxBias(0.0), &p, 865, 50.0, 50.0)
        .unwrap()
        .mag_db();
    let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    let pp = hi - lo;
    check(
        (pp - 2.5).abs() <= 1.0,
        format!("peak-to-peak ripple 3-9 GHz = {pp:.2} dB"),
    )
}

fn c5_peak_gain() -> Outcome {
    let theta = 3.1;
    let ideal = ratio_to_db(power_gain(0.0, Complex64::new(theta / 865.0, 0.0), 865.0));
    let approx = ratio_to_db((2.0 * theta).exp() / 4.0);
    let (p, op, pump) = preset_a_op(theta);
    let roots = phase_match_frequencies(&op, &pump, &p, Convention::Corrected).unwrap();
    let at_roots: Vec<f64> = roots
        .iter()
        .flat_map(|(a, b)| [*a, *b])
        .map(|w| {
            ratio_to_db(
                mismatch_terms(w, &op, &pump, &p, Convention::Corrected)
                    .unwrap()
                    .gain(865.0),
            )
        })
        .collect();
    let first = (ideal - 20.9).abs() <= 0.1 && (approx - 20.9).abs() <= 0.1;
    let second = !at_roots.is_empty() && at_roots.iter().all(|g| (g - 20.0).abs() <= 1.0);
    check(
        first && second,
        format!("kappa=0 gain {ideal:.2} dB (exp(2θ)/4: {approx:.2} dB); gain at kappa roots {at_roots:.2?} dB"),
    )
}

fn c6_roots() -> Outcome {
    let (p, op, pump) = preset_a_op(3.1);
    let roots = phase_match_frequencies(&op, &pump, &p, Convention::Corrected).unwrap();
    let ghz: Vec<(f64, f64)> = roots
        .iter()
        .map(|(a, b)| (rad_to_hz(*a) / 1e9, rad_to_hz(*b) / 1e9))
        .collect();
    let pass = ghz.len() == 1 && (3.0..=4.5).contains(&ghz[0].0) && (7.5..=9.0).contains(&ghz[0].1);
    check(pass, format!("roots {ghz:.3?} GHz"))
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn c7_regimes() -> Outcome {
    let (p, op, pump) = preset_a_op(3.1);
    let alpha = pump.alpha_p.abs();
    // κ = 0 with the pump-level coupling
    let z: Vec<f64> = (0..=40)
        .map(|i| (2.0 + 2.0 * i as f64 / 40.0) / alpha)
        .collect();
    let lng: Vec<f64> = z
        .iter()
        .map(|&z| power_gain(0.0, Complex64::new(alpha, 0.0), z).ln())
        .collect();
    let slope = least_squares_slope(&z, &lng) / (2.0 * alpha);
    // κ = 2α_p at the degenerate point
    let m = mismatch_terms(op.omega_p, &op, &pump, &p, Convention::Corrected).unwrap();
    let kappa_ratio = m.kappa / (2.0 * pump.alpha_p);
    let mut quad_dev: f64 = 0.0;
    for i in 1..=30 {
        let z = 0.3 * i as f64 / 30.0 / alpha;
        let g = m.gain(z);
        quad_dev = quad_dev.max(((g - 1.0) / (alpha * z).powi(2) - 1.0).abs());
    }
    check(
        (slope - 1.0).abs() <= 0.01 && (kappa_ratio - 1.0).abs() < 1e-9 && quad_dev <= 0.02,
        format!(
            "log-gain slope / 2α_p = {slope:.4}; κ/2α_p = {kappa_ratio:.6}, max (G-1)/(α_p z)² deviation {quad_dev:.2e}"
        ),
    )
}

fn c8_oracle() -> Outcome {
    let (p, op, pump) = preset_a_op(3.1);
    let conv = Convention::Corrected;
    let grid = FrequencyGrid::linspace_hz(1e9, 11e9, 200).unwrap();
    let closed = analytic_gain(&grid, &op, &pump, &p, conv)
        .unwrap()
        .linear_gain();
    let opts = CmeOptions::default();
    let mut dev: f64 = 0.0;
    let mut drift: f64 = 0.0;
    for (w, g) in grid.omegas().iter().zip(&closed) {
        let sol = integrate_cme(
            *w,
            &op,
            &pump,
            &p,
            conv,
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            &opts,
        )
        .unwrap();
        dev = dev.max((sol.signal_gain() - g).abs() / g);
        let mr = sol.manley_rowe();
        drift = drift.max(
            mr.iter()
                .map(|v| ((v - mr[0]) / mr[0]).abs())
                .fold(0.0, f64::max),
        );
    }
    check(
        dev < 1e-6 && drift < 1e-9,
        format!("max relative gain deviation {dev:.2e}; Manley-Rowe drift {drift:.2e}"),
    )
}

fn desk_setup() -> (LadderConfig, OperatingPoint, UnitCellParams) {
    let preset = Preset::JtwpaB;
    let p = preset.fitted();
    let flux = preset.operating_flux();
    let wp = hz_to_rad(6e9);
    let cfg = LadderConfig::new(p, flux, 350)
        .unwrap()
        .with_loss(LossMode::FixedAtPump { omega: wp });
    let pump_dbm = calibrate_pump_power(&cfg, wp, 2.1, -80.0).unwrap();
    let op = OperatingPoint {
        flux,
        omega_p: wp,
        pump_power_dbm: pump_dbm,
        n_cells: 350,
    };
    (cfg, op, p)
}

fn c9_timedomain(cfg: &LadderConfig, op: &OperatingPoint, p: &UnitCellParams) -> Outcome {
    let conv = Convention::Corrected;
    let pump = pump_from_theta(2.1, op, p, conv).unwrap();
    let roots = phase_match_frequencies(op, &pump, p, conv).unwrap();
    let Some(&(root, _)) = roots.first() else {
        return check(
            false,
            "no kappa root at the desk-scale operating point".into(),
        );
    };
    let grid = FrequencyGrid::linspace_hz(3e9, 5.5e9, 11).unwrap();
    let signal_dbm = op.pump_power_dbm - 30.0;
    let td: Vec<f64> = grid
        .omegas()
        .iter()
        .map(|&w| simulate_gain_point(cfg, op, w, signal_dbm).unwrap())
        .collect();
    let (i_pk, td_peak) =
        td.iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |a, (i, g)| if g > a.1 { (i, g) } else { a },
            );
    let f_pk = rad_to_hz(grid.omegas()[i_pk]);
    let fine = FrequencyGrid::linspace_hz(3e9, 5.5e9, 251).unwrap();
    let (_, an_peak) = analytic_gain(&fine, op, &pump, p, conv).unwrap().peak();

    let check_grid = FrequencyGrid::linspace_hz(4e9, 8e9, 3).unwrap();
    let lin = linear_s21(&check_grid, op.flux, p, 350, cfg.z_source, cfg.z_load)
        .unwrap()
        .mag_db();
    let off_dev = check_grid
        .omegas()
        .iter()
        .zip(&lin)
        .map(|(&w, l)| (transmission_db(cfg, w, -100.0).unwrap() - l).abs())
        .fold(0.0, f64::max);
    let root_ghz = rad_to_hz(root) / 1e9;
    check(
        (td_peak - an_peak).abs() <= 3.0 && (f_pk / 1e9 - root_ghz).abs() <= 0.5 && off_dev <= 1.0,
        format!(
            "pump {:.2} dBm; peak {td_peak:.2} dB at {:.2} GHz vs analytic {an_peak:.2} dB, root {root_ghz:.2} GHz; pump-off deviation {off_dev:.3} dB",
            op.pump_power_dbm,
            f_pk / 1e9
        ),
    )
}

fn c10_compression(cfg: &LadderConfig, op: &OperatingPoint) -> Outcome {
    let powers: Vec<f64> = (0..14)
        .map(|i| op.pump_power_dbm - 36.0 + 3.0 * i as f64)
        .collect();
    let res = compression_sweep(cfg, op, hz_to_rad(4e9), &powers).unwrap();
    match (res.p1db, res.output_at_p1db) {
        (Some(p1), Some(out)) => {
            let gap = res.pump_output_dbm - out;
            check(
                (gap - 4.0).abs() <= 2.0,
                format!(
                    "G0 {:.2} dB, p1db {p1:.2} dBm, output {out:.2} dBm, pump output {:.2} dBm, gap {gap:.2} dB",
                    res.small_signal_gain_db, res.pump_output_dbm
                ),
            )
        }
        _ => check(
            false,
            format!("not compressed (G0 {:.2} dB)", res.small_signal_gain_db),
        ),
    }
}

fn c11_fits() -> Outcome {
    let truth = Preset::JtwpaA.fitted();
    let grid = FrequencyGrid::linspace_hz(1e9, 12e9, 60).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 0.005).unwrap();
    let curve = dispersion_curve(&grid, FluxBias(0.5), &truth).unwrap();
    let kl = curve
        .k
        .iter()
        .map(|k| k * 865.0 * (1.0 + noise.sample(&mut rng)))
        .collect();
    let data = FluxTrace {
        flux: FluxBias(0.5),
        kl: KlTrace::new(grid, kl).unwrap(),
    };
    let mut init = Preset::JtwpaA.design();
    init.cgnd = truth.cgnd;
    let fit = fit_dispersion(&[data], 865, &KnownParams { r: Some(truth.r) }, &init).unwrap();
    let e_i0 = fit.params.i0 / truth.i0 - 1.0;
    let e_c0 = fit.params.c0 / truth.c0 - 1.0;

    let t_hemt = 2.5;
    let gb = 1e13;
    let b = 1e6;
    let noise = Normal::new(0.0, 0.002).unwrap();
    let mut points = Vec::new();
    for ghz in [4.0, 5.0, 6.0, 7.0, 8.0] {
        let w = hz_to_rad(ghz * 1e9);
        for i in 0..25 {
            let t = 0.15 + (4.0 - 0.15) * i as f64 / 24.0;
            let p = (quantum_source_term(w, t) + K_B * t_hemt) * gb;
            points.push(NoisePoint {
                omega: w,
                temp_k: t,
                p_watts: p * (1.0 + noise.sample(&mut rng)),
            });
        }
    }
    let yf = yfactor_fit(&points, b).unwrap();
    let e_t = yf
        .model
        .t_hemt
        .iter()
        .map(|t| (t / t_hemt - 1.0).abs())
        .fold(0.0, f64::max);
    check(
        e_i0.abs() <= 0.02 && e_c0.abs() <= 0.02 && yf.failures.is_empty() && e_t <= 0.01,
        format!(
            "I0 error {:.3}%, C0 error {:.3}%, worst T_HEMT error {:.3}%",
            100.0 * e_i0,
            100.0 * e_c0,
            100.0 * e_t
        ),
    )
}

fn c12_listing() -> Outcome {
    // The model profile is mirror-symmetric about the pump, so an
    // asymmetric root pair cannot be produced; the other items are not
    // modelled at all.
    let (p, op, pump) = preset_a_op(3.1);
    let roots = phase_match_frequencies(&op, &pump, &p, Convention::Corrected).unwrap();
    let symmetric = roots
        .iter()
        .all(|(a, b)| (a + b - 2.0 * op.omega_p).abs() < hz_to_rad(1e3));
    check(
        symmetric,
        "not reproduced: absolute insertion loss, measured added-noise photons, pump-depletion saturation levels, \
         asymmetric root pair (model roots mirror about the pump)"
            .into(),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let dt = t.elapsed();
        let pass = o.pass && dt <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2}: {} ({:.2} s, budget {} s) {}",
            if pass { "PASS" } else { "FAIL" },
            dt.as_secs_f64(),
            budget.as_secs(),
            o.detail
        );
    };
    let s = Duration::from_secs;
    report(1, s(1), &mut c1_kerr_free);
    report(2, s(1), &mut c2_kerr_sign);
    report(3, s(1), &mut c3_impedance);
    report(4, s(5), &mut c4_ripple);
    report(5, s(1), &mut c5_peak_gain);
    report(6, s(5), &mut c6_roots);
    report(7, s(10), &mut c7_regimes);
    report(8, s(30), &mut c8_oracle);

    // pump calibration is shared with 10 and charged to 9
    let mut desk = None;
    report(9, s(20 * 60), &mut || {
        let (cfg, op, p) = desk_setup();
        let o = c9_timedomain(&cfg, &op, &p);
        desk = Some((cfg, op));
        o
    });
    report(10, s(30 * 60), &mut || match &desk {
        Some((cfg, op)) => c10_compression(cfg, op),
        None => check(false, "desk-scale setup unavailable".into()),
    });
    report(11, s(60), &mut c11_fits);
    report(12, s(1), &mut c12_listing);
    println!("{} of 12 criteria failed", failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
