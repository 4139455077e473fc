use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Proc;

use jtwpa::cell::characteristic_impedance;
use jtwpa::cme::{analytic_gain, pump_from_theta};
use jtwpa::config::RunConfig;
use jtwpa::fitkit::kelvin_to_photons;
use jtwpa::tasks::{dressed_ripple, run, Command, RunOptions};
use jtwpa::units::hz_to_rad;
use jtwpa::{Convention, Error, FluxBias, FrequencyGrid, OperatingPoint, Preset};
use serde_json::Value;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn config(text: &str) -> RunConfig {
    RunConfig::parse(text, crate_dir().join("configs")).unwrap()
}

fn opts(dir: &Path) -> RunOptions {
    RunOptions {
        out_dir: dir.to_path_buf(),
        workers: Some(2),
        ..RunOptions::default()
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn col(path: &Path, name: &str) -> Vec<f64> {
    let (h, rows) = csv_rows(path);
    let i = h.iter().position(|c| c == name).unwrap();
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

const GAIN_SWEEP: &str = "
[device]
preset = jtwpa-a
[operating_point]
theta_nl_rad = 3.1
[gain]
pump_freqs_ghz = 5, 6, 7, 8, 9
[grid]
start_ghz = 1
stop_ghz = 13
points = 601
";

#[test]
fn gain_sweep_spans_tunable_band() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(Command::Gain, &config(GAIN_SWEEP), &opts(dir.path())).unwrap();
    assert!(out.succeeded());
    let csvs: Vec<_> = out
        .files
        .iter()
        .filter(|f| f.extension().unwrap() == "csv")
        .collect();
    assert_eq!(csvs.len(), 5);
    let pumps = out.summary["pumps"].as_array().unwrap();
    let lower_roots: Vec<f64> = pumps
        .iter()
        .map(|p| p["kappa_roots_hz"][0][0].as_f64().unwrap())
        .collect();
    assert!(
        lower_roots.windows(2).all(|w| w[1] > w[0]),
        "{lower_roots:?}"
    );
    let span = out.summary["lobe_union"]["span_hz"].as_f64().unwrap();
    assert!(span >= 8e9, "{span}");
}

#[test]
fn instantaneous_bandwidth_at_6ghz() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("[operating_point]\ntheta_nl_rad = 3.1\n[grid]\nstart_ghz = 1\nstop_ghz = 11\npoints = 1001\n");
    let out = run(Command::Gain, &cfg, &opts(dir.path())).unwrap();
    let bw = out.summary["pumps"][0]["bandwidth_3db_hz"]
        .as_f64()
        .unwrap();
    assert!((bw - 3e9).abs() <= 0.5e9, "{bw}");
}

#[test]
fn zero_pump_gives_flat_profile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("[operating_point]\npump_power_dbm = -inf\n");
    let out = run(Command::Gain, &cfg, &opts(dir.path())).unwrap();
    assert!(out.succeeded(), "{:?}", out.failures);
    let gains = col(&dir.path().join("gain_pump_6.000ghz.csv"), "gain_db");
    assert!(gains.iter().all(|g| *g == 0.0));
}

#[test]
fn cme_cross_check_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        "[operating_point]\ntheta_nl_rad = 3.1\n[gain]\ncme_check = true\n[grid]\npoints = 41\n",
    );
    let out = run(Command::Gain, &cfg, &opts(dir.path())).unwrap();
    let dev = out.summary["pumps"][0]["cme_max_relative_deviation"]
        .as_f64()
        .unwrap();
    assert!(dev < 1e-6, "{dev}");
}

#[test]
fn outputs_are_deterministic_and_carry_provenance() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config(GAIN_SWEEP);
    let out = run(Command::Gain, &cfg, &opts(a.path())).unwrap();
    run(
        Command::Gain,
        &cfg,
        &RunOptions {
            workers: Some(1),
            ..opts(b.path())
        },
    )
    .unwrap();
    for f in &out.files {
        let name = f.file_name().unwrap();
        assert_eq!(
            fs::read(f).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name:?}"
        );
        let side = read_json(
            &a.path()
                .join(format!("{}.provenance.json", name.to_string_lossy())),
        );
        assert_eq!(side["config_sha256"], cfg.hash());
        assert_eq!(side["preset"], "jtwpa-a");
        assert_eq!(side["convention"], "corrected");
    }
    let prov = read_json(&a.path().join("provenance.json"));
    assert_eq!(prov["toolkit_version"], env!("CARGO_PKG_VERSION"));
    assert!(prov["config"].is_object() || prov["config"].is_array());
    assert_eq!(
        read_json(&a.path().join("failures.json")),
        serde_json::json!([])
    );
}

#[test]
fn overrides_take_precedence_over_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        config("[run]\nconvention = corrected\n[device]\npreset = jtwpa-a\n[grid]\npoints = 21\n");
    let o = RunOptions {
        preset: Some(Preset::JtwpaB),
        convention: Some(jtwpa::Convention::AsPrinted),
        ..opts(dir.path())
    };
    run(Command::Gain, &cfg, &o).unwrap();
    let side = read_json(&dir.path().join("summary.json.provenance.json"));
    assert_eq!(side["preset"], "jtwpa-b");
    assert_eq!(side["convention"], "as-printed");
}

#[test]
fn unknown_keys_are_rejected_with_their_path() {
    let err = RunConfig::parse("[gain]\npump_freq = 6\n", PathBuf::new()).unwrap_err();
    match err {
        Error::Config { key, .. } => assert_eq!(key, "[gain].pump_freq"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn smoke_ladder_matches_linear_cascade() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&crate_dir().join("configs/smoke_32.ini")).unwrap();
    let out = run(Command::Timedomain, &cfg, &opts(dir.path())).unwrap();
    assert!(out.succeeded());
    let dev = out.summary["max_deviation_from_linear_db"]
        .as_f64()
        .unwrap();
    assert!(dev < 1.0, "{dev}");
}

#[test]
fn compression_row_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        "[device]\npreset = jtwpa-b\n[operating_point]\nn_cells = 24\npump_power_dbm = -76\n\
         [timedomain]\nmode = compression\nt_total_ns = 60\nsignal_powers_dbm = -110, -100, -90\n",
    );
    let out = run(Command::Timedomain, &cfg, &opts(dir.path())).unwrap();
    assert!(out.succeeded(), "{:?}", out.failures);
    assert!(out.summary.get("p1db_dbm").is_some());
    assert_eq!(
        col(&dir.path().join("compression.csv"), "signal_dbm"),
        [-110.0, -100.0, -90.0]
    );
}

#[test]
fn record_mode_writes_port_and_spectrum_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        "[device]\npreset = jtwpa-b\n[operating_point]\nn_cells = 16\npump_power_dbm = -75\n\
         [timedomain]\nmode = record\nt_total_ns = 40\n",
    );
    let out = run(Command::Timedomain, &cfg, &opts(dir.path())).unwrap();
    assert!(out.succeeded(), "{:?}", out.failures);
    assert_eq!(
        csv_rows(&dir.path().join("record.csv")).0,
        ["t_s", "v_in", "v_out"]
    );
    assert_eq!(
        csv_rows(&dir.path().join("spectrum.csv")).0,
        ["freq_hz", "power_dbm"]
    );
    assert!(out.summary["harmonics_dbm"]["pump"].is_number());
}

#[test]
fn bundled_dataset_fit_recovers_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&crate_dir().join("configs/fit_a.ini")).unwrap();
    let out = run(Command::Fit, &cfg, &opts(dir.path())).unwrap();
    assert!(out.succeeded(), "{:?}", out.failures);
    let truth = Preset::JtwpaA.fitted();
    let rel = |k: &str, t: f64| (out.summary[k].as_f64().unwrap() / t - 1.0).abs();
    assert!(rel("i0_ua", truth.i0 * 1e6) < 0.02);
    assert!(rel("c0_ff", truth.c0 * 1e15) < 0.02);
    assert!(rel("r", truth.r) < 0.02);
    let res = col(&dir.path().join("fit_residuals.csv"), "residual_rad");
    assert!(!res.is_empty());
}

#[test]
fn corrupted_header_is_rejected_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("raw.csv");
    let good = fs::read_to_string(crate_dir().join("data/a_raw_flux0.500.csv")).unwrap();
    fs::write(&bad, good.replacen("freq_hz", "frequency", 1)).unwrap();
    let text = format!(
        "[fit]\nraw_csv = {}\nthru_csv = ../data/a_thru.csv\nflux_phi0 = 0.5\n",
        bad.display()
    );
    let out = run(Command::Fit, &config(&text), &opts(&dir.path().join("out"))).unwrap();
    assert_eq!(out.failures.len(), 1);
    assert!(
        out.failures[0].error.contains("raw.csv:1:"),
        "{}",
        out.failures[0].error
    );
}

#[test]
fn thru_as_raw_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text =
        "[fit]\nraw_csv = ../data/a_thru.csv\nthru_csv = ../data/a_thru.csv\nflux_phi0 = 0.5\n";
    let out = run(Command::Fit, &config(text), &opts(dir.path())).unwrap();
    assert!(!out.succeeded());
    assert!(dir.path().join("failures.json").exists());
}

const NOISE: &str = "
[noise]
noise_csv = ../data/noise_yfactor.csv
gains_csv = ../data/noise_gains.csv
bandwidth_hz = 1e6
";

#[test]
fn noise_recovers_hemt_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(Command::Noise, &config(NOISE), &opts(dir.path())).unwrap();
    assert!(out.succeeded(), "{:?}", out.failures);
    for t in col(&dir.path().join("noise_model.csv"), "t_hemt_k") {
        assert!((t / 2.5 - 1.0).abs() < 0.01, "{t}");
    }
    let p = dir.path().join("noise_result.csv");
    let f = col(&p, "freq_hz");
    for (k, n) in [
        ("t_system_k", "n_system"),
        ("t_jtwpa_k", "n_jtwpa"),
        ("t_hemt_k", "n_hemt"),
    ] {
        for ((t, n), f) in col(&p, k).iter().zip(col(&p, n)).zip(&f) {
            assert!((kelvin_to_photons(*t, hz_to_rad(*f)) - n).abs() <= 1e-8 * n.abs().max(1e-12));
        }
    }
}

#[test]
fn unit_snr_improvement_means_no_added_noise() {
    let dir = tempfile::tempdir().unwrap();
    let gains = dir.path().join("gains.csv");
    let freqs = col(&crate_dir().join("data/noise_gains.csv"), "freq_hz");
    let mut text = String::from("freq_hz,g_noise,g_jtwpa\n");
    for f in &freqs {
        text.push_str(&format!("{f},1,50\n"));
    }
    fs::write(&gains, text).unwrap();
    let cfg = config(&format!(
        "[noise]\nnoise_csv = ../data/noise_yfactor.csv\ngains_csv = {}\nbandwidth_hz = 1e6\n",
        gains.display()
    ));
    let out = run(Command::Noise, &cfg, &opts(&dir.path().join("out"))).unwrap();
    assert!(out.succeeded());
    assert!(col(&dir.path().join("out/noise_result.csv"), "t_jtwpa_k")
        .iter()
        .all(|t| *t == 0.0));
}

#[test]
fn matchpoint_selects_design_bias_and_flags_positive_kerr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&crate_dir().join("configs/matchpoint_a.ini")).unwrap();
    let out = run(Command::Matchpoint, &cfg, &opts(dir.path())).unwrap();
    assert!(out.succeeded());
    let step = out.summary["flux_step_phi0"].as_f64().unwrap();
    let sel = out.summary["selected"][0]["flux_phi0"].as_f64().unwrap();
    assert!((sel - 0.475).abs() <= step + 1e-9, "{sel}");

    let p = dir.path().join("matchpoint_scan.csv");
    let (h, rows) = csv_rows(&p);
    let fi = h.iter().position(|c| c == "flux_phi0").unwrap();
    let gi = h.iter().position(|c| c == "flags").unwrap();
    for r in &rows {
        let flux: f64 = r[fi].parse().unwrap();
        if flux < 0.31 {
            assert!(r[gi].contains("no phase matching"), "{r:?}");
        }
    }
}

#[test]
fn ripple_grows_as_impedance_leaves_50_ohm() {
    let p = Preset::JtwpaA.fitted();
    let grid = FrequencyGrid::linspace_hz(1e9, 11e9, 1001).unwrap();
    let mut pts = Vec::new();
    for i in 0..12 {
        let op = OperatingPoint {
            flux: FluxBias(0.34 + 0.015 * i as f64),
            omega_p: hz_to_rad(6e9),
            pump_power_dbm: -78.0,
            n_cells: 865,
        };
        let pump = pump_from_theta(3.1, &op, &p, Convention::Corrected).unwrap();
        let bare = analytic_gain(&grid, &op, &pump, &p, Convention::Corrected).unwrap();
        let z0 = characteristic_impedance(op.omega_p, op.flux, &p).unwrap();
        let v = dressed_ripple(&bare, &op, &p, 50.0).unwrap().unwrap();
        pts.push(((z0 - 50.0).abs(), v));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(pts.windows(2).all(|w| w[1].1 > w[0].1), "{pts:?}");
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_jtwpa");
    let dir = tempfile::tempdir().unwrap();
    let ok = Proc::new(exe)
        .args([
            "--out",
            dir.path().join("a").to_str().unwrap(),
            "--workers",
            "1",
            "gain",
        ])
        .output()
        .unwrap();
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );

    let bad_cfg = dir.path().join("bad.ini");
    fs::write(
        &bad_cfg,
        "[fit]\nraw_csv = missing.csv\nthru_csv = missing.csv\nflux_phi0 = 0.5\n",
    )
    .unwrap();
    let failed = Proc::new(exe)
        .args([
            "--config",
            bad_cfg.to_str().unwrap(),
            "--out",
            dir.path().join("b").to_str().unwrap(),
            "fit",
        ])
        .output()
        .unwrap();
    assert_eq!(failed.status.code(), Some(1));
    assert!(dir.path().join("b/failures.json").exists());

    fs::write(&bad_cfg, "[grid]\nstart = 1\n").unwrap();
    let invalid = Proc::new(exe)
        .args([
            "--config",
            bad_cfg.to_str().unwrap(),
            "--preset",
            "jtwpa-b",
            "gain",
        ])
        .output()
        .unwrap();
    assert_eq!(invalid.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("[grid].start"));
}
