//! INI run configuration.
//!
//! One file per run. Every section has a fixed key set; unknown sections or
//! keys are rejected with a `[section].key` path. Physical quantities carry
//! their unit in the key name (`pump_freq_ghz`, `c0_ff`, ...). Relative file
//! paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::cell::{FluxBias, Preset, UnitCellParams};
use crate::cme::Convention;
use crate::dispersion::FrequencyGrid;
use crate::error::{Error, Result};
use crate::timedomain::{LadderConfig, LossMode};
use crate::units::hz_to_rad;

const SCHEMA: &[(&str, &[&str])] = &[
    ("run", &["seed", "convention", "label"]),
    (
        "device",
        &[
            "preset",
            "parameter_set",
            "i0_ua",
            "r",
            "c0_ff",
            "cgnd_ff",
            "tan_delta",
            "cell_pitch_um",
        ],
    ),
    (
        "operating_point",
        &[
            "flux_phi0",
            "pump_freq_ghz",
            "pump_power_dbm",
            "theta_nl_rad",
            "n_cells",
            "amplitude_scale",
        ],
    ),
    ("grid", &["start_ghz", "stop_ghz", "points"]),
    ("gain", &["pump_freqs_ghz", "cme_check", "cme_rtol"]),
    (
        "timedomain",
        &[
            "mode",
            "z_source_ohm",
            "z_load_ohm",
            "dt_ps",
            "t_total_ns",
            "loss_mode",
            "loss_freq_ghz",
            "signal_dbm",
            "signal_freq_ghz",
            "signal_powers_dbm",
            "calibrate_theta_nl_rad",
            "calibration_probe_dbm",
        ],
    ),
    (
        "fit",
        &["raw_csv", "thru_csv", "flux_phi0", "n_cells", "r", "fit_r"],
    ),
    ("noise", &["noise_csv", "gains_csv", "bandwidth_hz"]),
    (
        "matchpoint",
        &[
            "flux_start_phi0",
            "flux_stop_phi0",
            "flux_points",
            "pump_power_start_dbm",
            "pump_power_stop_dbm",
            "pump_power_points",
            "pump_freqs_ghz",
            "theta_budget_rad",
            "z_ref_ohm",
        ],
    ),
];

/// Validated key-value content of a run configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
    base_dir: PathBuf,
}

fn config_err(section: &str, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: format!("[{section}].{key}"),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    /// Parses INI text; `base_dir` anchors relative paths.
    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self> {
        let ini = ini::Ini::load_from_str(text).map_err(|e| Error::Config {
            key: "<file>".into(),
            message: e.to_string(),
        })?;
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (name, props) in ini.iter() {
            let Some(name) = name else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(config_err("", k, "key outside any section"));
                }
                continue;
            };
            let Some((_, allowed)) = SCHEMA.iter().find(|(s, _)| *s == name) else {
                return Err(Error::Config {
                    key: format!("[{name}]"),
                    message: "unknown section".into(),
                });
            };
            let entry = sections.entry(name.to_string()).or_default();
            for (k, v) in props.iter() {
                if !allowed.contains(&k) {
                    return Err(config_err(
                        name,
                        k,
                        format!("unknown key; expected one of {}", allowed.join(", ")),
                    ));
                }
                if entry.insert(k.to_string(), v.trim().to_string()).is_some() {
                    return Err(config_err(name, k, "duplicate key"));
                }
            }
        }
        let cfg = Self { sections, base_dir };
        cfg.check_types()?;
        Ok(cfg)
    }

    /// Type-checks every present value so errors surface before any work.
    fn check_types(&self) -> Result<()> {
        for (section, keys) in &self.sections {
            for key in keys.keys() {
                let k = key.as_str();
                match k {
                    "preset" => self.parse_as::<Preset>(section, k).map(|_| ())?,
                    "convention" => self.parse_as::<Convention>(section, k).map(|_| ())?,
                    "parameter_set" => self.parameter_set().map(|_| ())?,
                    "mode" => self.timedomain_mode().map(|_| ())?,
                    "loss_mode" => self.loss_mode_name().map(|_| ())?,
                    "label" | "raw_csv" | "thru_csv" | "noise_csv" | "gains_csv" => (),
                    "fit_r" | "cme_check" => self.get_bool(section, k).map(|_| ())?,
                    "seed" | "n_cells" | "points" | "flux_points" | "pump_power_points" => {
                        self.get_usize(section, k).map(|_| ())?
                    }
                    "pump_freqs_ghz" | "signal_powers_dbm" => {
                        self.get_list(section, k).map(|_| ())?
                    }
                    "flux_phi0" if section == "fit" => self.get_list(section, k).map(|_| ())?,
                    _ => self.get_f64(section, k).map(|_| ())?,
                }
            }
        }
        Ok(())
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(String::as_str)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) -> Result<()> {
        let Some((_, allowed)) = SCHEMA.iter().find(|(s, _)| *s == section) else {
            return Err(Error::Config {
                key: format!("[{section}]"),
                message: "unknown section".into(),
            });
        };
        if !allowed.contains(&key) {
            return Err(config_err(section, key, "unknown key"));
        }
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.into());
        Ok(())
    }

    fn parse_as<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(section, key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| config_err(section, key, format!("{e} (got {v:?})")))
            })
            .transpose()
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        let v: Option<f64> = self.parse_as(section, key)?;
        if let Some(x) = v {
            if x.is_nan() {
                return Err(config_err(section, key, "NaN is not allowed"));
            }
        }
        Ok(v)
    }

    pub fn get_usize(&self, section: &str, key: &str) -> Result<Option<usize>> {
        self.parse_as(section, key)
    }

    pub fn get_bool(&self, section: &str, key: &str) -> Result<Option<bool>> {
        self.raw(section, key)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(config_err(
                    section,
                    key,
                    format!("expected a boolean, got {v:?}"),
                )),
            })
            .transpose()
    }

    /// Comma-separated numbers.
    pub fn get_list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        self.raw(section, key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|x| !x.is_nan())
                            .ok_or_else(|| {
                                config_err(section, key, format!("bad list entry {s:?}"))
                            })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()
    }

    /// Comma-separated paths resolved against the config directory.
    pub fn get_paths(&self, section: &str, key: &str) -> Option<Vec<PathBuf>> {
        self.raw(section, key).map(|v| {
            v.split(',')
                .map(|s| {
                    let p = PathBuf::from(s.trim());
                    if p.is_absolute() {
                        p
                    } else {
                        self.base_dir.join(p)
                    }
                })
                .collect()
        })
    }

    pub fn require_f64(&self, section: &str, key: &str) -> Result<f64> {
        self.get_f64(section, key)?
            .ok_or_else(|| config_err(section, key, "required key is missing"))
    }

    pub fn require_list(&self, section: &str, key: &str) -> Result<Vec<f64>> {
        self.get_list(section, key)?
            .ok_or_else(|| config_err(section, key, "required key is missing"))
    }

    pub fn preset(&self) -> Result<Option<Preset>> {
        self.parse_as("device", "preset")
    }

    pub fn convention(&self) -> Result<Option<Convention>> {
        self.parse_as("run", "convention")
    }

    pub fn seed(&self) -> Result<u64> {
        Ok(self.parse_as("run", "seed")?.unwrap_or(0))
    }

    fn parameter_set(&self) -> Result<bool> {
        match self.raw("device", "parameter_set") {
            None | Some("fitted") => Ok(true),
            Some("design") => Ok(false),
            Some(other) => Err(config_err(
                "device",
                "parameter_set",
                format!("expected fitted or design, got {other:?}"),
            )),
        }
    }

    /// Preset parameters with any explicit overrides applied.
    pub fn cell_params(&self, preset: Preset) -> Result<UnitCellParams> {
        let mut p = if self.parameter_set()? {
            preset.fitted()
        } else {
            preset.design()
        };
        if let Some(v) = self.get_f64("device", "i0_ua")? {
            p.i0 = v * 1e-6;
        }
        if let Some(v) = self.get_f64("device", "r")? {
            p.r = v;
        }
        if let Some(v) = self.get_f64("device", "c0_ff")? {
            p.c0 = v * 1e-15;
        }
        if let Some(v) = self.get_f64("device", "cgnd_ff")? {
            p.cgnd = v * 1e-15;
        }
        if let Some(v) = self.get_f64("device", "tan_delta")? {
            p.tan_delta = v;
        }
        if let Some(v) = self.get_f64("device", "cell_pitch_um")? {
            p.a = v * 1e-6;
        }
        p.validate()
            .map_err(|e| config_err("device", "*", e.to_string()))?;
        Ok(p)
    }

    pub fn flux(&self, preset: Preset) -> Result<FluxBias> {
        Ok(self
            .get_f64("operating_point", "flux_phi0")?
            .map(FluxBias)
            .unwrap_or_else(|| preset.operating_flux()))
    }

    pub fn n_cells(&self, preset: Preset) -> Result<usize> {
        let n = self
            .get_usize("operating_point", "n_cells")?
            .unwrap_or_else(|| preset.n_cells());
        if n == 0 {
            return Err(config_err("operating_point", "n_cells", "must be >= 1"));
        }
        Ok(n)
    }

    /// `[grid]` as a linear frequency grid.
    pub fn grid(&self, default: (f64, f64, usize)) -> Result<FrequencyGrid> {
        let start = self.get_f64("grid", "start_ghz")?.unwrap_or(default.0);
        let stop = self.get_f64("grid", "stop_ghz")?.unwrap_or(default.1);
        let n = self.get_usize("grid", "points")?.unwrap_or(default.2);
        FrequencyGrid::linspace_hz(start * 1e9, stop * 1e9, n)
            .map_err(|e| config_err("grid", "*", e.to_string()))
    }

    pub fn timedomain_mode(&self) -> Result<TimedomainMode> {
        match self.raw("timedomain", "mode") {
            None | Some("gain") => Ok(TimedomainMode::Gain),
            Some("compression") => Ok(TimedomainMode::Compression),
            Some("transmission") => Ok(TimedomainMode::Transmission),
            Some("record") => Ok(TimedomainMode::Record),
            Some(other) => Err(config_err(
                "timedomain",
                "mode",
                format!("expected gain, compression, transmission or record, got {other:?}"),
            )),
        }
    }

    fn loss_mode_name(&self) -> Result<&str> {
        match self.raw("timedomain", "loss_mode") {
            None => Ok("fixed-at-pump"),
            Some(m @ ("off" | "fixed-at-pump" | "per-cell-rc")) => Ok(m),
            Some(other) => Err(config_err(
                "timedomain",
                "loss_mode",
                format!("expected off, fixed-at-pump or per-cell-rc, got {other:?}"),
            )),
        }
    }

    /// Ladder settings; `omega_p` is the default loss reference frequency.
    pub fn ladder(
        &self,
        p: UnitCellParams,
        flux: FluxBias,
        n_cells: usize,
        omega_p: f64,
    ) -> Result<LadderConfig> {
        let mut cfg = LadderConfig::new(p, flux, n_cells)?;
        let td = |k: &str| self.get_f64("timedomain", k);
        if let Some(v) = td("z_source_ohm")? {
            cfg.z_source = v;
        }
        if let Some(v) = td("z_load_ohm")? {
            cfg.z_load = v;
        }
        if let Some(v) = td("dt_ps")? {
            cfg.dt = v * 1e-12;
        }
        if let Some(v) = td("t_total_ns")? {
            cfg.t_total = v * 1e-9;
        }
        let loss_omega = td("loss_freq_ghz")?
            .map(|f| hz_to_rad(f * 1e9))
            .unwrap_or(omega_p);
        cfg.loss_mode = match self.loss_mode_name()? {
            "off" => LossMode::Off,
            "per-cell-rc" => LossMode::PerCellRc { omega: loss_omega },
            _ => LossMode::FixedAtPump { omega: loss_omega },
        };
        cfg.validate()
            .map_err(|e| config_err("timedomain", "*", e.to_string()))?;
        Ok(cfg)
    }

    /// Writes a ladder's settings into `[timedomain]`, `[device]` and
    /// `[operating_point]`, so [`RunConfig::ladder`] reproduces it.
    pub fn set_ladder(&mut self, cfg: &LadderConfig) -> Result<()> {
        let p = cfg.p;
        self.set("device", "i0_ua", fmt(p.i0 * 1e6))?;
        self.set("device", "r", fmt(p.r))?;
        self.set("device", "c0_ff", fmt(p.c0 * 1e15))?;
        self.set("device", "cgnd_ff", fmt(p.cgnd * 1e15))?;
        self.set("device", "tan_delta", fmt(p.tan_delta))?;
        self.set("device", "cell_pitch_um", fmt(p.a * 1e6))?;
        self.set("operating_point", "flux_phi0", fmt(cfg.flux.value()))?;
        self.set("operating_point", "n_cells", cfg.n_cells.to_string())?;
        self.set("timedomain", "z_source_ohm", fmt(cfg.z_source))?;
        self.set("timedomain", "z_load_ohm", fmt(cfg.z_load))?;
        self.set("timedomain", "dt_ps", fmt(cfg.dt * 1e12))?;
        self.set("timedomain", "t_total_ns", fmt(cfg.t_total * 1e9))?;
        let (name, omega) = match cfg.loss_mode {
            LossMode::Off => ("off", None),
            LossMode::FixedAtPump { omega } => ("fixed-at-pump", Some(omega)),
            LossMode::PerCellRc { omega } => ("per-cell-rc", Some(omega)),
        };
        self.set("timedomain", "loss_mode", name)?;
        if let Some(w) = omega {
            self.set(
                "timedomain",
                "loss_freq_ghz",
                fmt(crate::units::rad_to_hz(w) * 1e-9),
            )?;
        }
        Ok(())
    }

    /// Canonical text: sections and keys sorted, one `key = value` per line.
    pub fn to_ini_string(&self) -> String {
        let mut out = String::new();
        for (section, keys) in &self.sections {
            out.push_str(&format!("[{section}]\n"));
            for (k, v) in keys {
                out.push_str(&format!("{k} = {v}\n"));
            }
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_ini_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Section/key/value triples in canonical order.
    pub fn entries(&self) -> BTreeMap<String, BTreeMap<String, String>> {
        self.sections.clone()
    }
}

/// Shortest representation that parses back to the same `f64`.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimedomainMode {
    Gain,
    Compression,
    Transmission,
    Record,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, PathBuf::from("/data"))
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let err = parse("[grid]\nstart_ghz = 3\nstop = 9\n").unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "[grid].stop"),
            other => panic!("{other:?}"),
        }
        let err = parse("[gird]\npoints = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "[gird]"));
        assert!(parse("points = 3\n").is_err());
    }

    #[test]
    fn values_are_type_checked_up_front() {
        let err = parse("[operating_point]\npump_power_dbm = loud\n").unwrap_err();
        assert!(
            matches!(err, Error::Config { ref key, .. } if key == "[operating_point].pump_power_dbm")
        );
        assert!(parse("[device]\npreset = jtwpa-c\n").is_err());
        assert!(parse("[timedomain]\nloss_mode = sometimes\n").is_err());
        assert!(parse("[gain]\npump_freqs_ghz = 5, x\n").is_err());
        assert!(parse("[run]\nconvention = as-printed\n").is_ok());
    }

    #[test]
    fn device_overrides_and_paths() {
        let cfg =
            parse("[device]\npreset = jtwpa-b\nc0_ff = 50\n[fit]\nraw_csv = a.csv, /abs/b.csv\n")
                .unwrap();
        let preset = cfg.preset().unwrap().unwrap();
        assert_eq!(preset, Preset::JtwpaB);
        let p = cfg.cell_params(preset).unwrap();
        assert!((p.c0 - 50e-15).abs() < 1e-27);
        assert_eq!(p.i0, preset.fitted().i0);
        let paths = cfg.get_paths("fit", "raw_csv").unwrap();
        assert_eq!(
            paths,
            vec![PathBuf::from("/data/a.csv"), PathBuf::from("/abs/b.csv")]
        );
        assert!(parse("[device]\nr = -1\n")
            .unwrap()
            .cell_params(Preset::JtwpaA)
            .is_err());
    }

    #[test]
    fn ladder_roundtrips_through_config() {
        let p = Preset::JtwpaB.fitted();
        let ladder = LadderConfig::new(p, FluxBias(0.45), 350)
            .unwrap()
            .with_loss(LossMode::PerCellRc {
                omega: hz_to_rad(6e9),
            });
        let mut cfg = RunConfig::default();
        cfg.set_ladder(&ladder).unwrap();
        let text = cfg.to_ini_string();
        let back = parse(&text).unwrap();
        let preset = Preset::JtwpaB;
        let rebuilt = back
            .ladder(
                back.cell_params(preset).unwrap(),
                back.flux(preset).unwrap(),
                back.n_cells(preset).unwrap(),
                1.0,
            )
            .unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
        assert!(
            close(rebuilt.p.i0, ladder.p.i0)
                && close(rebuilt.p.c0, ladder.p.c0)
                && close(rebuilt.p.a, ladder.p.a)
        );
        assert!(close(rebuilt.dt, ladder.dt) && close(rebuilt.t_total, ladder.t_total));
        assert_eq!(
            (rebuilt.p.r, rebuilt.p.cgnd, rebuilt.p.tan_delta),
            (ladder.p.r, ladder.p.cgnd, ladder.p.tan_delta)
        );
        assert_eq!(
            (
                rebuilt.flux,
                rebuilt.n_cells,
                rebuilt.z_source,
                rebuilt.z_load
            ),
            (ladder.flux, ladder.n_cells, ladder.z_source, ladder.z_load)
        );
        match (rebuilt.loss_mode, ladder.loss_mode) {
            (LossMode::PerCellRc { omega: a }, LossMode::PerCellRc { omega: b }) => {
                assert!(close(a, b))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_is_canonical() {
        let a = parse("[grid]\npoints = 5\nstart_ghz = 3\n[run]\nseed = 1\n").unwrap();
        let b = parse("[run]\nseed = 1\n\n[grid]\nstart_ghz = 3\npoints = 5\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = parse("[run]\nseed = 2\n[grid]\nstart_ghz = 3\npoints = 5\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
