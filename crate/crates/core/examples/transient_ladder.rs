//! Transient simulation of a short ladder: pump-off transmission against
//! the linear cascade, then a pumped record with its output spectrum.

use jtwpa::dispersion::linear_s21;
use jtwpa::timedomain::{
    harmonic_report, run_transient, transmission_db, LadderConfig, Tone, ToneSource,
};
use jtwpa::units::hz_to_rad;
use jtwpa::{FrequencyGrid, Preset};

fn main() -> jtwpa::Result<()> {
    let preset = Preset::JtwpaB;
    let p = preset.fitted();
    let flux = preset.operating_flux();
    let n = 32;
    let cfg = LadderConfig::new(p, flux, n)?.with_duration(60e-9);

    let grid = FrequencyGrid::linspace_hz(3e9, 9e9, 4)?;
    let linear = linear_s21(&grid, flux, &p, n, cfg.z_source, cfg.z_load)?.mag_db();
    for (w, l) in grid.omegas().iter().zip(&linear) {
        let t = transmission_db(&cfg, *w, -100.0)?;
        println!(
            "{:.1} GHz: transient {t:.3} dB, linear {l:.3} dB",
            w / hz_to_rad(1e9)
        );
    }

    let wp = hz_to_rad(6e9);
    let ws = hz_to_rad(4.5e9);
    let src = ToneSource::new(vec![
        Tone {
            omega: wp,
            power_dbm: -70.0,
            phase: 0.0,
        },
        Tone {
            omega: ws,
            power_dbm: -100.0,
            phase: 0.0,
        },
    ])?;
    let rec = run_transient(&cfg, &src)?;
    let h = harmonic_report(&rec, wp, ws, cfg.z_load)?;
    println!(
        "output: pump {:.1} dBm, 3rd harmonic {:.1} dBm, signal {:.1} dBm, idler {:.1} dBm",
        h.pump_dbm, h.third_harmonic_dbm, h.signal_dbm, h.idler_dbm
    );
    Ok(())
}
