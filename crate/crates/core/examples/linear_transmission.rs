//! Dispersion, plasma frequency and the standing-wave ripple of the
//! unpumped line between 50 ohm ports.
//!
//! Writes `s21_flux0.csv` into the directory given as the first argument
//! (default: current directory).

use std::path::PathBuf;

use jtwpa::dispersion::{delta_k, linear_s21, plasma_frequency, wavenumber};
use jtwpa::units::{hz_to_rad, rad_to_hz};
use jtwpa::{FluxBias, FrequencyGrid, Preset};

fn main() -> jtwpa::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    let p = Preset::JtwpaA.fitted();
    for f in [0.0, 0.475] {
        let flux = FluxBias(f);
        let wpl = plasma_frequency(flux, &p)?;
        let k6 = wavenumber(hz_to_rad(6e9), flux, &p)?;
        let dk = delta_k(hz_to_rad(4e9), hz_to_rad(6e9), flux, &p)?;
        println!(
            "flux {f}: plasma {:.2} GHz, k(6 GHz) = {k6:.4} rad/cell, dk(4 GHz; pump 6 GHz) = {dk:.2e} rad/cell",
            rad_to_hz(wpl) / 1e9
        );
    }

    let grid = FrequencyGrid::linspace_hz(3e9, 9e9, 1201)?;
    let s21 = linear_s21(
        &grid,
        FluxBias(0.0),
        &p,
        Preset::JtwpaA.n_cells(),
        50.0,
        50.0,
    )?;
    let db = s21.mag_db();
    let hi = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = db.iter().copied().fold(f64::INFINITY, f64::min);
    println!(
        "ripple 3-9 GHz at zero flux: {:.2} dB peak to peak",
        hi - lo
    );
    let path = out.join("s21_flux0.csv");
    s21.save_csv(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
