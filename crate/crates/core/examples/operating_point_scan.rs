//! Flux scan at fixed pump power: phase-matching roots, predicted peak
//! gain, impedance and ripple of the standing-wave-dressed gain profile.

use jtwpa::cme::{calibrate_amplitude_scale, Convention, OperatingPoint};
use jtwpa::tasks::scan_point;
use jtwpa::units::hz_to_rad;
use jtwpa::{FluxBias, FrequencyGrid, Preset};

fn main() -> jtwpa::Result<()> {
    let preset = Preset::JtwpaA;
    let p = preset.fitted();
    let conv = Convention::Corrected;
    let base = OperatingPoint {
        flux: preset.operating_flux(),
        omega_p: hz_to_rad(6e9),
        pump_power_dbm: preset.pump_power_anchor_dbm(),
        n_cells: preset.n_cells(),
    };
    let scale = calibrate_amplitude_scale(
        &[(base.pump_power_dbm, preset.theta_nl_anchor())],
        &base,
        &p,
        conv,
    )?
    .scale;
    let grid = FrequencyGrid::linspace_hz(1e9, 11e9, 501)?;
    println!(
        "{:>6} {:>8} {:>8} {:>9} {:>10}  flags",
        "flux", "Z0", "theta", "peak dB", "ripple"
    );
    for i in 0..=8 {
        let op = OperatingPoint {
            flux: FluxBias(0.3 + 0.025 * i as f64),
            ..base
        };
        let pt = scan_point(&p, conv, &op, scale, &grid, 3.5, 50.0)?;
        println!(
            "{:>6.3} {:>8.2} {:>8.3} {:>9.2} {:>10}  {}",
            pt.flux_phi0,
            pt.z0_ohm,
            pt.theta_nl_rad,
            pt.peak_gain_db,
            pt.ripple_variance
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
            pt.flags.join(", ")
        );
    }
    Ok(())
}
