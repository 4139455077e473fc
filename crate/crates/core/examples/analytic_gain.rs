//! Closed-form gain profile at the JTWPA-A operating point, its
//! phase-matching roots and a numerical cross-check of the coupled-mode
//! equations.

use jtwpa::cme::{
    analytic_gain, integrate_cme, phase_match_frequencies, pump_from_theta, CmeOptions,
};
use jtwpa::units::{hz_to_rad, rad_to_hz};
use jtwpa::{Convention, FrequencyGrid, OperatingPoint, Preset};
use num_complex::Complex64;

fn main() -> jtwpa::Result<()> {
    let preset = Preset::JtwpaA;
    let p = preset.fitted();
    let conv = Convention::Corrected;
    let op = OperatingPoint {
        flux: preset.operating_flux(),
        omega_p: hz_to_rad(6e9),
        pump_power_dbm: preset.pump_power_anchor_dbm(),
        n_cells: preset.n_cells(),
    };
    let pump = pump_from_theta(preset.theta_nl_anchor(), &op, &p, conv)?;
    println!(
        "alpha_p = {:.3e} rad/cell, theta_NL = {:.2} rad",
        pump.alpha_p, pump.theta_nl
    );

    for (lo, hi) in phase_match_frequencies(&op, &pump, &p, conv)? {
        println!(
            "kappa roots: {:.3} GHz and {:.3} GHz",
            rad_to_hz(lo) / 1e9,
            rad_to_hz(hi) / 1e9
        );
    }

    let grid = FrequencyGrid::linspace_hz(2e9, 10e9, 33)?;
    let profile = analytic_gain(&grid, &op, &pump, &p, conv)?;
    let (w_pk, g_pk) = profile.peak();
    println!("peak {g_pk:.2} dB at {:.2} GHz", rad_to_hz(w_pk) / 1e9);

    let opts = CmeOptions::default();
    println!("{:>8} {:>10} {:>10}", "GHz", "closed", "ode");
    for (w, g) in grid.omegas().iter().zip(&profile.gain_db).step_by(4) {
        let sol = integrate_cme(
            *w,
            &op,
            &pump,
            &p,
            conv,
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            &opts,
        )?;
        println!(
            "{:>8.2} {:>10.3} {:>10.3}",
            rad_to_hz(*w) / 1e9,
            g,
            10.0 * sol.signal_gain().log10()
        );
    }
    Ok(())
}
