//! Flux tuning of the unit cell: Kerr sign, Kerr-free bias and impedance.

use jtwpa::cell::{characteristic_impedance, kerr_coefficient, kerr_free_flux, linear_inductance};
use jtwpa::units::hz_to_rad;
use jtwpa::{FluxBias, Preset};

fn main() -> jtwpa::Result<()> {
    let p = Preset::JtwpaA.fitted();
    println!(
        "JTWPA-A: I0 = {:.3} uA, r = {}, L0 = {:.1} pH",
        p.i0 * 1e6,
        p.r,
        p.l0() * 1e12
    );
    println!("Kerr-free flux: {:.4} Phi0", kerr_free_flux(&p)?);
    println!(
        "{:>6} {:>12} {:>12} {:>12}",
        "flux", "L_lin (pH)", "gamma sign", "Z0@6GHz"
    );
    for i in 0..=10 {
        let f = FluxBias(0.05 * i as f64);
        let l = linear_inductance(f, &p)?;
        let z = characteristic_impedance(hz_to_rad(6e9), f, &p)?;
        let sign = if kerr_coefficient(f, &p) > 0.0 {
            "+"
        } else {
            "-"
        };
        println!(
            "{:>6.3} {:>12.2} {:>12} {:>12.2}",
            f.value(),
            l * 1e12,
            sign,
            z
        );
    }
    Ok(())
}
