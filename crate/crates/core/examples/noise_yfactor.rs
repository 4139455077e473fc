//! Y-factor calibration of the HEMT chain and the JTWPA added noise from
//! SNR improvement, using the bundled synthetic sweep.

use std::path::PathBuf;

use jtwpa::fitkit::{load_noise_csv, snr_noise, yfactor_fit};
use jtwpa::units::rad_to_hz;

fn main() -> jtwpa::Result<()> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data");
    let sweep = load_noise_csv(&data.join("noise_yfactor.csv"))?;
    let fit = yfactor_fit(&sweep, 1e6)?;
    for f in &fit.failures {
        println!("fit failed at {} Hz: {}", f.freq_hz, f.message);
    }
    let gains = jtwpa::csvio::read_columns(
        &data.join("noise_gains.csv"),
        &["freq_hz", "g_noise", "g_jtwpa"],
        &[],
    )?;
    let g_noise: Vec<f64> = gains.iter().map(|r| r[1]).collect();
    let g_jtwpa: Vec<f64> = gains.iter().map(|r| r[2]).collect();
    let res = snr_noise(&g_noise, &g_jtwpa, &fit.model)?;
    println!(
        "{:>8} {:>9} {:>9} {:>9} {:>9}",
        "GHz", "T_HEMT", "T_sys", "N_sys", "N_jtwpa"
    );
    for i in 0..res.omegas.len() {
        println!(
            "{:>8.2} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
            rad_to_hz(res.omegas[i]) / 1e9,
            fit.model.t_hemt[i],
            res.t_system[i],
            res.n_system[i],
            res.n_jtwpa[i]
        );
    }
    Ok(())
}
