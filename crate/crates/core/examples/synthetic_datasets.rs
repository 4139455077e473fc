//! Regenerates the bundled synthetic datasets under `data/`.
//!
//! - `a_raw_flux*.csv` / `a_thru.csv`: VNA traces of a JTWPA-A line behind
//!   a lossy, dispersive cable, with 0.5% complex noise on the line response.
//! - `noise_yfactor.csv`: output power versus source temperature, 150 mK to
//!   4 K, with an effective 2.5 K HEMT and 0.2% power noise.
//! - `noise_gains.csv`: SNR-improvement and JTWPA gains on the same grid.
//!
//! Seeds are fixed, so the files are reproducible byte for byte.

use std::fs::File;
use std::path::PathBuf;

use jtwpa::dispersion::dispersion_curve;
use jtwpa::fitkit::{apply_cable, quantum_source_term, write_noise_csv, NoisePoint};
use jtwpa::units::hz_to_rad;
use jtwpa::{ComplexTrace, FluxBias, FrequencyGrid, Preset};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const K_B: f64 = 1.380649e-23;

fn main() -> jtwpa::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data");
    std::fs::create_dir_all(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    let p = Preset::JtwpaA.fitted();
    let n = Preset::JtwpaA.n_cells() as f64;
    let grid = FrequencyGrid::linspace_hz(0.1e9, 12e9, 600)?;
    let cable: Vec<Complex64> = grid
        .omegas()
        .iter()
        .map(|w| Complex64::from_polar(0.5 * (-w * 2e-12).exp(), -w * 6.5e-9 + 0.3))
        .collect();
    ComplexTrace::new(grid.clone(), cable.clone())?.save_csv(&dir.join("a_thru.csv"))?;
    let trace_noise = Normal::new(0.0, 0.005).unwrap();
    for flux in [0.0, 0.5] {
        let curve = dispersion_curve(&grid, FluxBias(flux), &p)?;
        let device: Vec<Complex64> = curve
            .k
            .iter()
            .map(|k| {
                let jitter =
                    Complex64::new(trace_noise.sample(&mut rng), trace_noise.sample(&mut rng));
                Complex64::from_polar(0.9, -k * n) * (1.0 + jitter)
            })
            .collect();
        let raw = apply_cable(&ComplexTrace::new(grid.clone(), device)?, &cable)?;
        raw.save_csv(&dir.join(format!("a_raw_flux{flux:.3}.csv")))?;
    }

    let power_noise = Normal::new(0.0, 0.002).unwrap();
    let (t_hemt, gb) = (2.5, 1e13);
    let freqs: Vec<f64> = (0..9).map(|i| 4e9 + 0.5e9 * i as f64).collect();
    let mut points = Vec::new();
    for &f in &freqs {
        let w = hz_to_rad(f);
        for i in 0..25 {
            let t = 0.15 + (4.0 - 0.15) * i as f64 / 24.0;
            let clean = (quantum_source_term(w, t) + K_B * t_hemt) * gb;
            points.push(NoisePoint {
                omega: w,
                temp_k: t,
                p_watts: clean * (1.0 + power_noise.sample(&mut rng)),
            });
        }
    }
    write_noise_csv(&points, File::create(dir.join("noise_yfactor.csv"))?)?;

    let mut w = csv::Writer::from_path(dir.join("noise_gains.csv"))
        .map_err(|e| jtwpa::Error::Io(e.into()))?;
    w.write_record(["freq_hz", "g_noise", "g_jtwpa"])
        .map_err(|e| jtwpa::Error::Io(e.into()))?;
    for (i, f) in freqs.iter().enumerate() {
        let g_j = 10f64.powf((17.0 + 1.5 * (i as f64 * 0.8).sin()) / 10.0);
        let g_n = 10f64.powf((9.5 + 0.8 * (i as f64 * 0.8).sin()) / 10.0);
        w.write_record([format!("{f:.1}"), format!("{g_n:.6}"), format!("{g_j:.6}")])
            .map_err(|e| jtwpa::Error::Io(e.into()))?;
    }
    w.flush()?;
    println!("wrote datasets to {}", dir.display());
    Ok(())
}
