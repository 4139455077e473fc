//! Circuit-parameter extraction from the bundled JTWPA-A VNA traces:
//! thru calibration, phase unwrapping and a dispersion fit.

use std::path::PathBuf;

use jtwpa::fitkit::{calibrate_thru, extract_kl, fit_dispersion, FluxTrace, KnownParams};
use jtwpa::{ComplexTrace, FluxBias, Preset};

fn main() -> jtwpa::Result<()> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data");
    let thru = ComplexTrace::load_csv(&data.join("a_thru.csv"))?;
    let mut traces = Vec::new();
    for flux in [0.0, 0.5] {
        let raw = ComplexTrace::load_csv(&data.join(format!("a_raw_flux{flux:.3}.csv")))?;
        traces.push(FluxTrace {
            flux: FluxBias(flux),
            kl: extract_kl(&calibrate_thru(&raw, &thru)?)?,
        });
    }

    let truth = Preset::JtwpaA.fitted();
    let mut init = Preset::JtwpaA.design();
    init.cgnd = truth.cgnd;
    for known in [KnownParams { r: Some(truth.r) }, KnownParams { r: None }] {
        let fit = fit_dispersion(&traces, Preset::JtwpaA.n_cells(), &known, &init)?;
        println!(
            "fitted {:?} in {} iterations, rms residual {:.2e} rad",
            fit.names, fit.iterations, fit.rms_residual
        );
        println!(
            "  I0 = {:.4} uA (truth {:.4})",
            fit.params.i0 * 1e6,
            truth.i0 * 1e6
        );
        println!(
            "  C0 = {:.2} fF (truth {:.2})",
            fit.params.c0 * 1e15,
            truth.c0 * 1e15
        );
        println!("  r  = {:.3} (truth {:.3})", fit.params.r, truth.r);
    }
    Ok(())
}
