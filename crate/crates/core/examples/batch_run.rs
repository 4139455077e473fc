//! Runs a gain recipe from an inline config, as the `jtwpa gain` command
//! does, and prints the summary.

use jtwpa::config::RunConfig;
use jtwpa::tasks::{run, Command, RunOptions};

const CONFIG: &str = "
[device]
preset = jtwpa-a

[operating_point]
theta_nl_rad = 3.1

[gain]
pump_freqs_ghz = 5, 6, 7, 8, 9

[grid]
start_ghz = 1
stop_ghz = 11
points = 401
";

fn main() -> jtwpa::Result<()> {
    let out = std::env::temp_dir().join("jtwpa_batch_example");
    let cfg = RunConfig::parse(CONFIG, std::env::current_dir()?)?;
    let outcome = run(
        Command::Gain,
        &cfg,
        &RunOptions {
            out_dir: out.clone(),
            ..RunOptions::default()
        },
    )?;
    println!(
        "{}",
        serde_json::to_string_pretty(&outcome.summary).unwrap_or_default()
    );
    println!("{} files in {}", outcome.files.len(), out.display());
    Ok(())
}
