//! Runs the full experiment from a TOML configuration and prints the report.
//!
//! cargo run --release --example full_pipeline -- configs/desk.toml

use std::path::PathBuf;

use morphdet::pipeline::{load_report, run_experiment, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let path: PathBuf = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/desk.toml").into());
    let config = RunConfig::load(&path)?;
    let manifest = run_experiment(&config, None)?;
    for s in &manifest.stages {
        println!("{:<10} {:>8.1}s cache_hit={}", s.name, s.seconds, s.cache_hit);
    }
    let report = load_report(&config.output())?;
    for r in &report.rows {
        println!("{:<22} D-EER {:.4}", r.method, r.d_eer);
    }
    if let Some(c) = &report.cam {
        println!("CAM genuine {:.4} imposter {:.4}", c.mean_genuine, c.mean_imposter);
    }
    for f in &report.flags {
        println!("flag: {f}");
    }
    Ok(())
}
