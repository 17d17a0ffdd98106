//! Runs every stage on the bundled sphere scene and prints the metrics.
//!
//! ```text
//! cargo run --release --example full_pipeline -- run_dir
//! ```

use std::path::PathBuf;

use stereofuse::config::{Overrides, PipelineConfig};
use stereofuse::evaluation::read_report;
use stereofuse::pipeline::{cmd_pipeline, Workspace};

fn main() -> stereofuse::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "sphere_run".into());
    let config = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets/sphere/pipeline.toml");
    let cfg = PipelineConfig::load(&config, &Overrides { output: Some(out), ..Default::default() })?;
    let manifest = cmd_pipeline(&cfg)?;
    for (stage, rec) in &manifest.stages {
        println!("{stage}: {:.2}s {:?}", rec.seconds, rec.warnings);
    }
    let r = read_report(&Workspace::new(&cfg.run.output).report())?;
    println!("F1 {:.4} at tau {:.4}, Chamfer {:.5}", r.f1, r.tau, r.chamfer);
    Ok(())
}
