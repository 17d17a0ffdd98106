//! Scores a mesh against a reference PLY (points or mesh).
//!
//! ```text
//! cargo run --release --example evaluate_reconstruction -- mesh.ply reference.ply 0.02
//! ```

use stereofuse::evaluation::{evaluate_mesh, read_ground_truth, EvalSettings};
use stereofuse::fusion::read_mesh_ply;

fn main() -> stereofuse::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [pred, gt, rest @ ..] = args.as_slice() else {
        eprintln!("usage: evaluate_reconstruction <mesh.ply> <reference.ply> [tau]");
        std::process::exit(2);
    };
    let mut settings = EvalSettings::default();
    if let Some(tau) = rest.first() {
        settings.tau = tau.parse().expect("tau is a number");
    }
    let mesh = read_mesh_ply(pred.as_ref())?;
    let reference = read_ground_truth(gt.as_ref(), settings.samples, settings.seed)?;
    let report = evaluate_mesh(&mesh, &reference, &settings)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}
