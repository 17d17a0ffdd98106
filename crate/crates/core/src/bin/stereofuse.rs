use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stereofuse::config::{Overrides, PipelineConfig};
use stereofuse::pipeline;

/// Surface reconstruction from stereo-rendered views.
///
/// Settings come from a TOML config; precedence is flags > environment >
/// config file > built-in defaults.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a left/right pair per camera plus rig metadata.
    RenderStereo(RunArgs),
    /// Census/SGM matching, cross-check and depth gating for every pair.
    Match(RunArgs),
    /// Track the object mask through the sequence.
    Segment(RunArgs),
    /// Fuse depth maps into a TSDF volume and extract a mesh.
    Fuse(RunArgs),
    /// Score the fused mesh against the reference surface.
    Eval(RunArgs),
    /// All stages in order, skipping stages whose outputs are up to date.
    Pipeline(RunArgs),
    /// Convert a COLMAP text model (cameras.txt, images.txt) to a camera file.
    ConvertColmap {
        model_dir: PathBuf,
        output: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config (TOML).
    config: PathBuf,
    /// Override a config value, e.g. `--set fusion.voxel_size=0.02`; `auto`
    /// clears a value so it is derived from the data.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads, 0 for all cores; overrides STEREOFUSE_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (relative to the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> stereofuse::Result<()> {
    let (args, cmd): (RunArgs, fn(&PipelineConfig) -> stereofuse::Result<pipeline::Manifest>) = match cli.command {
        Command::ConvertColmap { model_dir, output } => {
            let n = pipeline::cmd_convert_colmap(&model_dir, &output)?;
            println!("wrote {n} frames to {}", output.display());
            return Ok(());
        }
        Command::RenderStereo(a) => (a, pipeline::cmd_render_stereo),
        Command::Match(a) => (a, pipeline::cmd_match),
        Command::Segment(a) => (a, pipeline::cmd_segment),
        Command::Fuse(a) => (a, pipeline::cmd_fuse),
        Command::Eval(a) => (a, pipeline::cmd_eval),
        Command::Pipeline(a) => (a, pipeline::cmd_pipeline),
    };
    let overrides = Overrides { set: args.set, threads: args.threads, seed: args.seed, output: args.out };
    let cfg = PipelineConfig::load(&args.config, &overrides)?;
    let manifest = cmd(&cfg)?;
    for (name, rec) in &manifest.stages {
        let skipped = if manifest.skipped.contains(name) { " (up to date)" } else { "" };
        println!("{name}: {:.2}s, {} outputs{skipped}", rec.seconds, rec.outputs.len());
        for (k, v) in &rec.warnings {
            println!("  warning {k}: {v}");
        }
    }
    let report = pipeline::Workspace::new(&cfg.run.output).report();
    if manifest.stages.contains_key("eval") && report.is_file() {
        let r = stereofuse::evaluation::read_report(&report)?;
        println!("precision {:.4} recall {:.4} f1 {:.4} chamfer {:.6}", r.precision, r.recall, r.f1, r.chamfer);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
