//! Converts a COLMAP text model into the camera file format.
//!
//! ```text
//! cargo run --example colmap_convert -- sparse/0 cameras.txt
//! ```

fn main() -> stereofuse::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [model, out] = args.as_slice() else {
        eprintln!("usage: colmap_convert <model_dir> <cameras.txt>");
        std::process::exit(2);
    };
    let n = stereofuse::pipeline::cmd_convert_colmap(model.as_ref(), out.as_ref())?;
    println!("{n} frames");
    Ok(())
}
