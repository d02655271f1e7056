//! Render a named synthetic scene and export it as a container plus oracle files.
//!
//! cargo run --release --example synth_scene -- occlusion /tmp/scene

use std::path::PathBuf;

use thermoresp::frames::{generate_synthetic, SynthScenario, PRESETS};
use thermoresp::pipeline::export_synthetic;

fn main() -> thermoresp::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "static".into());
    let dir: PathBuf = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("thermoresp-{name}")));

    let scene = SynthScenario::preset(&name).map_err(|e| {
        eprintln!("known presets: {}", PRESETS.join(", "));
        e
    })?;
    let seq = generate_synthetic(&scene, 0)?;
    let written = export_synthetic(&seq, &dir)?;

    let hidden = seq.truth.occluded.iter().filter(|&&o| o).count();
    println!(
        "{name}: {} frames of {}x{} at {} fps, {hidden} occluded",
        seq.frames.len(),
        scene.width,
        scene.height,
        scene.fps
    );
    let (lo, hi) = seq
        .frames
        .iter()
        .flat_map(|f| f.temps().iter().copied())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), t| (a.min(t), b.max(t)));
    println!("temperature span {lo:.1} .. {hi:.1} C");
    for p in written {
        println!("  {}", p.display());
    }
    Ok(())
}
