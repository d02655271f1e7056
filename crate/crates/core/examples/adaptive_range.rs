//! Per-frame adaptive temperature range while the ambient cools from 30 to
//! 10 C, next to the fixed 28..38 C window.

use thermoresp::frames::{generate_synthetic, SynthScenario};
use thermoresp::quantize::{quantize, select_range, QuantMode};

fn main() -> thermoresp::Result<()> {
    let scene = SynthScenario {
        fps: 1.0 / 30.0,
        ..SynthScenario::preset("outdoor")?
    };
    let seq = generate_synthetic(&scene, 1)?;
    let fixed = QuantMode::static_baseline();

    println!("   t   trim lo..hi      T    iters  range            face  nostril  bg | fixed: face bg");
    for (frame, roi) in seq.frames.iter().zip(&seq.truth.boxes) {
        let sel = select_range(frame);
        let q = quantize(frame, &sel.range);
        let qf = fixed.apply(frame);
        let (nx, ny) = roi.center();
        let face = (nx as usize, (ny - 25.0) as usize);
        let nostril = (nx as usize, ny as usize);
        println!(
            "{:>5.0}  {:5.2}..{:5.2}  {:6.2}  {:>4}   {:5.2}..{:5.2}   {:>4}  {:>6}  {:>3} |  {:>4} {:>3}",
            frame.timestamp(),
            sel.trimmed.0,
            sel.trimmed.1,
            sel.threshold.threshold,
            sel.threshold.iterations,
            sel.range.t_low,
            sel.range.t_high,
            q.at(face.0, face.1),
            q.at(nostril.0, nostril.1),
            q.at(3, 3),
            qf.at(face.0, face.1),
            qf.at(3, 3),
        );
    }
    Ok(())
}
