//! Track the nostril ROI through a synthetic scene and score it against the
//! ground-truth boxes.
//!
//! cargo run --release --example track_nostrils -- hdr

use std::time::Instant;

use thermoresp::frames::{generate_synthetic, SynthScenario};
use thermoresp::quantize::QuantMode;
use thermoresp::track::{track_sequence, TrackParams, TrackStatus};

fn main() -> thermoresp::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "occlusion".into());
    let seq = generate_synthetic(&SynthScenario::preset(&name)?, 42)?;
    let start = seq.truth.boxes[0];

    for (label, quant) in [("optimal", QuantMode::optimal()), ("static", QuantMode::static_baseline())] {
        let t0 = Instant::now();
        let track = track_sequence(&seq.frames, start, &TrackParams::default(), &quant)?;
        let ious: Vec<f64> = track
            .entries
            .iter()
            .zip(&seq.truth.boxes)
            .map(|(e, g)| e.roi.iou(g))
            .collect();
        let good = ious.iter().filter(|&&v| v >= 0.5).count();
        println!(
            "{name} / {label}: {:.1} s, tracked {} relocalized {} lost {}, IoU >= 0.5 on {good}/{}",
            t0.elapsed().as_secs_f64(),
            track.count(TrackStatus::Tracked),
            track.count(TrackStatus::Relocalized),
            track.count(TrackStatus::Lost),
            track.len()
        );
        // status changes, one line each
        let mut last = None;
        for (i, e) in track.entries.iter().enumerate() {
            if last != Some(e.status) {
                println!("  frame {i:>4}: {:<11} iou {:.2} points {}", e.status, ious[i], e.n_points);
                last = Some(e.status);
            }
        }
    }
    Ok(())
}
