//! Guided breathing at 10, 15 and 30 BPM: align the estimate with the
//! reference waveform, pair the windowed rates and report Bland-Altman
//! statistics. Writes the plot to bland_altman.svg in the temp directory.

use thermoresp::eval::{bland_altman_svg, evaluate, DEFAULT_RSQI_CUTOFF};
use thermoresp::frames::{generate_synthetic, SynthScenario, REFERENCE_FS};
use thermoresp::quantize::QuantMode;
use thermoresp::rate::RateParams;
use thermoresp::respsig::{extract_signal, reference_from_truth, ExtractParams};
use thermoresp::track::{track_sequence, TrackParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = SynthScenario::preset("guided")?;
    let seq = generate_synthetic(&scene, 6)?;
    let track = track_sequence(&seq.frames, seq.truth.boxes[0], &TrackParams::default(), &QuantMode::optimal())?;
    let est = extract_signal(&seq.frames, &track, &ExtractParams::default(), scene.fps)?;
    let reference = reference_from_truth(&seq.truth, REFERENCE_FS)?;

    for cutoff in [0.0, DEFAULT_RSQI_CUTOFF] {
        let ev = evaluate(&reference, &est, &RateParams::default(), cutoff)?;
        let r = &ev.report;
        println!(
            "cutoff {cutoff}: lag {:+.3} s (r {:.3}), {} windows, bias {:+.3}, LoA {:+.3}..{:+.3}, RMSE {:.3}, pearson {}",
            ev.aligned.lag as f64 / REFERENCE_FS,
            ev.aligned.correlation,
            r.n_windows,
            r.bias,
            r.loa_lo,
            r.loa_hi,
            r.rmse,
            r.pearson_r.map_or("n/a".into(), |v| format!("{v:.4}"))
        );
        if cutoff == 0.0 {
            for p in &ev.pairs {
                println!("  {:>5.1} s  ref {:>5.2}  est {:>5.2}  guide {:>4.1}", p.t_center, p.reference, p.estimate, seq.truth.rate_at(p.t_center));
            }
            let path = std::env::temp_dir().join("bland_altman.svg");
            std::fs::write(&path, bland_altman_svg(&ev.pairs, r))?;
            println!("plot: {}", path.display());
        }
    }
    Ok(())
}
