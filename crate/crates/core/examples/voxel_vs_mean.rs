//! Extract the breathing signal with the voxel feature and with the plain
//! ROI mean across a +2 C ambient step, and compare their spectra.

use thermoresp::frames::{generate_synthetic, SynthScenario};
use thermoresp::quantize::QuantMode;
use thermoresp::rate::{estimate_rates, psd, spectrum_peak, RateParams};
use thermoresp::respsig::{extract_signal, ExtractParams, SignalMethod};
use thermoresp::track::{track_sequence, TrackParams};

fn main() -> thermoresp::Result<()> {
    let scene = SynthScenario::preset("ambient-step")?;
    let seq = generate_synthetic(&scene, 7)?;
    let track = track_sequence(&seq.frames, seq.truth.boxes[0], &TrackParams::default(), &QuantMode::optimal())?;
    let params = RateParams::default();

    for method in [SignalMethod::Voxel, SignalMethod::Mean] {
        let ex = ExtractParams { method, ..Default::default() };
        let sig = extract_signal(&seq.frames, &track, &ex, scene.fps)?;
        let split = (60.0 * scene.fps) as usize;
        let before = sig.samples[..split].iter().sum::<f64>() / split as f64;
        let after = sig.samples[split..].iter().sum::<f64>() / (sig.len() - split) as f64;
        let whole = psd(&sig.samples, sig.fs);
        let peak = spectrum_peak(&whole, &params).unwrap_or(f64::NAN);
        let rates = estimate_rates(&sig, &params)?;
        let bpm: Vec<String> = rates
            .entries
            .iter()
            .map(|e| if e.valid { format!("{:.1}", e.bpm) } else { "-".into() })
            .collect();
        println!("{method}: mean level {before:.2} -> {after:.2}, whole-signal peak {:.2} BPM", 60.0 * peak);
        println!("  windows: {}", bpm.join(" "));
    }
    println!("truth: {:.1} BPM", seq.truth.rate_at(0.0));
    Ok(())
}
