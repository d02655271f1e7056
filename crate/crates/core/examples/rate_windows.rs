//! Windowed respiration-rate estimates and rSQI on a signal whose rate
//! sweeps from 12 to 24 BPM, with a noisy stretch in the middle.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use thermoresp::rate::{analyze, RateParams};
use thermoresp::respsig::{RespirationSignal, SignalMethod};

fn main() -> thermoresp::Result<()> {
    let fs = 9.0;
    let dur = 120.0;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut phase = 0.0;
    let samples: Vec<f64> = (0..(dur * fs) as usize)
        .map(|i| {
            let t = i as f64 / fs;
            let bpm = 12.0 + 12.0 * t / dur;
            phase += 2.0 * PI * bpm / 60.0 / fs;
            let dirty = if (50.0..70.0).contains(&t) { 1.5 } else { 0.1 };
            phase.sin() + dirty * noise.sample(&mut rng)
        })
        .collect();
    let sig = RespirationSignal::new(samples, fs, SignalMethod::Voxel, 0.0)?;

    let params = RateParams::default();
    let (rates, spec) = analyze(&sig, &params)?;
    println!("filter: order {} elliptic, {}..{} Hz, window {} s, hop {} s", params.filter_order, params.f_lo, params.f_hi, params.win_len, params.hop());
    println!("t_center   true    est   rSQI");
    for e in &rates.entries {
        let truth = 12.0 + 12.0 * e.t_center / dur;
        println!("{:>7.1}  {:>5.1}  {:>5.1}  {:.3}{}", e.t_center, truth, e.bpm, e.rsqi, if e.valid { "" } else { "  invalid" });
    }
    println!("spectrogram: {} windows x {} bins of {:.4} Hz", spec.times.len(), spec.power.first().map_or(0, |r| r.len()), spec.df);
    Ok(())
}
