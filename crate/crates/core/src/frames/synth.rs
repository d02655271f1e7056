//! Synthetic thermal scenes used as test oracles: an ambient background with a
//! linear temperature ramp, an elliptical face blob, and a nostril disk whose
//! temperature deficit oscillates with the breathing waveform.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{SequenceMeta, Source, ThermalFrame};
use crate::error::{Error, Result};
use crate::track::Roi;

/// Lowest and highest breathing rates the scenes may use (0.1-0.85 Hz band).
pub const MIN_BPM: f64 = 6.0;
pub const MAX_BPM: f64 = 51.0;

const OUTLIER_LOW: f64 = -30.0;
const OUTLIER_HIGH: f64 = 120.0;

/// Nostril center position at time `t` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keyframe {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// Piecewise-linear nostril trajectory; held constant outside the keyframe span.
#[derive(Debug, Clone, PartialEq)]
pub struct NostrilPath(pub Vec<Keyframe>);

impl NostrilPath {
    pub fn fixed(x: f64, y: f64) -> Self {
        Self(vec![Keyframe { t: 0.0, x, y }])
    }

    pub fn at(&self, t: f64) -> (f64, f64) {
        let keys = &self.0;
        let first = keys[0];
        if t <= first.t || keys.len() == 1 {
            return (first.x, first.y);
        }
        for pair in keys.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if t <= b.t {
                let span = b.t - a.t;
                let u = if span > 0.0 { (t - a.t) / span } else { 1.0 };
                return (a.x + u * (b.x - a.x), a.y + u * (b.y - a.y));
            }
        }
        let last = keys[keys.len() - 1];
        (last.x, last.y)
    }
}

/// Breathing rate schedule in breaths per minute.
#[derive(Debug, Clone, PartialEq)]
pub enum BreathPattern {
    Constant(f64),
    /// `(duration_s, bpm)` segments; the last one extends to the end.
    Segments(Vec<(f64, f64)>),
}

impl BreathPattern {
    pub fn rate_at(&self, t: f64) -> f64 {
        match self {
            BreathPattern::Constant(bpm) => *bpm,
            BreathPattern::Segments(segs) => {
                let mut start = 0.0;
                for &(dur, bpm) in segs {
                    if t < start + dur {
                        return bpm;
                    }
                    start += dur;
                }
                segs.last().map(|s| s.1).unwrap_or(0.0)
            }
        }
    }

    /// Accumulated breathing phase in radians, continuous across rate changes.
    pub fn phase_at(&self, t: f64) -> f64 {
        match self {
            BreathPattern::Constant(bpm) => 2.0 * PI * bpm / 60.0 * t,
            BreathPattern::Segments(segs) => {
                let mut cycles = 0.0;
                let mut start = 0.0;
                for (i, &(dur, bpm)) in segs.iter().enumerate() {
                    let last = i + 1 == segs.len();
                    let end = if last { f64::INFINITY } else { start + dur };
                    if t < end {
                        cycles += bpm / 60.0 * (t - start);
                        return 2.0 * PI * cycles;
                    }
                    cycles += bpm / 60.0 * dur;
                    start = end;
                }
                2.0 * PI * cycles
            }
        }
    }

    fn rates(&self) -> Vec<f64> {
        match self {
            BreathPattern::Constant(bpm) => vec![*bpm],
            BreathPattern::Segments(segs) => segs.iter().map(|s| s.1).collect(),
        }
    }
}

/// Global temperature offset applied to every pixel from time `t` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbientStep {
    pub t: f64,
    pub delta: f64,
}

/// Scene description for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScenario {
    pub width: usize,
    pub height: usize,
    /// Seconds.
    pub duration: f64,
    pub fps: f64,
    pub ambient_start: f64,
    pub ambient_end: f64,
    pub face_temp: f64,
    pub path: NostrilPath,
    pub nostril_radius: f64,
    /// Mean temperature deficit of the nostril below the face, deg C.
    pub nostril_depth: f64,
    /// Semi-axes of the face ellipse, px.
    pub face_axes: (f64, f64),
    /// Face center relative to the nostril center, px.
    pub face_offset: (f64, f64),
    pub breath: BreathPattern,
    /// Peak-to-peak nostril temperature swing, deg C.
    pub breath_amplitude: f64,
    pub noise_sigma: f64,
    /// Probability per pixel per frame of an extreme value in [-30, 120] deg C.
    pub outlier_rate: f64,
    pub ambient_step: Option<AmbientStep>,
    /// `[start, end)` time intervals during which the nostril disk is absent.
    pub occlusions: Vec<(f64, f64)>,
}

impl Default for SynthScenario {
    fn default() -> Self {
        Self {
            width: super::SENSOR_WIDTH,
            height: super::SENSOR_HEIGHT,
            duration: 120.0,
            fps: 9.0,
            ambient_start: 24.0,
            ambient_end: 24.0,
            face_temp: 34.0,
            path: NostrilPath::fixed(80.0, 75.0),
            nostril_radius: 5.0,
            nostril_depth: 1.0,
            face_axes: (50.0, 62.0),
            face_offset: (0.0, -20.0),
            breath: BreathPattern::Constant(15.0),
            breath_amplitude: 0.6,
            noise_sigma: 0.05,
            outlier_rate: 0.0,
            ambient_step: None,
            occlusions: Vec::new(),
        }
    }
}

/// Names accepted by [`SynthScenario::preset`].
pub const PRESETS: &[&str] = &["static", "motion", "hdr", "occlusion", "guided", "ambient-step", "outdoor"];

fn motion_path() -> NostrilPath {
    let k = |t: f64, x: f64, y: f64| Keyframe { t, x, y };
    NostrilPath(vec![
        k(0.0, 80.0, 75.0),
        k(10.0, 80.0, 75.0),
        k(12.0, 50.0, 70.0),
        k(20.0, 50.0, 70.0),
        k(22.0, 104.0, 70.0),
        k(30.0, 104.0, 70.0),
        k(32.0, 104.0, 88.0),
        k(45.0, 90.0, 60.0),
        k(47.0, 60.0, 80.0),
        k(60.0, 60.0, 80.0),
        k(61.0, 80.0, 80.0),
        k(75.0, 85.0, 70.0),
        k(77.0, 40.0, 65.0),
        k(90.0, 40.0, 65.0),
        k(92.0, 94.0, 65.0),
        k(105.0, 80.0, 75.0),
    ])
}

impl SynthScenario {
    /// Named test scenes.
    ///
    /// * `static` - fixed head, constant 15 BPM, 120 s
    /// * `motion` - head translations up to 50 px
    /// * `hdr` - motion plus a 30 to 10 deg C ambient ramp and 1% outliers
    /// * `occlusion` - nostril hidden for 10 frames while the head moves
    /// * `guided` - 10, 15 and 30 BPM plateaus of 30 s
    /// * `ambient-step` - +2 deg C global step at 60 s
    /// * `outdoor` - 6 min with ambient falling from 30 to 10 deg C
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        let s = match name {
            "static" => base,
            "motion" => Self { path: motion_path(), ..base },
            "hdr" => Self {
                path: motion_path(),
                ambient_start: 30.0,
                ambient_end: 10.0,
                outlier_rate: 0.01,
                ..base
            },
            "occlusion" => {
                let k = |t: f64, x: f64, y: f64| Keyframe { t, x, y };
                let start = 8.0;
                let end = start + 10.0 / base.fps;
                Self {
                    duration: 30.0,
                    path: NostrilPath(vec![k(0.0, 80.0, 75.0), k(start, 80.0, 75.0), k(end, 92.0, 69.0)]),
                    occlusions: vec![(start, end)],
                    ..base
                }
            }
            "guided" => Self {
                duration: 90.0,
                breath: BreathPattern::Segments(vec![(30.0, 10.0), (30.0, 15.0), (30.0, 30.0)]),
                ..base
            },
            "ambient-step" => Self {
                ambient_step: Some(AmbientStep { t: 60.0, delta: 2.0 }),
                ..base
            },
            "outdoor" => Self {
                duration: 360.0,
                ambient_start: 30.0,
                ambient_end: 10.0,
                ..base
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown synthetic preset '{other}' (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(s)
    }
}

impl SynthScenario {
    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }

    pub fn frame_time(&self, index: usize) -> f64 {
        index as f64 / self.fps
    }

    /// Side of the ground-truth nostril box.
    pub fn roi_side(&self) -> f64 {
        4.0 * self.nostril_radius
    }

    pub fn truth_box(&self, t: f64) -> Roi {
        let (cx, cy) = self.path.at(t);
        let side = self.roi_side();
        Roi::new(cx - side / 2.0, cy - side / 2.0, side)
    }

    pub fn is_occluded(&self, t: f64) -> bool {
        self.occlusions.iter().any(|&(a, b)| t >= a && t < b)
    }

    /// Breathing waveform: positive while inhaling (cool nostril).
    pub fn waveform_at(&self, t: f64) -> f64 {
        0.5 * self.breath_amplitude * self.breath.phase_at(t).sin()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(msg));
        if self.width == 0 || self.height == 0 {
            return bad("scene size must be positive".into());
        }
        if !(self.fps > 0.0) || !(self.duration > 0.0) || self.frame_count() == 0 {
            return bad("duration and fps must give at least one frame".into());
        }
        for bpm in self.breath.rates() {
            if !(MIN_BPM..=MAX_BPM).contains(&bpm) {
                return bad(format!("breath rate {bpm} BPM outside [{MIN_BPM}, {MAX_BPM}]"));
            }
        }
        if let BreathPattern::Segments(segs) = &self.breath {
            if segs.is_empty() || segs.iter().any(|s| !(s.0 > 0.0)) {
                return bad("breath segments need positive durations".into());
            }
        }
        if !(self.breath_amplitude >= 0.0) {
            return bad("breath amplitude must be non-negative".into());
        }
        if self.nostril_depth < 0.5 * self.breath_amplitude {
            return bad("nostril depth must be at least half the breath amplitude".into());
        }
        if !(self.noise_sigma >= 0.0) || !(0.0..=1.0).contains(&self.outlier_rate) {
            return bad("noise sigma must be >= 0 and outlier rate in [0, 1]".into());
        }
        if !(self.nostril_radius > 0.0) || !(self.face_axes.0 > 0.0 && self.face_axes.1 > 0.0) {
            return bad("nostril radius and face axes must be positive".into());
        }
        if self.path.0.is_empty() || self.path.0.windows(2).any(|w| w[1].t < w[0].t) {
            return bad("nostril path needs time-ordered keyframes".into());
        }
        for i in 0..self.frame_count() {
            let b = self.truth_box(self.frame_time(i));
            if b.x < 0.0
                || b.y < 0.0
                || b.x + b.size > self.width as f64
                || b.y + b.size > self.height as f64
            {
                return bad(format!("ground-truth box leaves the frame at frame {i}"));
            }
        }
        Ok(())
    }

    /// Noise-free temperature at pixel `(x, y)` and time `t`.
    fn clean_temperature(&self, x: f64, y: f64, t: f64, nostril: (f64, f64)) -> f64 {
        let ambient =
            self.ambient_start + (self.ambient_end - self.ambient_start) * (t / self.duration);
        let (fx, fy) = (nostril.0 + self.face_offset.0, nostril.1 + self.face_offset.1);
        let (a, b) = self.face_axes;
        let rho = (((x - fx) / a).powi(2) + ((y - fy) / b).powi(2)).sqrt();
        // signed distance to the ellipse edge, approximately in pixels
        let edge = (1.0 - rho) * a.min(b);
        let face_cov = smooth_cover(edge, 1.5);
        let mut temp = ambient + face_cov * (self.face_temp - ambient);
        if !self.is_occluded(t) {
            let deficit = self.nostril_depth + self.waveform_at(t);
            let d = ((x - nostril.0).powi(2) + (y - nostril.1).powi(2)).sqrt();
            temp -= face_cov * smooth_cover(self.nostril_radius - d, 1.0) * deficit;
        }
        if let Some(step) = self.ambient_step {
            if t >= step.t {
                temp += step.delta;
            }
        }
        temp
    }
}

/// Coverage in [0, 1] for a signed distance (positive inside) with a linear
/// ramp of half-width `soft`.
fn smooth_cover(signed_dist: f64, soft: f64) -> f64 {
    let u = ((signed_dist + soft) / (2.0 * soft)).clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Per-frame oracle data that accompanies a synthetic sequence.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub scenario: SynthScenario,
    pub boxes: Vec<Roi>,
    /// Breathing waveform sampled at the frame timestamps.
    pub waveform: Vec<f64>,
    pub occluded: Vec<bool>,
}

impl GroundTruth {
    pub fn waveform_at(&self, t: f64) -> f64 {
        self.scenario.waveform_at(t)
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        self.scenario.breath.rate_at(t)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub meta: SequenceMeta,
    pub frames: Vec<ThermalFrame>,
    pub truth: GroundTruth,
}

/// Render a scenario. Deterministic for a fixed `(scenario, seed)`.
pub fn generate_synthetic(scenario: &SynthScenario, seed: u64) -> Result<SyntheticSequence> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, scenario.noise_sigma)
        .map_err(|e| Error::Argument(format!("noise sigma: {e}")))?;
    let n = scenario.frame_count();
    let (w, h) = (scenario.width, scenario.height);
    let mut frames = Vec::with_capacity(n);
    let mut boxes = Vec::with_capacity(n);
    let mut waveform = Vec::with_capacity(n);
    let mut occluded = Vec::with_capacity(n);
    for i in 0..n {
        let t = scenario.frame_time(i);
        let nostril = scenario.path.at(t);
        let mut temps = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let clean = scenario.clean_temperature(x as f64, y as f64, t, nostril);
                let noisy = clean + noise.sample(&mut rng);
                let value = if rng.gen::<f64>() < scenario.outlier_rate {
                    rng.gen_range(OUTLIER_LOW..=OUTLIER_HIGH)
                } else {
                    noisy
                };
                temps.push(value as f32);
            }
        }
        frames.push(ThermalFrame::new(w, h, t, temps)?);
        boxes.push(scenario.truth_box(t));
        waveform.push(scenario.waveform_at(t));
        occluded.push(scenario.is_occluded(t));
    }
    let mut meta = SequenceMeta::new(scenario.fps, Source::Synthetic)?;
    meta.emissivity = super::DEFAULT_EMISSIVITY;
    Ok(SyntheticSequence {
        meta,
        frames,
        truth: GroundTruth {
            scenario: scenario.clone(),
            boxes,
            waveform,
            occluded,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthScenario {
        SynthScenario {
            width: 40,
            height: 30,
            duration: 2.0,
            path: NostrilPath::fixed(20.0, 18.0),
            nostril_radius: 3.0,
            face_axes: (14.0, 12.0),
            face_offset: (0.0, -4.0),
            ..Default::default()
        }
    }

    #[test]
    fn zero_amplitude_scene_only_ramps() {
        let s = SynthScenario {
            breath_amplitude: 0.0,
            noise_sigma: 0.0,
            ambient_start: 20.0,
            ambient_end: 20.0,
            ..small()
        };
        let seq = generate_synthetic(&s, 1).unwrap();
        assert!(seq.frames.windows(2).all(|p| p[0].temps() == p[1].temps()));
        assert!(seq.truth.waveform.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fifteen_bpm_for_two_minutes_is_thirty_cycles() {
        let s = SynthScenario {
            breath: BreathPattern::Constant(15.0),
            ..Default::default()
        };
        let cycles = s.breath.phase_at(120.0) / (2.0 * PI);
        assert!((cycles - 30.0).abs() < 1e-12);
        // count upward zero crossings of the sampled waveform (t = 0 counts)
        let wave: Vec<f64> = (0..s.frame_count())
            .map(|i| s.waveform_at(s.frame_time(i)))
            .collect();
        let mut ups = 1;
        for p in wave.windows(2) {
            if p[0] < 0.0 && p[1] >= 0.0 {
                ups += 1;
            }
        }
        assert_eq!(ups, 30);
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = SynthScenario {
            outlier_rate: 0.01,
            ..small()
        };
        let a = generate_synthetic(&s, 7).unwrap();
        let b = generate_synthetic(&s, 7).unwrap();
        assert_eq!(a.frames, b.frames);
        let c = generate_synthetic(&s, 8).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn segment_phase_is_continuous() {
        let p = BreathPattern::Segments(vec![(30.0, 10.0), (30.0, 15.0), (30.0, 30.0)]);
        let eps = 1e-9;
        assert!((p.phase_at(30.0 - eps) - p.phase_at(30.0 + eps)).abs() < 1e-6);
        assert_eq!(p.rate_at(45.0), 15.0);
        assert_eq!(p.rate_at(200.0), 30.0);
        // 5 + 7.5 + 15 cycles
        assert!((p.phase_at(90.0) / (2.0 * PI) - 27.5).abs() < 1e-9);
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let s = SynthScenario {
            breath: BreathPattern::Constant(60.0),
            ..small()
        };
        assert!(generate_synthetic(&s, 0).is_err());
        let s = SynthScenario {
            path: NostrilPath::fixed(1.0, 1.0),
            ..small()
        };
        assert!(generate_synthetic(&s, 0).is_err());
    }

    #[test]
    fn nostril_is_cooler_than_face() {
        let s = SynthScenario {
            noise_sigma: 0.0,
            ..small()
        };
        let seq = generate_synthetic(&s, 0).unwrap();
        let f = &seq.frames[0];
        assert!(f.at(20, 18) < f.at(20, 10));
        assert!((f.at(20, 10) - 34.0).abs() < 1e-4);
    }
}
