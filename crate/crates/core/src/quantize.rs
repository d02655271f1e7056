//! Per-frame adaptive quantization of absolute temperatures onto 8-bit levels.
//!
//! The adaptive range combines a statistical outlier trim with an iterative
//! two-class (face / background) threshold. A static range is kept as the
//! baseline mode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::ThermalFrame;

pub const DEFAULT_LEVELS: u16 = 256;
pub const DEFAULT_EPS: f64 = 0.01;
pub const DEFAULT_MAX_ITER: usize = 100;
/// z-score used for the outlier trim.
pub const TRIM_Z: f64 = 1.96;
/// Nominal skin temperature used to decide which class is the face.
pub const SKIN_TEMP: f64 = 34.0;
/// Half-width added on each side of a degenerate range.
pub const DEGENERATE_WIDEN: f64 = 0.5;

/// Temperature interval mapped onto `levels` output codes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantRange {
    pub t_low: f64,
    pub t_high: f64,
    pub levels: u16,
}

impl QuantRange {
    pub fn new(t_low: f64, t_high: f64) -> Result<Self> {
        Self::with_levels(t_low, t_high, DEFAULT_LEVELS)
    }

    pub fn with_levels(t_low: f64, t_high: f64, levels: u16) -> Result<Self> {
        if !(t_low < t_high) || !t_low.is_finite() || !t_high.is_finite() {
            return Err(Error::Argument(format!(
                "quantization range needs t_low < t_high, got [{t_low}, {t_high}]"
            )));
        }
        if !(2..=256).contains(&levels) {
            return Err(Error::Argument(format!("levels must be in [2, 256], got {levels}")));
        }
        Ok(Self {
            t_low,
            t_high,
            levels,
        })
    }

    /// Map one temperature to its code (round half up, saturating).
    #[inline]
    pub fn code(&self, t: f64) -> u8 {
        let top = (self.levels - 1) as f64;
        let u = (t.clamp(self.t_low, self.t_high) - self.t_low) / (self.t_high - self.t_low) * top;
        (u + 0.5).floor().clamp(0.0, top) as u8
    }
}

/// 8-bit image plus the range that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub range: QuantRange,
}

impl QuantizedImage {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// How the trimmed range is derived from the frame spread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimMode {
    /// `mean -/+ 1.96 sigma`.
    #[default]
    StdDev,
    /// `mean -/+ 1.96 sigma / sqrt(n)`; kept for comparison only, it collapses
    /// the range on full-resolution frames.
    StdError,
}

/// Outlier trim: `(t_min', t_max')` around the frame mean.
pub fn trim_extremes(frame: &ThermalFrame) -> (f64, f64) {
    trim_extremes_with(frame.temps(), TrimMode::StdDev)
}

pub fn trim_extremes_with(temps: &[f32], mode: TrimMode) -> (f64, f64) {
    let n = temps.len() as f64;
    let mean = temps.iter().map(|&t| t as f64).sum::<f64>() / n;
    let var = temps
        .iter()
        .map(|&t| {
            let d = t as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let mut half = TRIM_Z * var.sqrt();
    if mode == TrimMode::StdError {
        half /= n.sqrt();
    }
    (mean - half, mean + half)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdResult {
    pub threshold: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Mean of values `<= threshold` (the threshold itself when that class is empty).
    pub lower_mean: f64,
    /// Mean of values `> threshold` (the threshold itself when that class is empty).
    pub upper_mean: f64,
}

/// Class means around `t`; an empty class takes `t` as its mean.
fn class_means(temps: &[f32], t: f64) -> (f64, f64) {
    let (mut s1, mut n1, mut s2, mut n2) = (0.0, 0usize, 0.0, 0usize);
    for &v in temps {
        let v = v as f64;
        if v <= t {
            s1 += v;
            n1 += 1;
        } else {
            s2 += v;
            n2 += 1;
        }
    }
    let m1 = if n1 > 0 { s1 / n1 as f64 } else { t };
    let m2 = if n2 > 0 { s2 / n2 as f64 } else { t };
    (m1, m2)
}

/// Iterative two-class threshold `T <- (mu_low(T) + mu_high(T)) / 2`, stopped
/// when a step moves less than `eps` or after `max_iter` updates.
pub fn optimal_threshold(temps: &[f32], t_init: f64, eps: f64, max_iter: usize) -> ThresholdResult {
    let mut t = t_init;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let (m1, m2) = class_means(temps, t);
        let next = 0.5 * (m1 + m2);
        iterations += 1;
        let step = (next - t).abs();
        t = next;
        if step < eps {
            converged = true;
            break;
        }
    }
    let (lower_mean, upper_mean) = class_means(temps, t);
    ThresholdResult {
        threshold: t,
        iterations,
        converged,
        lower_mean,
        upper_mean,
    }
}

/// Result of the adaptive range selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeSelection {
    pub range: QuantRange,
    pub threshold: ThresholdResult,
    pub trimmed: (f64, f64),
    /// The face was assigned to the colder class.
    pub hot_background: bool,
    /// The raw range was empty and has been widened.
    pub degenerate: bool,
}

/// Adaptive range of interest for one frame.
pub fn select_range(frame: &ThermalFrame) -> RangeSelection {
    select_range_with(frame.temps(), TrimMode::StdDev)
}

pub fn select_range_with(temps: &[f32], mode: TrimMode) -> RangeSelection {
    let trimmed = trim_extremes_with(temps, mode);
    // the threshold runs on the values that survive the trim
    let kept: Vec<f32> = temps
        .iter()
        .copied()
        .filter(|&t| (t as f64) >= trimmed.0 && (t as f64) <= trimmed.1)
        .collect();
    let population = if kept.is_empty() { temps } else { &kept[..] };
    let threshold = optimal_threshold(population, trimmed.0, DEFAULT_EPS, DEFAULT_MAX_ITER);
    let hot_background =
        (threshold.lower_mean - SKIN_TEMP).abs() < (threshold.upper_mean - SKIN_TEMP).abs();
    let (lo, hi) = if hot_background {
        (trimmed.0, threshold.threshold)
    } else {
        (threshold.threshold, trimmed.1)
    };
    let (range, degenerate) = match QuantRange::new(lo, hi) {
        Ok(r) if hi - lo > 1e-9 => (r, false),
        _ => {
            let mid = 0.5 * (lo + hi);
            let r = QuantRange::new(mid - DEGENERATE_WIDEN, mid + DEGENERATE_WIDEN)
                .expect("widened range is valid");
            (r, true)
        }
    };
    RangeSelection {
        range,
        threshold,
        trimmed,
        hot_background,
        degenerate,
    }
}

/// Linear map of every pixel into the range's codes.
pub fn quantize(frame: &ThermalFrame, range: &QuantRange) -> QuantizedImage {
    QuantizedImage {
        width: frame.width(),
        height: frame.height(),
        pixels: frame.temps().iter().map(|&t| range.code(t as f64)).collect(),
        range: *range,
    }
}

/// Quantization strategy applied frame by frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum QuantMode {
    Static { range: QuantRange },
    Optimal { trim: TrimMode },
}

impl QuantMode {
    pub fn optimal() -> Self {
        QuantMode::Optimal {
            trim: TrimMode::StdDev,
        }
    }

    /// Baseline fixed window used by earlier work, `[28, 38]` deg C.
    pub fn static_baseline() -> Self {
        QuantMode::Static {
            range: QuantRange::new(28.0, 38.0).expect("valid"),
        }
    }

    pub fn range_for(&self, frame: &ThermalFrame) -> QuantRange {
        match self {
            QuantMode::Static { range } => *range,
            QuantMode::Optimal { trim } => select_range_with(frame.temps(), *trim).range,
        }
    }

    pub fn apply(&self, frame: &ThermalFrame) -> QuantizedImage {
        quantize(frame, &self.range_for(frame))
    }
}
