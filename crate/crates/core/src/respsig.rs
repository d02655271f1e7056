//! Respiration waveforms from the tracked nostril region.
//!
//! Two feature extractors are provided. The thermal-voxel feature sums the
//! per-pixel temperature deficits below a moving boundary `T_delta`, the
//! moving average (n = 2) of the ROI spatial means. The boundary history is
//! dropped when the ROI skewness jumps or the tracker re-localizes or loses
//! the region. The mean feature is the plain spatial average of the ROI.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::frames::{GroundTruth, ThermalFrame};
use crate::stats;
use crate::track::{RoiTrack, TrackStatus};
use crate::{Error, Result};

/// The ROI boundary was reset before this sample.
pub const FLAG_RESET: u8 = 1;
/// The sample repeats the previous value (lost track or empty crop).
pub const FLAG_HELD: u8 = 2;
/// Min-max normalization was degenerate; the signal is all zeros.
pub const FLAG_CONSTANT: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalMethod {
    Voxel,
    Mean,
    /// An externally supplied or analytic reference waveform.
    Reference,
}

impl fmt::Display for SignalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalMethod::Voxel => "voxel",
            SignalMethod::Mean => "mean",
            SignalMethod::Reference => "reference",
        })
    }
}

impl FromStr for SignalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voxel" => Ok(SignalMethod::Voxel),
            "mean" => Ok(SignalMethod::Mean),
            "reference" => Ok(SignalMethod::Reference),
            _ => Err(Error::Argument(format!(
                "unknown signal method {s:?} (expected voxel or mean)"
            ))),
        }
    }
}

/// A uniformly sampled 1-D waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct RespirationSignal {
    pub samples: Vec<f64>,
    /// Sampling rate, Hz.
    pub fs: f64,
    pub method: SignalMethod,
    /// Time of the first sample, s.
    pub t0: f64,
    /// Per-sample bit set of `FLAG_*` values.
    pub flags: Vec<u8>,
}

impl RespirationSignal {
    pub fn new(samples: Vec<f64>, fs: f64, method: SignalMethod, t0: f64) -> Result<Self> {
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::Argument(format!("sampling rate must be positive, got {fs}")));
        }
        if samples.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "a signal needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite sample at index {i}")));
        }
        let flags = vec![0; samples.len()];
        Ok(Self {
            samples,
            fs,
            method,
            t0,
            flags,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.fs
    }

    /// Time between the first and last samples.
    pub fn span(&self) -> f64 {
        (self.len() - 1) as f64 / self.fs
    }

    pub fn is_degenerate(&self) -> bool {
        self.flags.iter().any(|f| f & FLAG_CONSTANT != 0)
    }

    pub const CSV_HEADER: &'static str = "t,value,status_flag";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for (i, (v, f)) in self.samples.iter().zip(&self.flags).enumerate() {
            writeln!(out, "{},{v},{f}", self.time(i))?;
        }
        Ok(())
    }

    /// Parse `t,value[,status_flag]` rows. The first row is a header when it
    /// does not parse as numbers. Timestamps must be uniformly spaced.
    pub fn read_csv<R: BufRead>(input: R, method: SignalMethod) -> Result<Self> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut flags = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Format(format!("signal csv: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = (|| {
                let t = cols.first()?.parse::<f64>().ok()?;
                let v = cols.get(1)?.parse::<f64>().ok()?;
                let f = match cols.get(2) {
                    Some(s) => s.parse::<u8>().ok()?,
                    None => 0,
                };
                (cols.len() <= 3).then_some((t, v, f))
            })();
            match parsed {
                Some((t, v, f)) => {
                    times.push(t);
                    values.push(v);
                    flags.push(f);
                }
                None if lineno == 0 => continue,
                None => {
                    return Err(Error::Format(format!(
                        "signal csv line {}: {line:?}",
                        lineno + 1
                    )))
                }
            }
        }
        if times.len() < 2 {
            return Err(Error::InsufficientData(
                "signal csv needs at least 2 rows".into(),
            ));
        }
        let span = times[times.len() - 1] - times[0];
        if !(span > 0.0) {
            return Err(Error::Format("signal csv timestamps must increase".into()));
        }
        let fs = (times.len() - 1) as f64 / span;
        let dt = 1.0 / fs;
        for (i, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > 1e-3 * dt {
                return Err(Error::Format(format!(
                    "signal csv is not uniformly sampled near row {}",
                    i + 2
                )));
            }
        }
        let mut sig = Self::new(values, fs, method, times[0])?;
        sig.flags = flags;
        Ok(sig)
    }
}

/// Moving boundary state for the voxel feature.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VoxelState {
    /// Current boundary `T_delta`, deg C. `NaN` before the first frame.
    pub t_delta: f64,
    prev_mean: Option<f64>,
    /// Skewness of the previous ROI.
    pub last_skewness: Option<f64>,
    /// Drop the boundary history at the next update.
    pub reset_pending: bool,
}

impl VoxelState {
    pub fn new() -> Self {
        Self {
            t_delta: f64::NAN,
            ..Default::default()
        }
    }
}

/// Sum of positive deficits `T_delta - u` over the ROI temperatures.
pub fn voxel_value(roi_temps: &[f64], t_delta: f64) -> f64 {
    roi_temps
        .iter()
        .map(|&u| t_delta - u)
        .filter(|&d| d > 0.0)
        .sum()
}

/// Advance the n = 2 moving average of spatial means and return the new
/// boundary.
pub fn update_boundary(state: &mut VoxelState, spatial_mean: f64) -> f64 {
    if state.reset_pending {
        state.prev_mean = None;
        state.reset_pending = false;
    }
    state.t_delta = match state.prev_mean {
        Some(p) => 0.5 * (spatial_mean + p),
        None => spatial_mean,
    };
    state.prev_mean = Some(spatial_mean);
    state.t_delta
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewJump {
    pub delta: f64,
    /// One of the two regions had zero variance; `delta` is 0.
    pub degenerate: bool,
}

/// Change of sample skewness from `prev` to `current`.
pub fn skewness_jump(current: &[f64], prev: &[f64]) -> SkewJump {
    match (stats::skewness(current), stats::skewness(prev)) {
        (Some(a), Some(b)) => SkewJump {
            delta: a - b,
            degenerate: false,
        },
        _ => SkewJump {
            delta: 0.0,
            degenerate: true,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractParams {
    pub method: SignalMethod,
    /// Boundary reset threshold on `|delta skewness|`.
    pub skew_thresh: f64,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self {
            method: SignalMethod::Voxel,
            skew_thresh: 0.5,
        }
    }
}

impl ExtractParams {
    pub fn validate(&self) -> Result<()> {
        if self.method == SignalMethod::Reference {
            return Err(Error::Config(
                "extraction method must be voxel or mean".into(),
            ));
        }
        if !(self.skew_thresh > 0.0) {
            return Err(Error::Config(format!(
                "skew_thresh must be positive, got {}",
                self.skew_thresh
            )));
        }
        Ok(())
    }
}

/// Per-frame feature values before resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub flags: Vec<u8>,
}

/// Raw feature value for every frame, in temperature units.
pub fn extract_frame_series(
    frames: &[ThermalFrame],
    track: &RoiTrack,
    params: &ExtractParams,
) -> Result<FrameSeries> {
    params.validate()?;
    if track.len() != frames.len() {
        return Err(Error::Argument(format!(
            "track has {} entries for {} frames",
            track.len(),
            frames.len()
        )));
    }
    let mut state = VoxelState::new();
    let mut last: Option<f64> = None;
    let mut out = FrameSeries {
        times: Vec::with_capacity(frames.len()),
        values: Vec::with_capacity(frames.len()),
        flags: Vec::with_capacity(frames.len()),
    };
    for (i, (frame, entry)) in frames.iter().zip(&track.entries).enumerate() {
        let (x0, y0, x1, y1) = entry.roi.pixel_bounds();
        let crop = frame.crop(x0, y0, x1, y1);
        let mut flag = 0;
        let value = if entry.status == TrackStatus::Lost || crop.is_empty() {
            state.reset_pending = true;
            state.last_skewness = None;
            flag |= FLAG_HELD;
            match last {
                Some(v) => v,
                None => {
                    return Err(Error::InsufficientData(format!(
                        "no usable ROI at frame {i}"
                    )))
                }
            }
        } else {
            if entry.status == TrackStatus::Relocalized {
                state.reset_pending = true;
                state.last_skewness = None;
            }
            let value = match params.method {
                SignalMethod::Mean => stats::mean(&crop).unwrap_or_default(),
                _ => {
                    if state.reset_pending && i > 0 {
                        flag |= FLAG_RESET;
                    }
                    let m = stats::mean(&crop).unwrap_or_default();
                    let t_delta = update_boundary(&mut state, m);
                    voxel_value(&crop, t_delta)
                }
            };
            let skew = stats::skewness(&crop);
            if let (Some(a), Some(b)) = (skew, state.last_skewness) {
                if (a - b).abs() > params.skew_thresh {
                    state.reset_pending = true;
                }
            }
            state.last_skewness = skew;
            value
        };
        last = Some(value);
        out.times.push(frame.timestamp());
        out.values.push(value);
        out.flags.push(flag);
    }
    Ok(out)
}

/// Extract the feature, resample linearly onto a uniform `fps` grid and
/// min-max normalize to `[0, 1]`.
pub fn extract_signal(
    frames: &[ThermalFrame],
    track: &RoiTrack,
    params: &ExtractParams,
    fps: f64,
) -> Result<RespirationSignal> {
    if !(fps > 0.0) {
        return Err(Error::Argument(format!("fps must be positive, got {fps}")));
    }
    if frames.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 frames, got {}",
            frames.len()
        )));
    }
    let series = extract_frame_series(frames, track, params)?;
    let (mut samples, mut flags) = resample_linear(&series, fps);
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    if range > 1e-12 * hi.abs().max(1.0) {
        samples.iter_mut().for_each(|v| *v = (*v - lo) / range);
    } else {
        samples.iter_mut().for_each(|v| *v = 0.0);
        flags.iter_mut().for_each(|f| *f |= FLAG_CONSTANT);
    }
    let mut sig = RespirationSignal::new(samples, fps, params.method, series.times[0])?;
    sig.flags = flags;
    Ok(sig)
}

/// Number of grid points at rate `fs` covering `span` seconds.
pub fn grid_len(span: f64, fs: f64) -> usize {
    (span * fs + 1e-9).floor() as usize + 1
}

fn resample_linear(series: &FrameSeries, fs: f64) -> (Vec<f64>, Vec<u8>) {
    let t = &series.times;
    let t0 = t[0];
    let n = grid_len(t[t.len() - 1] - t0, fs);
    let mut values = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let tk = t0 + k as f64 / fs;
        while j + 2 < t.len() && t[j + 1] <= tk {
            j += 1;
        }
        let (ta, tb) = (t[j], t[j + 1]);
        let a = ((tk - ta) / (tb - ta)).clamp(0.0, 1.0);
        values.push(series.values[j] + a * (series.values[j + 1] - series.values[j]));
        flags.push(if a == 0.0 {
            series.flags[j]
        } else if a == 1.0 {
            series.flags[j + 1]
        } else {
            series.flags[j] | series.flags[j + 1]
        });
    }
    (values, flags)
}

/// Natural cubic spline through `(xs, ys)`; `xs` strictly increasing.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n != ys.len() || n < 2 {
            return Err(Error::Argument("spline needs matching knots, at least 2".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument("spline knots must strictly increase".into()));
        }
        // Second derivatives via the Thomas algorithm, zero at both ends.
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            let mut upper = vec![0.0; k];
            for i in 0..k {
                let h0 = xs[i + 1] - xs[i];
                let h1 = xs[i + 2] - xs[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h1 - (ys[i + 1] - ys[i]) / h0);
            }
            for i in 1..k {
                let lower = xs[i + 1] - xs[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self { xs, ys, m })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let i = match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Spline-resample a signal onto a uniform grid at `fs_out` over its span.
pub fn resample_spline(signal: &RespirationSignal, fs_out: f64) -> Result<RespirationSignal> {
    if signal.len() < 4 {
        return Err(Error::Argument(format!(
            "cubic spline resampling needs at least 4 samples, got {}",
            signal.len()
        )));
    }
    if !(fs_out > 0.0) {
        return Err(Error::Argument(format!("target rate must be positive, got {fs_out}")));
    }
    let xs: Vec<f64> = (0..signal.len()).map(|i| i as f64 / signal.fs).collect();
    let last = signal.len() - 1;
    let spline = NaturalSpline::new(xs, signal.samples.clone())?;
    let span = signal.span();
    let n = grid_len(span, fs_out);
    let ratio = signal.fs / fs_out;
    let samples: Vec<f64> = (0..n)
        .map(|k| {
            let pos = k as f64 * ratio;
            if (pos - last as f64).abs() < 1e-9 {
                signal.samples[last]
            } else if pos.fract() == 0.0 {
                signal.samples[pos as usize]
            } else {
                spline.eval(k as f64 / fs_out)
            }
        })
        .collect();
    let mut out = RespirationSignal::new(samples, fs_out, signal.method, signal.t0)?;
    out.flags = (0..n)
        .map(|k| signal.flags[((k as f64 * ratio).round() as usize).min(last)])
        .collect();
    Ok(out)
}

/// Spline-resample to the 256 Hz reference rate.
pub fn resample_256(signal: &RespirationSignal) -> Result<RespirationSignal> {
    resample_spline(signal, crate::frames::REFERENCE_FS)
}

/// The analytic breathing waveform of a synthetic scene sampled at `fs` over
/// the span of its frames.
pub fn reference_from_truth(truth: &GroundTruth, fs: f64) -> Result<RespirationSignal> {
    let sc = &truth.scenario;
    let span = sc.frame_time(sc.frame_count().saturating_sub(1));
    let n = grid_len(span, fs);
    let samples = (0..n).map(|k| sc.waveform_at(k as f64 / fs)).collect();
    RespirationSignal::new(samples, fs, SignalMethod::Reference, 0.0)
}
