//! Nostril ROI tracking on thermal-gradient magnitude maps.
//!
//! Each frame is quantized, converted to a gradient-magnitude map and the ROI
//! is advanced with Median Flow (pyramidal Lucas-Kanade plus forward-backward
//! error filtering). When too few points survive, the ROI is re-localized by
//! gradient NCC against the last confidently tracked template.

mod gradient;
mod klt;
mod median_flow;
mod ncc;

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use gradient::{gradient_magnitude, gradient_magnitude_of, GradientMap, Patch};
pub use klt::{fb_error_pyramids, track_points, KltParams, Point, Pyramid, TrackedPoint};
pub use median_flow::{median_flow_step, seed_grid, StepOutcome};
pub use ncc::{ncc_coefficient, ncc_relocalize, NccMatch};

use crate::error::{Error, Result};
use crate::frames::ThermalFrame;
use crate::quantize::QuantMode;

/// Square region of interest; `(x, y)` is the top-left corner in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub x: f64,
    pub y: f64,
    pub size: f64,
}

impl Roi {
    pub fn new(x: f64, y: f64, size: f64) -> Self {
        Self { x, y, size }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.size / 2.0, self.y + self.size / 2.0)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.size)
    }

    pub fn intersects(&self, width: usize, height: usize) -> bool {
        self.size > 0.0
            && self.x < width as f64
            && self.y < height as f64
            && self.x + self.size > 0.0
            && self.y + self.size > 0.0
    }

    pub fn inside(&self, width: usize, height: usize) -> bool {
        self.size > 0.0
            && self.x >= 0.0
            && self.y >= 0.0
            && self.x + self.size <= width as f64
            && self.y + self.size <= height as f64
    }

    /// Integer pixel bounds `[x0, x1) x [y0, y1)` obtained by rounding the box edges.
    pub fn pixel_bounds(&self) -> (i64, i64, i64, i64) {
        (
            self.x.round() as i64,
            self.y.round() as i64,
            (self.x + self.size).round() as i64,
            (self.y + self.size).round() as i64,
        )
    }

    pub fn iou(&self, other: &Roi) -> f64 {
        let ix = (self.x + self.size).min(other.x + other.size) - self.x.max(other.x);
        let iy = (self.y + self.size).min(other.y + other.size) - self.y.max(other.y);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        inter / (self.size * self.size + other.size * other.size - inter)
    }
}

impl FromStr for Roi {
    type Err = Error;

    /// Parses `X,Y,N`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Argument(format!("ROI must be X,Y,N, got {s:?}")))?;
        match parts[..] {
            [x, y, n] if n > 0.0 => Ok(Roi::new(x, y, n)),
            _ => Err(Error::Argument(format!("ROI must be X,Y,N with N > 0, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackParams {
    /// Per-point forward-backward rejection threshold, px.
    pub fb_max: f64,
    /// Points per side of the seeding lattice.
    pub grid: usize,
    /// Re-localize when fewer than this fraction of `grid^2` points are reliable.
    pub min_points_frac: f64,
    /// NCC search radius, px; `None` means twice the ROI size.
    pub search_radius: Option<f64>,
    /// Per-frame scale clamp; `None` disables it.
    pub scale_clamp: Option<(f64, f64)>,
    /// Minimum NCC coefficient accepted for a re-localization.
    pub min_ncc: f64,
    /// 3x3 median on the quantized image before the gradient map.
    pub despeckle: bool,
    pub klt: KltParams,
}

impl Default for TrackParams {
    fn default() -> Self {
        Self {
            fb_max: 5.0,
            grid: 10,
            min_points_frac: 0.5,
            search_radius: None,
            scale_clamp: Some((0.9, 1.1)),
            min_ncc: 0.5,
            despeckle: true,
            klt: KltParams::default(),
        }
    }
}

impl TrackParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fb_max > 0.0) {
            return Err(Error::Config(format!("fb_max must be > 0, got {}", self.fb_max)));
        }
        if self.grid < 2 {
            return Err(Error::Config("grid needs at least 2 points per side".into()));
        }
        if !(0.0..=1.0).contains(&self.min_points_frac) {
            return Err(Error::Config("min_points_frac must be in [0, 1]".into()));
        }
        if self.klt.window % 2 == 0 || self.klt.levels == 0 {
            return Err(Error::Config("KLT window must be odd and levels >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tracked,
    Relocalized,
    Lost,
}

impl fmt::Display for TrackStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrackStatus::Tracked => "tracked",
            TrackStatus::Relocalized => "relocalized",
            TrackStatus::Lost => "lost",
        })
    }
}

impl FromStr for TrackStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tracked" => Ok(TrackStatus::Tracked),
            "relocalized" => Ok(TrackStatus::Relocalized),
            "lost" => Ok(TrackStatus::Lost),
            _ => Err(Error::Format(format!("unknown track status {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackEntry {
    pub roi: Roi,
    pub status: TrackStatus,
    pub n_points: usize,
    pub fb_median: f64,
}

/// One entry per processed frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoiTrack {
    pub entries: Vec<TrackEntry>,
}

impl RoiTrack {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, status: TrackStatus) -> usize {
        self.entries.iter().filter(|e| e.status == status).count()
    }

    pub const CSV_HEADER: &'static str = "frame_idx,x,y,size,status,n_points,fb_median";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(
                out,
                "{i},{},{},{},{},{},{}",
                e.roi.x, e.roi.y, e.roi.size, e.status, e.n_points, e.fb_median
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Format(format!("roi track: {e}")))?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("roi track line {}: {line:?}", lineno + 1));
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 7 || cols[0].parse::<usize>().ok() != Some(entries.len()) {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            entries.push(TrackEntry {
                roi: Roi::new(num(cols[1])?, num(cols[2])?, num(cols[3])?),
                status: cols[4].parse()?,
                n_points: cols[5].parse().map_err(|_| bad())?,
                fb_median: num(cols[6])?,
            });
        }
        Ok(Self { entries })
    }
}

/// Quantize a frame and build its gradient-magnitude map.
pub fn frame_gradient(frame: &ThermalFrame, quant: &QuantMode, despeckle: bool) -> GradientMap {
    let mut q = quant.apply(frame);
    if despeckle {
        q.pixels = median3x3(q.width, q.height, &q.pixels);
    }
    gradient_magnitude(&q)
}

/// 3x3 median with replicated borders; removes isolated extreme pixels.
pub fn median3x3(width: usize, height: usize, px: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(px.len());
    let mut win = [0u8; 9];
    for y in 0..height {
        for x in 0..width {
            let mut k = 0;
            for dy in [-1isize, 0, 1] {
                let yy = (y as isize + dy).clamp(0, height as isize - 1) as usize;
                for dx in [-1isize, 0, 1] {
                    let xx = (x as isize + dx).clamp(0, width as isize - 1) as usize;
                    win[k] = px[yy * width + xx];
                    k += 1;
                }
            }
            win.sort_unstable();
            out.push(win[4]);
        }
    }
    out
}

/// Track points from one gradient map into the next.
pub fn klt_track(
    prev: &GradientMap,
    next: &GradientMap,
    pts: &[Point],
    params: &KltParams,
) -> Vec<TrackedPoint> {
    let a = Pyramid::new(prev, params.levels);
    let b = Pyramid::new(next, params.levels);
    track_points(&a, &b, pts, params)
}

/// Forward-backward error of each point along `seq` (length >= 2).
pub fn fb_error(seq: &[GradientMap], pts: &[Point], params: &KltParams) -> Vec<f64> {
    let pyramids: Vec<Pyramid> = seq.iter().map(|g| Pyramid::new(g, params.levels)).collect();
    let refs: Vec<&Pyramid> = pyramids.iter().collect();
    fb_error_pyramids(&refs, pts, params)
}

struct FrameState {
    pyramid: Pyramid,
}

/// Streaming Thermal Gradient Flow tracker.
pub struct RoiTracker {
    params: TrackParams,
    quant: QuantMode,
    roi: Roi,
    prev: Option<FrameState>,
    template: Option<Patch>,
    lost: bool,
}

impl RoiTracker {
    pub fn new(init_roi: Roi, params: TrackParams, quant: QuantMode) -> Result<Self> {
        params.validate()?;
        if !(init_roi.size > 0.0) {
            return Err(Error::Argument("initial ROI size must be positive".into()));
        }
        Ok(Self {
            params,
            quant,
            roi: init_roi,
            prev: None,
            template: None,
            lost: false,
        })
    }

    pub fn roi(&self) -> Roi {
        self.roi
    }

    fn crop_template(grad: &GradientMap, roi: &Roi) -> Option<Patch> {
        let n = roi.size.round().max(1.0) as usize;
        grad.patch(roi.x.round() as i64, roi.y.round() as i64, n)
    }

    pub fn push(&mut self, frame: &ThermalFrame) -> Result<TrackEntry> {
        let grad = frame_gradient(frame, &self.quant, self.params.despeckle);
        let pyramid = Pyramid::new(&grad, self.params.klt.levels);
        let full = self.params.grid * self.params.grid;

        let Some(prev) = self.prev.take() else {
            if !self.roi.inside(frame.width(), frame.height()) {
                return Err(Error::Argument(format!(
                    "initial ROI {:?} is not inside the {}x{} frame",
                    self.roi,
                    frame.width(),
                    frame.height()
                )));
            }
            self.template = Self::crop_template(&grad, &self.roi);
            self.prev = Some(FrameState { pyramid });
            return Ok(TrackEntry {
                roi: self.roi,
                status: TrackStatus::Tracked,
                n_points: full,
                fb_median: 0.0,
            });
        };

        // once lost, only a template match brings the tracker back
        let step = median_flow_step(&self.roi, &prev.pyramid, &pyramid, &self.params);
        let enough = step.n_points as f64 >= self.params.min_points_frac * full as f64;
        let entry = if !self.lost
            && !step.point_loss
            && enough
            && step.roi.intersects(frame.width(), frame.height())
        {
            self.roi = step.roi;
            if 10 * step.n_points >= 9 * full {
                if let Some(t) = Self::crop_template(&grad, &self.roi) {
                    self.template = Some(t);
                }
            }
            TrackEntry {
                roi: self.roi,
                status: TrackStatus::Tracked,
                n_points: step.n_points,
                fb_median: step.fb_median,
            }
        } else {
            let relocated = self.template.as_ref().and_then(|template| {
                let radius = self.params.search_radius.unwrap_or(2.0 * self.roi.size);
                ncc_relocalize(template, &grad, self.roi.center(), radius)
                    .ok()
                    .filter(|m| m.gamma >= self.params.min_ncc)
                    .map(|m| {
                        let half = template.size as f64 / 2.0;
                        let (cx, cy) = (m.x as f64 + half, m.y as f64 + half);
                        Roi::new(cx - self.roi.size / 2.0, cy - self.roi.size / 2.0, self.roi.size)
                    })
            });
            match relocated {
                Some(roi) => {
                    self.roi = roi;
                    self.lost = false;
                    TrackEntry {
                        roi,
                        status: TrackStatus::Relocalized,
                        n_points: step.n_points,
                        fb_median: step.fb_median,
                    }
                }
                None => {
                    self.lost = true;
                    TrackEntry {
                        roi: self.roi,
                        status: TrackStatus::Lost,
                        n_points: step.n_points,
                        fb_median: step.fb_median,
                    }
                }
            }
        };
        self.prev = Some(FrameState { pyramid });
        Ok(entry)
    }
}

/// Track the ROI through every frame.
pub fn track_sequence<'a>(
    frames: impl IntoIterator<Item = &'a ThermalFrame>,
    init_roi: Roi,
    params: &TrackParams,
    quant: &QuantMode,
) -> Result<RoiTrack> {
    let mut tracker = RoiTracker::new(init_roi, *params, *quant)?;
    let mut track = RoiTrack::default();
    for (i, frame) in frames.into_iter().enumerate() {
        let entry = tracker.push(frame).map_err(|e| match e {
            Error::Argument(_) => e,
            other => other.in_stage("track", Some(i)),
        })?;
        track.entries.push(entry);
    }
    Ok(track)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_basics() {
        let a = Roi::new(0.0, 0.0, 10.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&Roi::new(20.0, 0.0, 10.0)), 0.0);
        let b = Roi::new(5.0, 0.0, 10.0);
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn roi_parse() {
        assert_eq!("10,20,16".parse::<Roi>().unwrap(), Roi::new(10.0, 20.0, 16.0));
        assert!("10,20".parse::<Roi>().is_err());
        assert!("10,20,0".parse::<Roi>().is_err());
    }

    #[test]
    fn track_csv_round_trip() {
        let track = RoiTrack {
            entries: vec![
                TrackEntry {
                    roi: Roi::new(1.5, 2.25, 20.0),
                    status: TrackStatus::Tracked,
                    n_points: 100,
                    fb_median: 0.0,
                },
                TrackEntry {
                    roi: Roi::new(1.5, 2.25, 20.0),
                    status: TrackStatus::Lost,
                    n_points: 3,
                    fb_median: f64::INFINITY,
                },
            ],
        };
        let mut buf = Vec::new();
        track.write_csv(&mut buf).unwrap();
        let back = RoiTrack::read_csv(&buf[..]).unwrap();
        assert_eq!(back, track);
    }

    #[test]
    fn init_roi_outside_frame_is_argument_error() {
        let frame = ThermalFrame::new(20, 20, 0.0, vec![30.0; 400]).unwrap();
        let err = track_sequence(
            [&frame],
            Roi::new(15.0, 15.0, 10.0),
            &TrackParams::default(),
            &QuantMode::optimal(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }
}
