use super::klt::{fb_track_pyramids, Point, Pyramid};
use super::{Roi, TrackParams};
use crate::stats::median;

/// Result of one Median Flow update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub roi: Roi,
    /// Points whose forward-backward error is within `fb_max`.
    pub n_points: usize,
    /// Points that also pass the median error cut and drive the update.
    pub n_kept: usize,
    /// Median forward-backward error over successfully tracked points.
    pub fb_median: f64,
    pub scale: f64,
    /// Fewer than four points survived; the box was not moved.
    pub point_loss: bool,
}

/// `grid x grid` lattice of cell centers inside `roi`.
pub fn seed_grid(roi: &Roi, grid: usize) -> Vec<Point> {
    let step = roi.size / grid as f64;
    let mut pts = Vec::with_capacity(grid * grid);
    for j in 0..grid {
        for i in 0..grid {
            pts.push(Point::new(
                roi.x + (i as f64 + 0.5) * step,
                roi.y + (j as f64 + 0.5) * step,
            ));
        }
    }
    pts
}

/// One frame-pair Median Flow update of `prev_roi`.
pub fn median_flow_step(
    prev_roi: &Roi,
    prev: &Pyramid,
    next: &Pyramid,
    params: &TrackParams,
) -> StepOutcome {
    let pts = seed_grid(prev_roi, params.grid);
    let (fwd, fb) = fb_track_pyramids(&[prev, next], &pts, &params.klt);
    let finite: Vec<f64> = fb.iter().copied().filter(|e| e.is_finite()).collect();
    let fb_median = median(&finite).unwrap_or(f64::INFINITY);
    let reliable: Vec<usize> = (0..pts.len())
        .filter(|&i| fwd[i].ok && fb[i] <= params.fb_max)
        .collect();
    let kept: Vec<usize> = reliable
        .iter()
        .copied()
        .filter(|&i| fb[i] <= fb_median)
        .collect();
    let lost = StepOutcome {
        roi: *prev_roi,
        n_points: reliable.len(),
        n_kept: kept.len(),
        fb_median,
        scale: 1.0,
        point_loss: true,
    };
    if kept.len() < 4 {
        return lost;
    }
    let dxs: Vec<f64> = kept.iter().map(|&i| fwd[i].x - pts[i].x).collect();
    let dys: Vec<f64> = kept.iter().map(|&i| fwd[i].y - pts[i].y).collect();
    let dx = median(&dxs).unwrap_or(0.0);
    let dy = median(&dys).unwrap_or(0.0);
    let mut ratios = Vec::with_capacity(kept.len() * (kept.len() - 1) / 2);
    for (a, &i) in kept.iter().enumerate() {
        for &j in &kept[a + 1..] {
            let before = pts[i].dist(&pts[j]);
            if before > 1e-9 {
                let after = Point::new(fwd[i].x, fwd[i].y).dist(&Point::new(fwd[j].x, fwd[j].y));
                ratios.push(after / before);
            }
        }
    }
    let mut scale = median(&ratios).unwrap_or(1.0);
    if let Some((lo, hi)) = params.scale_clamp {
        scale = scale.clamp(lo, hi);
    }
    let (cx, cy) = prev_roi.center();
    let size = prev_roi.size * scale;
    StepOutcome {
        roi: Roi::new(cx + dx - size / 2.0, cy + dy - size / 2.0, size),
        n_points: reliable.len(),
        n_kept: kept.len(),
        fb_median,
        scale,
        point_loss: false,
    }
}
