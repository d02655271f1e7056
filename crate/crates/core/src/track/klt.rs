//! Pyramidal Lucas-Kanade point tracking on gradient-magnitude maps.
//!
//! The pyramid is undecimated: level `L` is the map blurred to the scale of a
//! 2^L-decimated image and sampled with stride 2^L. Coarse levels therefore
//! cover the same displacement range as a classic pyramid while every level
//! stays on the full-resolution grid, which keeps the tracker equivariant
//! under integer image translations.

use serde::{Deserialize, Serialize};

use super::GradientMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KltParams {
    /// Window side in samples (odd).
    pub window: usize,
    pub levels: usize,
    pub max_iter: usize,
    /// Convergence threshold on the update, in level pixels.
    pub epsilon: f64,
    /// Minimum eigenvalue of the structure tensor divided by the window area.
    pub min_eig: f64,
    /// Match windows up to a gain and offset (zero-mean, variance-matched residual).
    pub gain_bias: bool,
}

impl Default for KltParams {
    fn default() -> Self {
        Self {
            window: 11,
            levels: 3,
            max_iter: 20,
            epsilon: 0.01,
            min_eig: 1e-4,
            gain_bias: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedPoint {
    pub x: f64,
    pub y: f64,
    pub ok: bool,
}

struct Level {
    stride: f64,
    img: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

/// Multi-scale representation of one gradient map.
pub struct Pyramid {
    width: usize,
    height: usize,
    levels: Vec<Level>,
}

impl Pyramid {
    pub fn new(map: &GradientMap, levels: usize) -> Self {
        let (w, h) = (map.width, map.height);
        let levels = (0..levels.max(1))
            .map(|l| {
                // variance of an l-times decimated [1 4 6 4 1] pyramid in full-res pixels
                let sigma = (((4f64).powi(l as i32) - 1.0) / 3.0).sqrt();
                let img = if l == 0 {
                    map.mag.clone()
                } else {
                    gaussian_blur(w, h, &map.mag, sigma)
                };
                let stride = (1usize << l) as f64;
                let s = 1usize << l;
                let mut gx = vec![0.0; w * h];
                let mut gy = vec![0.0; w * h];
                for y in 0..h {
                    for x in 0..w {
                        let xl = x.saturating_sub(s);
                        let xr = (x + s).min(w - 1);
                        let yu = y.saturating_sub(s);
                        let yd = (y + s).min(h - 1);
                        if xr > xl {
                            gx[y * w + x] = (img[y * w + xr] - img[y * w + xl]) / (xr - xl) as f64;
                        }
                        if yd > yu {
                            gy[y * w + x] = (img[yd * w + x] - img[yu * w + x]) / (yd - yu) as f64;
                        }
                    }
                }
                Level {
                    stride,
                    img,
                    gx,
                    gy,
                }
            })
            .collect();
        Self {
            width: w,
            height: h,
            levels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn inside(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }
}

fn gaussian_blur(w: usize, h: usize, src: &[f64], sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let xi = clampi(x as isize + k as isize - radius, w);
                acc += kv * src[y * w + xi];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let yi = clampi(y as isize + k as isize - radius, h);
                acc += kv * tmp[yi * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (mut n, mut sum, mut sq) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        sum += v;
        sq += v * v;
    }
    let mean = sum / n;
    (mean, (sq / n - mean * mean).max(0.0).sqrt())
}

/// Bilinear sample with replicated borders.
#[inline]
fn sample(buf: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let top = buf[y0 * w + x0] * (1.0 - fx) + buf[y0 * w + x1] * fx;
    let bottom = buf[y1 * w + x0] * (1.0 - fx) + buf[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Track every point from `prev` into `next`.
pub fn track_points(
    prev: &Pyramid,
    next: &Pyramid,
    pts: &[Point],
    params: &KltParams,
) -> Vec<TrackedPoint> {
    pts.iter().map(|p| track_one(prev, next, *p, params)).collect()
}

fn track_one(prev: &Pyramid, next: &Pyramid, p: Point, params: &KltParams) -> TrackedPoint {
    let fail = TrackedPoint {
        x: p.x,
        y: p.y,
        ok: false,
    };
    if !prev.inside(p.x, p.y) || prev.width != next.width || prev.height != next.height {
        return fail;
    }
    let (w, h) = (prev.width, prev.height);
    let half = (params.window / 2) as isize;
    let area = ((2 * half + 1) * (2 * half + 1)) as f64;
    let n_levels = prev.levels.len().min(next.levels.len());
    let mut template = Vec::with_capacity(area as usize);
    let (mut dx, mut dy) = (0.0f64, 0.0f64);
    for l in (0..n_levels).rev() {
        let lp = &prev.levels[l];
        let ln = &next.levels[l];
        let s = lp.stride;
        template.clear();
        let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
        for j in -half..=half {
            for i in -half..=half {
                let qx = p.x + i as f64 * s;
                let qy = p.y + j as f64 * s;
                let t = sample(&lp.img, w, h, qx, qy);
                let ix = sample(&lp.gx, w, h, qx, qy);
                let iy = sample(&lp.gy, w, h, qx, qy);
                gxx += ix * ix;
                gxy += ix * iy;
                gyy += iy * iy;
                template.push((qx, qy, t, ix, iy));
            }
        }
        let tr = gxx + gyy;
        let det = gxx * gyy - gxy * gxy;
        let min_eig = 0.5 * (tr - ((gxx - gyy).powi(2) + 4.0 * gxy * gxy).sqrt());
        if min_eig / area < params.min_eig || det <= f64::EPSILON {
            if l == 0 {
                return fail;
            }
            continue;
        }
        let (t_mean, t_std) = if params.gain_bias {
            moments(template.iter().map(|v| v.2))
        } else {
            (0.0, 1.0)
        };
        let mut warped = vec![0.0; template.len()];
        for _ in 0..params.max_iter {
            for (slot, &(qx, qy, ..)) in warped.iter_mut().zip(&template) {
                *slot = sample(&ln.img, w, h, qx + dx, qy + dy);
            }
            let (gain, offset) = if params.gain_bias {
                let (n_mean, n_std) = moments(warped.iter().copied());
                if n_std > 1e-12 && t_std > 1e-12 {
                    (t_std / n_std, t_mean - t_std / n_std * n_mean)
                } else {
                    (1.0, t_mean - n_mean)
                }
            } else {
                (1.0, 0.0)
            };
            let (mut bx, mut by) = (0.0, 0.0);
            for (&(_, _, t, ix, iy), &nv) in template.iter().zip(&warped) {
                let diff = t - (gain * nv + offset);
                bx += diff * ix;
                by += diff * iy;
            }
            let ux = (gyy * bx - gxy * by) / det;
            let uy = (gxx * by - gxy * bx) / det;
            dx += ux;
            dy += uy;
            if !dx.is_finite() || !dy.is_finite() {
                return fail;
            }
            if (ux * ux + uy * uy).sqrt() < params.epsilon * s {
                break;
            }
        }
    }
    let (nx, ny) = (p.x + dx, p.y + dy);
    if !next.inside(nx, ny) {
        return fail;
    }
    TrackedPoint {
        x: nx,
        y: ny,
        ok: true,
    }
}

/// Track points forward through `seq` and back to the first map; returns the
/// Euclidean distance between each start point and its returned position, or
/// `+inf` when any leg fails.
pub fn fb_error_pyramids(seq: &[&Pyramid], pts: &[Point], params: &KltParams) -> Vec<f64> {
    fb_track_pyramids(seq, pts, params).1
}

/// Forward endpoints plus forward-backward errors.
pub(crate) fn fb_track_pyramids(
    seq: &[&Pyramid],
    pts: &[Point],
    params: &KltParams,
) -> (Vec<TrackedPoint>, Vec<f64>) {
    assert!(seq.len() >= 2, "forward-backward tracking needs at least two maps");
    let mut fwd: Vec<TrackedPoint> = pts
        .iter()
        .map(|p| TrackedPoint {
            x: p.x,
            y: p.y,
            ok: true,
        })
        .collect();
    for pair in seq.windows(2) {
        fwd = step_all(pair[0], pair[1], &fwd, params);
    }
    let mut back = fwd.clone();
    for pair in seq.windows(2).rev() {
        back = step_all(pair[1], pair[0], &back, params);
    }
    let errors = pts
        .iter()
        .zip(&back)
        .map(|(p, b)| {
            if b.ok {
                Point::new(b.x, b.y).dist(p)
            } else {
                f64::INFINITY
            }
        })
        .collect();
    (fwd, errors)
}

fn step_all(
    from: &Pyramid,
    to: &Pyramid,
    pts: &[TrackedPoint],
    params: &KltParams,
) -> Vec<TrackedPoint> {
    pts.iter()
        .map(|p| {
            if p.ok {
                track_one(from, to, Point::new(p.x, p.y), params)
            } else {
                *p
            }
        })
        .collect()
}
