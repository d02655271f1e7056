use super::{GradientMap, Patch};
use crate::error::{Error, Result};

/// Best template position found by [`ncc_relocalize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NccMatch {
    /// Top-left corner of the matched block.
    pub x: i64,
    pub y: i64,
    pub gamma: f64,
}

/// Zero-mean normalized cross-correlation of two equally sized blocks.
/// `None` when either block has zero variance.
pub fn ncc_coefficient(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    // relative guard: constant blocks leave only rounding noise in saa/sbb
    let tiny = |ss: f64, m: f64| ss <= 1e-20 * (n * m * m).max(1.0);
    if tiny(saa, ma) || tiny(sbb, mb) {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Exhaustive integer-offset search for `template` around `center` (the
/// expected block center). Offsets are limited to a disc of `radius` pixels.
pub fn ncc_relocalize(
    template: &Patch,
    frame: &GradientMap,
    center: (f64, f64),
    radius: f64,
) -> Result<NccMatch> {
    let n = template.size;
    if ncc_coefficient(&template.data, &template.data).is_none() {
        return Err(Error::Relocalization("template has zero variance".into()));
    }
    let base_x = (center.0 - n as f64 / 2.0).round() as i64;
    let base_y = (center.1 - n as f64 / 2.0).round() as i64;
    let r = radius.max(0.0).floor() as i64;
    let mut best: Option<NccMatch> = None;
    for oy in -r..=r {
        for ox in -r..=r {
            if ((ox * ox + oy * oy) as f64) > radius * radius {
                continue;
            }
            let (x, y) = (base_x + ox, base_y + oy);
            let Some(candidate) = frame.patch(x, y, n) else {
                continue;
            };
            let Some(gamma) = ncc_coefficient(&template.data, &candidate.data) else {
                continue;
            };
            if best.map_or(true, |b| gamma > b.gamma) {
                best = Some(NccMatch { x, y, gamma });
            }
        }
    }
    best.ok_or_else(|| Error::Relocalization("no candidate block with non-zero variance".into()))
}
