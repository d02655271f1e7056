//! Agreement between estimated and reference respiration.
//!
//! Waveforms are brought to a common 256 Hz grid, synchronized once per
//! trial at the lag of maximum cross-correlation, and their windowed rates
//! compared with Bland-Altman statistics, RMSE and Pearson correlation.

use std::fmt::Write as _;
use std::io::Write;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::frames::REFERENCE_FS;
use crate::rate::{estimate_rates, RateParams, RateSeries};
use crate::respsig::{resample_256, RespirationSignal};
use crate::stats;
use crate::{Error, Result};

/// Default rSQI exclusion threshold on the reference side.
pub const DEFAULT_RSQI_CUTOFF: f64 = 0.9825;
/// Minimum overlap kept after alignment, s.
pub const MIN_OVERLAP_S: f64 = 20.0;

/// Two equally sampled waveforms trimmed to their common support.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub reference: RespirationSignal,
    pub estimate: RespirationSignal,
    /// Samples by which the estimate lags the reference:
    /// `estimate[n] ~ reference[n - lag]`.
    pub lag: i64,
    /// Normalized correlation at `lag`.
    pub correlation: f64,
}

/// Largest synchronization offset searched, s.
pub const MAX_LAG_S: f64 = 10.0;

/// Half-width of the refinement search around the coarse lag, s.
pub const REFINE_S: f64 = 0.25;

/// Width of the centered moving average used against wide-band noise, s.
pub const SMOOTH_S: f64 = 0.25;

/// Centered moving average of `2 * half + 1` samples, shrinking at the ends.
pub fn box_smooth(x: &[f64], half: usize) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix[prefix.len() - 1] + v);
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Correlation of two series at one lag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagScore {
    /// `estimate[n] ~ reference[n - lag]`.
    pub lag: i64,
    /// Raw cross-correlation `sum reference[i] * estimate[i + lag]`.
    pub xcorr: f64,
    /// Pearson correlation over the overlap.
    pub pearson: f64,
    /// Common samples at this lag.
    pub overlap: usize,
}

impl LagScore {
    /// Evidence for this lag: the Fisher z of the correlation scaled by the
    /// square root of the overlap. A near-perfect match wins over a longer
    /// but weaker one, and exact ties go to the longer overlap.
    pub fn strength(&self) -> f64 {
        if !self.pearson.is_finite() {
            return f64::NEG_INFINITY;
        }
        let r = self.pearson.clamp(-1.0, 1.0 - 1e-12);
        r.atanh() * (self.overlap as f64).sqrt()
    }
}

/// Cross-correlation and per-lag Pearson correlation for every lag leaving
/// at least `min_overlap` common samples.
pub fn lag_scores(reference: &[f64], estimate: &[f64], min_overlap: usize) -> Vec<LagScore> {
    let (n, m) = (reference.len(), estimate.len());
    let min_overlap = min_overlap.max(2);
    if n.min(m) < min_overlap {
        return Vec::new();
    }
    let size = (n + m - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let load = |x: &[f64]| {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(size, Complex64::new(0.0, 0.0));
        buf
    };
    let mut fa = load(reference);
    let mut fb = load(estimate);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    let mut cross: Vec<Complex64> = fb.iter().zip(&fa).map(|(b, a)| b * a.conj()).collect();
    inv.process(&mut cross);
    let scale = 1.0 / size as f64;

    let prefix = |x: &[f64], sq: bool| {
        let mut out = Vec::with_capacity(x.len() + 1);
        out.push(0.0);
        let mut acc = 0.0;
        for &v in x {
            acc += if sq { v * v } else { v };
            out.push(acc);
        }
        out
    };
    let (ca, ca2) = (prefix(reference, false), prefix(reference, true));
    let (cb, cb2) = (prefix(estimate, false), prefix(estimate, true));

    let mut out = Vec::new();
    for lag in -(n as i64 - 1)..(m as i64) {
        let i0 = 0.max(-lag) as usize;
        let i1 = (n as i64).min(m as i64 - lag) as usize;
        if i1 <= i0 || i1 - i0 < min_overlap {
            continue;
        }
        let len = (i1 - i0) as f64;
        let (j0, j1) = ((i0 as i64 + lag) as usize, (i1 as i64 + lag) as usize);
        let sa = ca[i1] - ca[i0];
        let sa2 = ca2[i1] - ca2[i0];
        let sb = cb[j1] - cb[j0];
        let sb2 = cb2[j1] - cb2[j0];
        let idx = if lag >= 0 { lag as usize } else { size - (-lag) as usize };
        let xcorr = cross[idx].re * scale;
        let den = ((sa2 - sa * sa / len) * (sb2 - sb * sb / len)).sqrt();
        let pearson = if den > 0.0 { (xcorr - sa * sb / len) / den } else { f64::NAN };
        out.push(LagScore {
            lag,
            xcorr,
            pearson,
            overlap: i1 - i0,
        });
    }
    out
}

/// Refine `coarse` to the best per-lag Pearson correlation within `refine`
/// samples. Returns `(lag, correlation)`.
pub fn refine_lag(scores: &[LagScore], coarse: i64, refine: usize) -> Option<(i64, f64)> {
    scores
        .iter()
        .filter(|s| (s.lag - coarse).unsigned_abs() as usize <= refine && s.pearson.is_finite())
        .max_by(|a, b| a.pearson.total_cmp(&b.pearson))
        .map(|s| (s.lag, s.pearson))
}

/// Lag of maximal [`LagScore::strength`], refined on the per-lag Pearson
/// correlation within `refine` samples.
pub fn best_lag(
    reference: &[f64],
    estimate: &[f64],
    min_overlap: usize,
    refine: usize,
) -> Option<(i64, f64)> {
    let scores = lag_scores(reference, estimate, min_overlap);
    let coarse = scores.iter().max_by(|a, b| a.strength().total_cmp(&b.strength()))?.lag;
    refine_lag(&scores, coarse, refine)
}

/// Resample both signals to 256 Hz, synchronize them at the maximum of the
/// cross-correlation and trim to the overlap. Correlation runs on the
/// band-passed waveforms of the default breathing band.
pub fn macc_align(reference: &RespirationSignal, estimate: &RespirationSignal) -> Result<AlignedPair> {
    macc_align_with(reference, estimate, &RateParams::default())
}

/// [`macc_align`] with the band-pass of `params`, so that steps and drift
/// do not drive the synchronization.
pub fn macc_align_with(
    reference: &RespirationSignal,
    estimate: &RespirationSignal,
    params: &RateParams,
) -> Result<AlignedPair> {
    let to_ref = |s: &RespirationSignal| {
        if (s.fs - REFERENCE_FS).abs() < 1e-9 {
            Ok(s.clone())
        } else {
            resample_256(s)
        }
    };
    let a = to_ref(reference)?;
    let b = to_ref(estimate)?;
    let sos = params.design(REFERENCE_FS)?;
    let demean = |x: &[f64]| {
        let m = stats::mean(x).unwrap_or(0.0);
        x.iter().map(|v| v - m).collect::<Vec<f64>>()
    };
    let min_overlap = (MIN_OVERLAP_S * REFERENCE_FS).ceil() as usize;
    let refine = (REFINE_S * REFERENCE_FS).round() as usize;
    let fail = || {
        Error::Alignment(format!(
            "signals of {:.1} s and {:.1} s cannot overlap by {MIN_OVERLAP_S} s within {MAX_LAG_S} s of their start offset",
            a.len() as f64 / REFERENCE_FS,
            b.len() as f64 / REFERENCE_FS
        ))
    };
    let (ra, rb) = (demean(&a.samples), demean(&b.samples));
    let raw = lag_scores(&ra, &rb, min_overlap);
    let half = (SMOOTH_S * REFERENCE_FS / 2.0).round() as usize;
    let smooth = lag_scores(&box_smooth(&ra, half), &box_smooth(&rb, half), min_overlap);
    let filtered = lag_scores(&sos.filtfilt(&ra)?, &sos.filtfilt(&rb)?, min_overlap);
    // band-passed evidence resists steps and drift, smoothed evidence
    // resists wide-band noise, and raw evidence is exact on clean input;
    // neither of the last two carries long filter transients at the ends
    let evidence: Vec<f64> = (0..raw.len())
        .map(|i| {
            raw[i].strength().max(0.0) + smooth[i].strength().max(0.0) + filtered[i].strength().max(0.0)
        })
        .collect();
    let best = |keep: &dyn Fn(i64) -> bool| {
        (0..raw.len())
            .filter(|&i| keep(raw[i].lag))
            .max_by(|&i, &j| evidence[i].total_cmp(&evidence[j]))
    };
    // lags are searched around the offset implied by the start times
    let nominal = -((b.t0 - a.t0) * REFERENCE_FS).round() as i64;
    let max_lag = (MAX_LAG_S * REFERENCE_FS).round() as u64;
    let coarse = raw[best(&|l| (l - nominal).unsigned_abs() <= max_lag).ok_or_else(fail)?].lag;
    let pick = best(&|l| (l - coarse).unsigned_abs() as usize <= refine).ok_or_else(fail)?;
    let (lag, correlation) = (raw[pick].lag, raw[pick].pearson);
    let (n, m) = (a.len() as i64, b.len() as i64);
    let i0 = 0.max(-lag);
    let i1 = n.min(m - lag);
    let slice = |s: &RespirationSignal, lo: i64, hi: i64| -> Result<RespirationSignal> {
        let (lo, hi) = (lo as usize, hi as usize);
        let mut out =
            RespirationSignal::new(s.samples[lo..hi].to_vec(), s.fs, s.method, s.time(lo))?;
        out.flags = s.flags[lo..hi].to_vec();
        Ok(out)
    };
    Ok(AlignedPair {
        reference: slice(&a, i0, i1)?,
        estimate: slice(&b, i0 + lag, i1 + lag)?,
        lag,
        correlation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Mean of `est - ref`, BPM.
    pub bias: f64,
    pub loa_lo: f64,
    pub loa_hi: f64,
    /// Sample standard deviation of the differences.
    pub sd: f64,
    pub rmse: f64,
    /// `None` when either side has zero variance.
    pub pearson_r: Option<f64>,
    pub n_windows: usize,
    pub rsqi_cutoff: f64,
}

/// One window of a ref/est comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePair {
    pub t_center: f64,
    pub reference: f64,
    pub estimate: f64,
    pub ref_rsqi: f64,
    pub est_rsqi: f64,
    pub included: bool,
}

/// Pair windows and apply the validity and rSQI exclusion rules.
pub fn pair_rates(
    reference: &RateSeries,
    estimate: &RateSeries,
    rsqi_cutoff: f64,
) -> Result<Vec<RatePair>> {
    if reference.len() != estimate.len() {
        return Err(Error::Argument(format!(
            "rate series differ in length ({} vs {})",
            reference.len(),
            estimate.len()
        )));
    }
    reference
        .entries
        .iter()
        .zip(&estimate.entries)
        .map(|(r, e)| {
            if (r.t_center - e.t_center).abs() > 1e-6 {
                return Err(Error::Argument(format!(
                    "window centers differ ({} vs {})",
                    r.t_center, e.t_center
                )));
            }
            Ok(RatePair {
                t_center: r.t_center,
                reference: r.bpm,
                estimate: e.bpm,
                ref_rsqi: r.rsqi,
                est_rsqi: e.rsqi,
                included: r.valid && e.valid && r.rsqi >= rsqi_cutoff,
            })
        })
        .collect()
}

/// Bland-Altman, RMSE and Pearson statistics over paired values.
pub fn agreement_of(reference: &[f64], estimate: &[f64], rsqi_cutoff: f64) -> Result<AgreementReport> {
    let n = reference.len();
    if n != estimate.len() {
        return Err(Error::Argument("paired series differ in length".into()));
    }
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "agreement needs at least 3 windows, {n} survived"
        )));
    }
    let diffs: Vec<f64> = estimate.iter().zip(reference).map(|(e, r)| e - r).collect();
    let bias = diffs.iter().sum::<f64>() / n as f64;
    let sd = (diffs.iter().map(|d| (d - bias).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let rmse = (diffs.iter().map(|d| d * d).sum::<f64>() / n as f64).sqrt();
    Ok(AgreementReport {
        bias,
        loa_lo: bias - 1.96 * sd,
        loa_hi: bias + 1.96 * sd,
        sd,
        rmse,
        pearson_r: stats::pearson(reference, estimate),
        n_windows: n,
        rsqi_cutoff,
    })
}

/// Agreement of two rate series sharing window centers.
pub fn agreement(
    reference: &RateSeries,
    estimate: &RateSeries,
    rsqi_cutoff: f64,
) -> Result<AgreementReport> {
    let pairs = pair_rates(reference, estimate, rsqi_cutoff)?;
    let (r, e): (Vec<f64>, Vec<f64>) = pairs
        .iter()
        .filter(|p| p.included)
        .map(|p| (p.reference, p.estimate))
        .unzip();
    agreement_of(&r, &e, rsqi_cutoff)
}

/// Pooled statistics over several trials plus each trial's correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledReport {
    pub pooled: AgreementReport,
    pub per_trial_r: Vec<Option<f64>>,
}

pub fn pooled_agreement(trials: &[(RateSeries, RateSeries)], rsqi_cutoff: f64) -> Result<PooledReport> {
    let mut all_r = Vec::new();
    let mut all_e = Vec::new();
    let mut per_trial_r = Vec::with_capacity(trials.len());
    for (reference, estimate) in trials {
        let pairs = pair_rates(reference, estimate, rsqi_cutoff)?;
        let (r, e): (Vec<f64>, Vec<f64>) = pairs
            .iter()
            .filter(|p| p.included)
            .map(|p| (p.reference, p.estimate))
            .unzip();
        per_trial_r.push(stats::pearson(&r, &e));
        all_r.extend(r);
        all_e.extend(e);
    }
    Ok(PooledReport {
        pooled: agreement_of(&all_r, &all_e, rsqi_cutoff)?,
        per_trial_r,
    })
}

/// Everything produced when comparing one estimate with its reference.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub aligned: AlignedPair,
    pub ref_rates: RateSeries,
    pub est_rates: RateSeries,
    pub pairs: Vec<RatePair>,
    pub report: AgreementReport,
}

/// Align, estimate rates on both 256 Hz waveforms and compare them.
pub fn evaluate(
    reference: &RespirationSignal,
    estimate: &RespirationSignal,
    params: &RateParams,
    rsqi_cutoff: f64,
) -> Result<Evaluation> {
    let aligned = macc_align_with(reference, estimate, params)?;
    let ref_rates = estimate_rates(&aligned.reference, params)?;
    let est_rates = estimate_rates(&aligned.estimate, params)?;
    // Report windows on the reference time axis.
    let est_rates = RateSeries {
        entries: est_rates
            .entries
            .iter()
            .zip(&ref_rates.entries)
            .map(|(e, r)| crate::rate::RateEntry {
                t_center: r.t_center,
                ..*e
            })
            .collect(),
    };
    let pairs = pair_rates(&ref_rates, &est_rates, rsqi_cutoff)?;
    let report = agreement(&ref_rates, &est_rates, rsqi_cutoff)?;
    Ok(Evaluation {
        aligned,
        ref_rates,
        est_rates,
        pairs,
        report,
    })
}

pub const PAIRS_CSV_HEADER: &str = "t_center,ref_bpm,est_bpm,ref_rsqi,est_rsqi,included";

pub fn write_pairs_csv<W: Write>(pairs: &[RatePair], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{PAIRS_CSV_HEADER}")?;
    for p in pairs {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.t_center,
            p.reference,
            p.estimate,
            p.ref_rsqi,
            p.est_rsqi,
            u8::from(p.included)
        )?;
    }
    Ok(())
}

/// Bland-Altman scatter (mean vs difference) with bias and limit lines.
pub fn bland_altman_svg(pairs: &[RatePair], report: &AgreementReport) -> String {
    let pts: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|p| p.included)
        .map(|p| (0.5 * (p.reference + p.estimate), p.estimate - p.reference))
        .collect();
    let (w, h, m) = (640.0, 480.0, 60.0);
    let (mut x0, mut x1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 60.0);
    }
    if x1 - x0 < 1.0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let span = pts
        .iter()
        .map(|p| p.1.abs())
        .chain([report.loa_lo.abs(), report.loa_hi.abs(), 0.5])
        .fold(0.0, f64::max)
        * 1.2;
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h / 2.0 - y / span * (h / 2.0 - m);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        h - m,
        w - m,
        h - m
    );
    let _ = writeln!(svg, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    for (y, color, label) in [
        (report.bias, "blue", format!("bias {:.3}", report.bias)),
        (report.loa_hi, "red", format!("+1.96 SD {:.3}", report.loa_hi)),
        (report.loa_lo, "red", format!("-1.96 SD {:.3}", report.loa_lo)),
    ] {
        let yy = sy(y);
        let _ = writeln!(
            svg,
            r#"<line x1="{m}" y1="{yy:.2}" x2="{}" y2="{yy:.2}" stroke="{color}" stroke-dasharray="6,4"/>"#,
            w - m
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" font-size="11" fill="{color}" text-anchor="end">{label}</text>"#,
            w - m,
            yy - 4.0
        );
    }
    for (x, y) in &pts {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="black" fill-opacity="0.6"/>"#,
            sx(*x),
            sy(*y)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">mean of reference and estimate (BPM)</text>"#,
        w / 2.0,
        h - 20.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {})">estimate - reference (BPM)</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (val, label) in [(x0, x0), (x1, x1)] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" font-size="11" text-anchor="middle">{label:.1}</text>"#,
            sx(val),
            h - m + 16.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
