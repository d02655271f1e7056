//! Windowed respiratory-rate estimation.
//!
//! Each analysis window is a Gaussian-tapered segment of the signal, rescaled
//! to `[0, 1]`, band-passed with a zero-phase elliptic filter and turned into
//! a power spectrum through its biased short-time autocorrelation. The rate
//! is the spectral peak inside the breathing band and the rSQI is the share
//! of spectral power that falls inside that band.

pub mod filter;

use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::respsig::RespirationSignal;
use crate::{Error, Result};

pub use filter::{ellip_bandpass, Biquad, Sos};

/// Smallest FFT length used for spectra.
pub const MIN_NFFT: usize = 4096;
/// Target spectral bin width, Hz.
pub const TARGET_RESOLUTION_HZ: f64 = 0.0025;
/// Spectrogram rows are emitted up to this frequency.
pub const SPECTROGRAM_MAX_HZ: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateParams {
    /// Lower edge of the breathing band, Hz.
    pub f_lo: f64,
    /// Upper edge of the breathing band, Hz.
    pub f_hi: f64,
    /// Half-length of the Gaussian window, s.
    pub t_max_hat: f64,
    /// Analysis window length, s.
    pub win_len: f64,
    pub win_overlap: f64,
    /// Gaussian standard deviation in samples; `None` picks a third of the
    /// half-length.
    pub gauss_sigma: Option<f64>,
    pub filter_order: usize,
    /// Pass-band ripple, dB.
    pub ripple_db: f64,
    /// Stop-band attenuation, dB.
    pub atten_db: f64,
}

impl Default for RateParams {
    fn default() -> Self {
        Self {
            f_lo: 0.1,
            f_hi: 0.85,
            t_max_hat: 10.0,
            win_len: 20.0,
            win_overlap: 15.0,
            gauss_sigma: None,
            filter_order: 3,
            ripple_db: 3.0,
            atten_db: 6.0,
        }
    }
}

impl RateParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.f_lo > 0.0 && self.f_lo < self.f_hi) {
            return bad(format!("band must satisfy 0 < f_lo < f_hi, got {}:{}", self.f_lo, self.f_hi));
        }
        if !(self.win_len > 0.0 && self.win_overlap >= 0.0 && self.win_overlap < self.win_len) {
            return bad(format!(
                "window overlap {} must lie in [0, {})",
                self.win_overlap, self.win_len
            ));
        }
        if !(self.t_max_hat > 0.0) {
            return bad(format!("t_max_hat must be positive, got {}", self.t_max_hat));
        }
        if let Some(s) = self.gauss_sigma {
            if !(s > 0.0) {
                return bad(format!("gauss_sigma must be positive, got {s}"));
            }
        }
        if self.filter_order == 0 || !(self.ripple_db > 0.0) || !(self.atten_db > self.ripple_db) {
            return bad("filter needs order >= 1 and attenuation above ripple".into());
        }
        Ok(())
    }

    pub fn hop(&self) -> f64 {
        self.win_len - self.win_overlap
    }

    /// Samples on each side of the window center.
    pub fn half_len(&self, fs: f64) -> usize {
        (self.t_max_hat * fs).round() as usize
    }

    pub fn sigma_samples(&self, fs: f64) -> f64 {
        self.gauss_sigma.unwrap_or(self.t_max_hat * fs / 3.0)
    }

    pub fn design(&self, fs: f64) -> Result<Sos> {
        ellip_bandpass(
            self.filter_order,
            self.ripple_db,
            self.atten_db,
            (self.f_lo, self.f_hi),
            fs,
        )
    }
}

/// Gaussian-weighted segment of `signal` centered on `center`, zero-padded
/// where it runs past either end. Length `2 * half_len + 1`.
pub fn gaussian_window(signal: &[f64], center: usize, fs: f64, params: &RateParams) -> Vec<f64> {
    let half = params.half_len(fs) as i64;
    let sigma = params.sigma_samples(fs);
    (-half..=half)
        .map(|k| {
            let idx = center as i64 + k;
            if idx < 0 || idx >= signal.len() as i64 {
                return 0.0;
            }
            let g = (-0.5 * (k as f64 / sigma).powi(2)).exp();
            signal[idx as usize] * g
        })
        .collect()
}

/// Zero-phase band-pass of a whole signal.
pub fn bandpass(signal: &[f64], fs: f64, params: &RateParams) -> Result<Vec<f64>> {
    params.design(fs)?.filtfilt(signal)
}

/// One-sided power spectrum on a uniform frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Bin width, Hz.
    pub df: f64,
    /// Power at `k * df` for `k = 0..=nfft/2`.
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn freq(&self, k: usize) -> f64 {
        k as f64 * self.df
    }

    fn band_bins(&self, lo: f64, hi: f64) -> std::ops::RangeInclusive<usize> {
        let a = (lo / self.df - 1e-9).ceil().max(0.0) as usize;
        let b = ((hi / self.df + 1e-9).floor() as usize).min(self.power.len() - 1);
        a..=b
    }
}

pub fn nfft_for(len: usize, fs: f64) -> usize {
    let need = (2 * len).saturating_sub(1).max(1);
    let res = (fs / TARGET_RESOLUTION_HZ).ceil() as usize;
    MIN_NFFT.max(need.next_power_of_two()).max(res.next_power_of_two())
}

/// Power spectrum of `w` via its biased autocorrelation.
pub struct SpectrumEstimator {
    nfft: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl SpectrumEstimator {
    pub fn new(window_len: usize, fs: f64) -> Self {
        let nfft = nfft_for(window_len, fs);
        let mut planner = FftPlanner::new();
        Self {
            nfft,
            forward: planner.plan_fft_forward(nfft),
            inverse: planner.plan_fft_inverse(nfft),
        }
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    /// Biased autocorrelation `r[l] = sum_n w[n] w[n + l] / L` for
    /// `l = 0..L`.
    pub fn autocorrelation(&self, w: &[f64]) -> Vec<f64> {
        let l = w.len();
        let mut buf: Vec<Complex64> = w.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(self.nfft, Complex64::new(0.0, 0.0));
        self.forward.process(&mut buf);
        for v in buf.iter_mut() {
            *v = Complex64::new(v.norm_sqr(), 0.0);
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / (self.nfft as f64 * l as f64);
        buf[..l].iter().map(|v| v.re * scale).collect()
    }

    /// Fourier transform of the two-sided autocorrelation, one-sided part.
    pub fn spectrum(&self, w: &[f64], fs: f64) -> Spectrum {
        let r = self.autocorrelation(w);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.nfft];
        buf[0] = Complex64::new(r[0], 0.0);
        for (lag, &v) in r.iter().enumerate().skip(1) {
            buf[lag] = Complex64::new(v, 0.0);
            buf[self.nfft - lag] = Complex64::new(v, 0.0);
        }
        self.forward.process(&mut buf);
        Spectrum {
            df: fs / self.nfft as f64,
            power: buf[..=self.nfft / 2].iter().map(|v| v.re).collect(),
        }
    }
}

/// Power spectrum of `w` via its biased autocorrelation.
pub fn psd(w: &[f64], fs: f64) -> Spectrum {
    SpectrumEstimator::new(w.len(), fs).spectrum(w, fs)
}

/// Frequency of the largest spectral value inside the breathing band.
pub fn spectrum_peak(s: &Spectrum, params: &RateParams) -> Option<f64> {
    s.band_bins(params.f_lo, params.f_hi)
        .filter(|&k| s.power[k].is_finite())
        .max_by(|&a, &b| s.power[a].total_cmp(&s.power[b]).then(b.cmp(&a)))
        .map(|k| s.freq(k))
}

/// In-band share of the one-sided spectral power, in `[0, 1]`.
pub fn rsqi_of(s: &Spectrum, params: &RateParams) -> Option<f64> {
    let total: f64 = s.power.iter().map(|p| p.max(0.0)).sum();
    if !(total > 0.0) {
        return None;
    }
    let band: f64 = s
        .band_bins(params.f_lo, params.f_hi)
        .map(|k| s.power[k].max(0.0))
        .sum();
    Some((band / total).clamp(0.0, 1.0))
}

/// Outcome of one analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowAnalysis {
    pub f_peak: f64,
    pub rsqi: f64,
    pub spectrum: Spectrum,
}

/// Rate analysis at a fixed sampling rate; the filter and FFT plans are
/// built once.
pub struct RateEstimator {
    params: RateParams,
    fs: f64,
    sos: Sos,
    spectra: SpectrumEstimator,
}

impl RateEstimator {
    pub fn new(params: RateParams, fs: f64) -> Result<Self> {
        params.validate()?;
        let sos = params.design(fs)?;
        let len = 2 * params.half_len(fs) + 1;
        if len <= sos.padlen() {
            return Err(Error::Config(format!(
                "analysis window of {len} samples is too short for the band-pass filter"
            )));
        }
        Ok(Self {
            params,
            fs,
            sos,
            spectra: SpectrumEstimator::new(len, fs),
        })
    }

    pub fn params(&self) -> &RateParams {
        &self.params
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn sos(&self) -> &Sos {
        &self.sos
    }

    /// Feature-scale, filter and analyze an already windowed segment.
    /// `None` for a degenerate (constant) window.
    pub fn analyze_segment(&self, w: &[f64]) -> Option<WindowAnalysis> {
        let (lo, hi) = w
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let range = hi - lo;
        if !(range > 1e-12 * hi.abs().max(lo.abs()).max(1e-300)) {
            return None;
        }
        let scaled: Vec<f64> = w.iter().map(|v| (v - lo) / range).collect();
        let filtered = self.sos.filtfilt(&scaled).ok()?;
        let spectrum = self.spectra.spectrum(&filtered, self.fs);
        let rsqi = rsqi_of(&spectrum, &self.params)?;
        let f_peak = spectrum_peak(&spectrum, &self.params)?;
        Some(WindowAnalysis {
            f_peak,
            rsqi,
            spectrum,
        })
    }

    /// Analyze the window centered on sample `center`. A constant stretch of
    /// signal is degenerate even though its tapered copy is not.
    pub fn analyze_at(&self, samples: &[f64], center: usize) -> Option<WindowAnalysis> {
        let half = self.params.half_len(self.fs);
        let lo = center.saturating_sub(half).min(samples.len());
        let hi = (center + half + 1).min(samples.len());
        let raw = &samples[lo..hi];
        let first = *raw.first()?;
        if raw.iter().all(|&v| (v - first).abs() <= 1e-12 * first.abs().max(1.0)) {
            return None;
        }
        self.analyze_segment(&gaussian_window(samples, center, self.fs, &self.params))
    }
}

/// Peak frequency and spectrum of a windowed segment; `None` when the window
/// is degenerate.
pub fn psd_peak(w: &[f64], fs: f64, params: &RateParams) -> Result<Option<(f64, Spectrum)>> {
    let est = RateEstimator::new(*params, fs)?;
    Ok(est.analyze_segment(w).map(|a| (a.f_peak, a.spectrum)))
}

/// rSQI of a windowed segment; `None` when the window is degenerate.
pub fn rsqi(w: &[f64], fs: f64, params: &RateParams) -> Result<Option<f64>> {
    let est = RateEstimator::new(*params, fs)?;
    Ok(est.analyze_segment(w).map(|a| a.rsqi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEntry {
    pub t_center: f64,
    /// Breaths per minute; `NaN` when invalid.
    pub bpm: f64,
    pub rsqi: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateSeries {
    pub entries: Vec<RateEntry>,
}

impl RateSeries {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn valid_bpm(&self) -> Vec<f64> {
        self.entries.iter().filter(|e| e.valid).map(|e| e.bpm).collect()
    }

    pub const CSV_HEADER: &'static str = "t_center,bpm,rsqi,valid";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for e in &self.entries {
            writeln!(out, "{},{},{},{}", e.t_center, e.bpm, e.rsqi, u8::from(e.valid))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Format(format!("rates csv: {e}")))?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("rates csv line {}: {line:?}", lineno + 1));
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            entries.push(RateEntry {
                t_center: num(cols[0])?,
                bpm: num(cols[1])?,
                rsqi: num(cols[2])?,
                valid: match cols[3] {
                    "1" => true,
                    "0" => false,
                    _ => return Err(bad()),
                },
            });
        }
        Ok(Self { entries })
    }
}

/// Time-frequency power of every analysis window, up to
/// [`SPECTROGRAM_MAX_HZ`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Spectrogram {
    pub times: Vec<f64>,
    pub df: f64,
    /// `power[window][bin]`; empty rows for degenerate windows.
    pub power: Vec<Vec<f64>>,
}

impl Spectrogram {
    pub const CSV_HEADER: &'static str = "t,f,power";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for (t, row) in self.times.iter().zip(&self.power) {
            for (k, p) in row.iter().enumerate() {
                writeln!(out, "{t},{},{p}", k as f64 * self.df)?;
            }
        }
        Ok(())
    }
}

/// Window center times (relative to the first sample) for `n` samples at `fs`.
pub fn window_centers(n: usize, fs: f64, params: &RateParams) -> Vec<f64> {
    let duration = n as f64 / fs;
    let half = params.win_len / 2.0;
    let hop = params.hop();
    (0..)
        .map(|k| half + k as f64 * hop)
        .take_while(|c| c + half <= duration + 1e-9)
        .collect()
}

/// Rates plus the per-window spectra.
pub fn analyze(signal: &RespirationSignal, params: &RateParams) -> Result<(RateSeries, Spectrogram)> {
    let est = RateEstimator::new(*params, signal.fs)?;
    let duration = signal.len() as f64 / signal.fs;
    if duration + 1e-9 < params.win_len {
        return Err(Error::Argument(format!(
            "signal of {duration:.2} s is shorter than one {} s window",
            params.win_len
        )));
    }
    let centers = window_centers(signal.len(), signal.fs, params);
    let results: Vec<(RateEntry, Vec<f64>)> = centers
        .par_iter()
        .map(|&c| {
            let idx = (c * signal.fs).round() as usize;
            let t_center = signal.t0 + c;
            match est.analyze_at(&signal.samples, idx) {
                Some(a) => {
                    let keep = ((SPECTROGRAM_MAX_HZ / a.spectrum.df).floor() as usize + 1)
                        .min(a.spectrum.power.len());
                    (
                        RateEntry {
                            t_center,
                            bpm: 60.0 * a.f_peak,
                            rsqi: a.rsqi,
                            valid: true,
                        },
                        a.spectrum.power[..keep].to_vec(),
                    )
                }
                None => (
                    RateEntry {
                        t_center,
                        bpm: f64::NAN,
                        rsqi: 0.0,
                        valid: false,
                    },
                    Vec::new(),
                ),
            }
        })
        .collect();
    let mut series = RateSeries::default();
    let mut spec = Spectrogram {
        df: signal.fs / est.spectra.nfft() as f64,
        ..Default::default()
    };
    for (entry, row) in results {
        spec.times.push(entry.t_center);
        spec.power.push(row);
        series.entries.push(entry);
    }
    Ok((series, spec))
}

/// Windowed rate estimates of a signal.
pub fn estimate_rates(signal: &RespirationSignal, params: &RateParams) -> Result<RateSeries> {
    analyze(signal, params).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::respsig::SignalMethod;
    use std::f64::consts::PI;

    fn sine(f: f64, fs: f64, n: usize, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|i| 0.5 + 0.5 * (2.0 * PI * f * i as f64 / fs + phase).sin())
            .collect()
    }

    #[test]
    fn window_shape() {
        let p = RateParams::default();
        let w = gaussian_window(&[1.0; 400], 200, 9.0, &p);
        assert_eq!(w.len(), 181);
        assert_eq!(w[90], 1.0);
        for k in 0..90 {
            assert_eq!(w[k], w[180 - k]);
            assert!(w[k] < w[k + 1]);
        }
        let v: Vec<f64> = (0..400).map(|i| i as f64).collect();
        assert_eq!(gaussian_window(&v, 200, 9.0, &p)[90], 200.0);
        let edge = gaussian_window(&[1.0; 400], 10, 9.0, &p);
        assert!(edge[..80].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sinusoid_peaks_without_filter_within_one_bin() {
        let p = RateParams::default();
        for f in [0.25, 0.5] {
            let w = gaussian_window(&sine(f, 9.0, 181, 0.3), 90, 9.0, &p);
            let s = psd(&w, 9.0);
            let peak = spectrum_peak(&s, &p).unwrap();
            assert!((peak - f).abs() <= s.df, "{f}: {peak}");
        }
    }

    /// Peak of a Gaussian line at `f0` shaped by the forward-backward filter
    /// power response, on the same bin grid.
    fn filtered_line_peak(f0: f64, fs: f64, p: &RateParams, df: f64) -> f64 {
        let sos = p.design(fs).unwrap();
        let sigma_t = p.sigma_samples(fs) / fs;
        let mut best = (0.0, f64::NEG_INFINITY);
        let mut k = (p.f_lo / df).ceil() as usize;
        while k as f64 * df <= p.f_hi {
            let f = k as f64 * df;
            let line = -4.0 * PI * PI * sigma_t * sigma_t * (f - f0).powi(2);
            let gain = 4.0 * sos.response(f, fs).norm().ln();
            if line + gain > best.1 {
                best = (f, line + gain);
            }
            k += 1;
        }
        best.0
    }

    #[test]
    fn sinusoid_peaks_match_filtered_line_oracle() {
        let p = RateParams::default();
        let est = RateEstimator::new(p, 9.0).unwrap();
        for f in [0.2, 0.25, 0.3, 0.5] {
            for phase in [0.0, 0.3, 1.0, 2.0] {
                let a = est.analyze_at(&sine(f, 9.0, 181, phase), 90).unwrap();
                let oracle = filtered_line_peak(f, 9.0, &p, a.spectrum.df);
                assert!(
                    (a.f_peak - oracle).abs() <= a.spectrum.df + 1e-12,
                    "{f}/{phase}: {} vs {oracle}",
                    a.f_peak
                );
                // The pass-band slope moves the peak by under half a breath per minute.
                assert!((a.f_peak - f).abs() * 60.0 < 0.5);
            }
        }
        assert!(est.analyze_at(&[2.0; 181], 90).is_none());
        assert!(est.analyze_segment(&[2.0; 181]).is_none());
    }

    #[test]
    fn psd_is_real_and_nonnegative() {
        let w: Vec<f64> = (0..181).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let s = psd(&w, 9.0);
        let max = s.power.iter().cloned().fold(0.0, f64::max);
        assert!(s.power.iter().all(|&p| p >= -1e-9 * max));
        // Wiener-Khinchin: equals |W(f)|^2 / L.
        let l = w.len() as f64;
        for k in [0, 17, 300, 2048] {
            let f = s.freq(k);
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in w.iter().enumerate() {
                let a = 2.0 * PI * f * n as f64 / 9.0;
                re += v * a.cos();
                im -= v * a.sin();
            }
            let direct = (re * re + im * im) / l;
            assert!((s.power[k] - direct).abs() < 1e-9 * max.max(1.0));
        }
    }

    #[test]
    fn rsqi_examples() {
        let p = RateParams::default();
        let est = RateEstimator::new(p, 9.0).unwrap();
        let inband = est.analyze_at(&sine(0.3, 9.0, 181, 0.0), 90).unwrap().rsqi;
        assert!(inband >= 0.95, "{inband}");
        let out = est.analyze_at(&sine(3.0, 9.0, 181, 0.0), 90).unwrap().rsqi;
        assert!(out <= 0.2, "{out}");
    }

    #[test]
    fn window_count_for_two_minutes() {
        let p = RateParams::default();
        let c = window_centers(1080, 9.0, &p);
        assert_eq!(c.len(), 21);
        assert_eq!(c[0], 10.0);
        assert_eq!(c[20], 110.0);
    }

    #[test]
    fn constant_rate_series() {
        let sig =
            RespirationSignal::new(sine(0.25, 9.0, 1080, 0.0), 9.0, SignalMethod::Voxel, 0.0)
                .unwrap();
        let r = estimate_rates(&sig, &RateParams::default()).unwrap();
        assert_eq!(r.len(), 21);
        for e in &r.entries {
            assert!(e.valid);
            assert!((e.bpm - 15.0).abs() < 0.5, "{}", e.bpm);
        }
    }

    #[test]
    fn short_signal_is_rejected() {
        let sig = RespirationSignal::new(vec![0.0; 100], 9.0, SignalMethod::Voxel, 0.0).unwrap();
        assert!(matches!(
            estimate_rates(&sig, &RateParams::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn dc_is_rejected_by_bandpass() {
        let x = vec![1.0; 2000];
        let y = bandpass(&x, 9.0, &RateParams::default()).unwrap();
        assert!(y[100..1900].iter().all(|v| v.abs() < 0.01));
    }

    #[test]
    fn rates_csv_round_trip() {
        let s = RateSeries {
            entries: vec![
                RateEntry {
                    t_center: 10.0,
                    bpm: 15.25,
                    rsqi: 0.99,
                    valid: true,
                },
                RateEntry {
                    t_center: 15.0,
                    bpm: f64::NAN,
                    rsqi: 0.0,
                    valid: false,
                },
            ],
        };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = RateSeries::read_csv(&buf[..]).unwrap();
        assert_eq!(back.entries[0], s.entries[0]);
        assert!(back.entries[1].bpm.is_nan() && !back.entries[1].valid);
    }
}
