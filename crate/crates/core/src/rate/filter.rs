//! Elliptic (Cauer) IIR band-pass design, second-order sections and
//! zero-phase forward-backward filtering.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::{Error, Result};

/// One biquad `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

/// Analog prototype in zero-pole-gain form.
#[derive(Debug, Clone, PartialEq)]
pub struct Zpk {
    pub zeros: Vec<Complex64>,
    pub poles: Vec<Complex64>,
    pub gain: f64,
}

fn agm(mut a: f64, mut b: f64) -> f64 {
    for _ in 0..64 {
        if (a - b).abs() <= 1e-16 * a {
            break;
        }
        let m = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = m;
    }
    0.5 * (a + b)
}

/// Complete elliptic integral of the first kind, parameter `m = k^2`.
pub fn ellipk(m: f64) -> f64 {
    PI / (2.0 * agm(1.0, (1.0 - m).sqrt()))
}

/// `K(1 - p)`, accurate for small `p`.
pub fn ellipkm1(p: f64) -> f64 {
    PI / (2.0 * agm(1.0, p.sqrt()))
}

/// Jacobi elliptic functions `(sn, cn, dn)` of `u` with parameter `m`.
pub fn ellipj(u: f64, m: f64) -> (f64, f64, f64) {
    if m < 1e-9 {
        let t = u.sin();
        let b = u.cos();
        let ai = 0.25 * m * (u - t * b);
        return (t - ai * b, b + ai * t, 1.0 - 0.5 * m * t * t);
    }
    if m >= 0.999_999_999_9 {
        let ai = 0.25 * (1.0 - m);
        let b = u.cosh();
        let t = u.tanh();
        let phi = 1.0 / b;
        let twon = b * u.sinh();
        let sn = t + ai * (twon - u) / (b * b);
        let ai = ai * t * phi;
        return (sn, phi - ai * (twon - u), phi + ai * (twon + u));
    }
    let mut a = [0.0; 10];
    let mut c = [0.0; 10];
    a[0] = 1.0;
    let mut b = (1.0 - m).sqrt();
    c[0] = m.sqrt();
    let mut twon = 1.0;
    let mut i = 0;
    while (c[i] / a[i]).abs() > f64::EPSILON && i < 8 {
        let ai = a[i];
        i += 1;
        c[i] = 0.5 * (ai - b);
        let t = (ai * b).sqrt();
        a[i] = 0.5 * (ai + b);
        b = t;
        twon *= 2.0;
    }
    let mut phi = twon * a[i] * u;
    let mut prev = phi;
    while i > 0 {
        let t = c[i] * phi.sin() / a[i];
        prev = phi;
        phi = 0.5 * (t.asin() + phi);
        i -= 1;
    }
    let (sn, cn) = phi.sin_cos();
    (sn, cn, cn / (phi - prev).cos())
}

/// Solve the degree equation for the modulus of an order-`n` filter whose
/// selectivity parameter is `m1`.
fn ellipdeg(n: usize, m1: f64) -> f64 {
    let k1 = ellipk(m1);
    let k1p = ellipkm1(m1);
    let q1 = (-PI * k1p / k1).exp();
    let q = q1.powf(1.0 / n as f64);
    let num: f64 = (0..8).map(|m| q.powi((m * (m + 1)) as i32)).sum();
    let den = 1.0 + 2.0 * (1..9).map(|m| q.powi((m * m) as i32)).sum::<f64>();
    16.0 * q * (num / den).powi(4)
}

/// Imaginary part of the inverse `sc` function, via descending Landen
/// transforms on the imaginary axis.
fn arc_jac_sc1(w: f64, m: f64) -> f64 {
    let complement = |kx: f64| ((1.0 - kx) * (1.0 + kx)).sqrt();
    let mut ks = vec![m.sqrt()];
    while *ks.last().unwrap() != 0.0 && ks.len() < 16 {
        let kp = complement(*ks.last().unwrap());
        ks.push((1.0 - kp) / (1.0 + kp));
    }
    let kk = ks[1..].iter().map(|k| 1.0 + k).product::<f64>() * PI / 2.0;
    let mut y = w;
    for pair in ks.windows(2) {
        let (kn, knext) = (pair[0], pair[1]);
        y = 2.0 * y / ((1.0 + knext) * (1.0 + (1.0 + kn * kn * y * y).sqrt()));
    }
    kk * 2.0 / PI * y.asinh()
}

/// Normalized analog elliptic low-pass prototype.
pub fn ellipap(n: usize, rp: f64, rs: f64) -> Result<Zpk> {
    if n == 0 || !(rp > 0.0) || !(rs > rp) {
        return Err(Error::Config(format!(
            "invalid elliptic design: order {n}, ripple {rp} dB, attenuation {rs} dB"
        )));
    }
    let eps_sq = 10f64.powf(0.1 * rp) - 1.0;
    if n == 1 {
        let p = -(1.0 / eps_sq).sqrt();
        return Ok(Zpk {
            zeros: vec![],
            poles: vec![Complex64::new(p, 0.0)],
            gain: -p,
        });
    }
    let eps = eps_sq.sqrt();
    let ck1_sq = eps_sq / (10f64.powf(0.1 * rs) - 1.0);
    let val0 = ellipk(ck1_sq);
    let m = ellipdeg(n, ck1_sq);
    let capk = ellipk(m);

    let js: Vec<usize> = ((1 - n % 2)..n).step_by(2).collect();
    let sncd: Vec<(f64, f64, f64)> = js
        .iter()
        .map(|&j| ellipj(j as f64 * capk / n as f64, m))
        .collect();

    let mut zeros = Vec::new();
    for &(s, _, _) in &sncd {
        if s.abs() > f64::EPSILON {
            zeros.push(Complex64::new(0.0, 1.0 / (m.sqrt() * s)));
        }
    }
    let conj: Vec<Complex64> = zeros.iter().map(|z| z.conj()).collect();
    zeros.extend(conj);

    let r = arc_jac_sc1(1.0 / eps, ck1_sq);
    let v0 = capk * r / (n as f64 * val0);
    let (sv, cv, dv) = ellipj(v0, 1.0 - m);
    let mut poles: Vec<Complex64> = sncd
        .iter()
        .map(|&(s, c, d)| {
            -Complex64::new(c * d * sv * cv, s * dv) / (1.0 - (d * sv).powi(2))
        })
        .collect();
    let norm = poles.iter().map(|p| p.norm_sqr()).sum::<f64>().sqrt();
    let conj: Vec<Complex64> = poles
        .iter()
        .filter(|p| n % 2 == 0 || p.im.abs() > f64::EPSILON * norm)
        .map(|p| p.conj())
        .collect();
    poles.extend(conj);

    let num: Complex64 = poles.iter().map(|p| -p).product();
    let den: Complex64 = zeros.iter().map(|z| -z).product();
    let mut gain = (num / den).re;
    if n % 2 == 0 {
        gain /= (1.0 + eps_sq).sqrt();
    }
    Ok(Zpk { zeros, poles, gain })
}

/// Low-pass to band-pass transform around `wo` with bandwidth `bw`.
fn lp2bp(zpk: &Zpk, wo: f64, bw: f64) -> Zpk {
    let degree = zpk.poles.len() - zpk.zeros.len();
    let split = |xs: &[Complex64]| -> Vec<Complex64> {
        let lp: Vec<Complex64> = xs.iter().map(|x| x * bw / 2.0).collect();
        let mut out: Vec<Complex64> =
            lp.iter().map(|x| x + (x * x - wo * wo).sqrt()).collect();
        out.extend(lp.iter().map(|x| x - (x * x - wo * wo).sqrt()));
        out
    };
    let mut zeros = split(&zpk.zeros);
    zeros.extend(std::iter::repeat(Complex64::new(0.0, 0.0)).take(degree));
    Zpk {
        zeros,
        poles: split(&zpk.poles),
        gain: zpk.gain * bw.powi(degree as i32),
    }
}

fn bilinear(zpk: &Zpk, fs: f64) -> Zpk {
    let fs2 = Complex64::new(2.0 * fs, 0.0);
    let degree = zpk.poles.len() - zpk.zeros.len();
    let mut zeros: Vec<Complex64> = zpk.zeros.iter().map(|z| (fs2 + z) / (fs2 - z)).collect();
    zeros.extend(std::iter::repeat(Complex64::new(-1.0, 0.0)).take(degree));
    let poles = zpk.poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();
    let num: Complex64 = zpk.zeros.iter().map(|z| fs2 - z).product();
    let den: Complex64 = zpk.poles.iter().map(|p| fs2 - p).product();
    Zpk {
        zeros,
        poles,
        gain: zpk.gain * (num / den).re,
    }
}

/// Group roots into conjugate pairs and pairs of reals.
fn root_pairs(roots: &[Complex64]) -> Vec<(Complex64, Complex64)> {
    let scale = roots.iter().map(|r| r.norm()).fold(1.0, f64::max);
    let tol = 1e-10 * scale;
    let mut reals: Vec<f64> = roots.iter().filter(|r| r.im.abs() <= tol).map(|r| r.re).collect();
    reals.sort_by(|a, b| a.total_cmp(b));
    let mut out: Vec<(Complex64, Complex64)> = roots
        .iter()
        .filter(|r| r.im > tol)
        .map(|r| (*r, r.conj()))
        .collect();
    for pair in reals.chunks(2) {
        let a = Complex64::new(pair[0], 0.0);
        let b = pair.get(1).map_or(Complex64::new(0.0, 0.0), |&v| Complex64::new(v, 0.0));
        out.push((a, b));
    }
    out
}

fn zpk_to_sos(zpk: &Zpk) -> Result<Sos> {
    let mut zeros = zpk.zeros.clone();
    while zeros.len() < zpk.poles.len() {
        zeros.push(Complex64::new(0.0, 0.0));
    }
    let mut pole_groups = root_pairs(&zpk.poles);
    let mut zero_groups = root_pairs(&zeros);
    if pole_groups.len() != zero_groups.len() {
        return Err(Error::Config("cannot pair filter roots into sections".into()));
    }
    // Poles nearest the unit circle pick their closest zeros first and end up
    // in the last sections.
    pole_groups.sort_by(|a, b| a.0.norm().total_cmp(&b.0.norm()));
    let mut sections = Vec::with_capacity(pole_groups.len());
    for &(p1, p2) in pole_groups.iter().rev() {
        let (idx, _) = zero_groups
            .iter()
            .enumerate()
            .map(|(i, &(z1, z2))| (i, (z1 - p1).norm().min((z2 - p1).norm())))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("zero groups match pole groups");
        let (z1, z2) = zero_groups.swap_remove(idx);
        sections.push(Biquad {
            b: [1.0, -(z1 + z2).re, (z1 * z2).re],
            a: [1.0, -(p1 + p2).re, (p1 * p2).re],
        });
    }
    sections.reverse();
    for v in sections[0].b.iter_mut() {
        *v *= zpk.gain;
    }
    Ok(Sos { sections })
}

/// Band-pass elliptic design at sampling rate `fs`, band edges in Hz.
pub fn ellip_bandpass(order: usize, rp: f64, rs: f64, band: (f64, f64), fs: f64) -> Result<Sos> {
    let (lo, hi) = band;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::Config(format!("invalid pass band {lo}:{hi} Hz")));
    }
    if !(fs > 2.0 * hi) {
        return Err(Error::Config(format!(
            "sampling rate {fs} Hz must exceed twice the upper band edge {hi} Hz"
        )));
    }
    let proto = ellipap(order, rp, rs)?;
    // Pre-warp the edges on the normalized (fs = 2) scale.
    let warp = |f: f64| 4.0 * (PI * (2.0 * f / fs) / 2.0).tan();
    let (w1, w2) = (warp(lo), warp(hi));
    let analog = lp2bp(&proto, (w1 * w2).sqrt(), w2 - w1);
    zpk_to_sos(&bilinear(&analog, 2.0))
}

impl Sos {
    /// Complex response at frequency `f` Hz for sampling rate `fs`.
    pub fn response(&self, f: f64, fs: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * f / fs);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|s| (s.b[0] + s.b[1] * z1 + s.b[2] * z2) / (s.a[0] + s.a[1] * z1 + s.a[2] * z2))
            .product()
    }

    /// Magnitude response in dB.
    pub fn gain_db(&self, f: f64, fs: f64) -> f64 {
        20.0 * self.response(f, fs).norm().log10()
    }

    /// Direct-form II transposed filtering with optional initial states.
    pub fn filter(&self, x: &[f64], zi: Option<&[[f64; 2]]>) -> Vec<f64> {
        let mut y = x.to_vec();
        for (i, s) in self.sections.iter().enumerate() {
            let [mut z0, mut z1] = zi.map_or([0.0, 0.0], |z| z[i]);
            for v in y.iter_mut() {
                let xn = *v;
                let yn = s.b[0] * xn + z0;
                z0 = s.b[1] * xn - s.a[1] * yn + z1;
                z1 = s.b[2] * xn - s.a[2] * yn;
                *v = yn;
            }
        }
        y
    }

    /// Per-section initial states for a unit step steady state.
    pub fn step_zi(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let b0 = s.b[1] - s.a[1] * s.b[0];
                let b1 = s.b[2] - s.a[2] * s.b[0];
                let z0 = (b0 + b1) / (1.0 + s.a[1] + s.a[2]);
                let z1 = b1 - s.a[2] * z0;
                let zi = [scale * z0, scale * z1];
                scale *= s.b.iter().sum::<f64>() / s.a.iter().sum::<f64>();
                zi
            })
            .collect()
    }

    /// Edge padding used by [`Sos::filtfilt`].
    pub fn padlen(&self) -> usize {
        let n = self.sections.len();
        let zb = self.sections.iter().filter(|s| s.b[2] == 0.0).count();
        let za = self.sections.iter().filter(|s| s.a[2] == 0.0).count();
        3 * (2 * n + 1 - zb.min(za))
    }

    /// Zero-phase forward-backward filtering with odd-symmetric edge
    /// extension and steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pad = self.padlen();
        let n = x.len();
        if n <= pad {
            return Err(Error::Argument(format!(
                "signal of {n} samples is too short for zero-phase filtering (needs more than {pad})"
            )));
        }
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_zi();
        let scaled = |v: f64| -> Vec<[f64; 2]> { zi.iter().map(|z| [z[0] * v, z[1] * v]).collect() };
        let mut y = self.filter(&ext, Some(&scaled(ext[0])));
        y.reverse();
        let mut y = self.filter(&y, Some(&scaled(y[0])));
        y.reverse();
        Ok(y[pad..pad + n].to_vec())
    }
}
