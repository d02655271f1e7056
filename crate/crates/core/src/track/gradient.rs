use crate::quantize::QuantizedImage;

/// Thermal-gradient magnitude map of a quantized frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    pub width: usize,
    pub height: usize,
    pub mag: Vec<f64>,
}

/// Square block of gradient magnitudes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub data: Vec<f64>,
}

impl GradientMap {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.mag[y * self.width + x]
    }

    /// `n x n` block with top-left `(x0, y0)`; `None` unless fully inside.
    pub fn patch(&self, x0: i64, y0: i64, n: usize) -> Option<Patch> {
        if n == 0
            || x0 < 0
            || y0 < 0
            || x0 as usize + n > self.width
            || y0 as usize + n > self.height
        {
            return None;
        }
        let (x0, y0) = (x0 as usize, y0 as usize);
        let mut data = Vec::with_capacity(n * n);
        for y in y0..y0 + n {
            data.extend_from_slice(&self.mag[y * self.width + x0..y * self.width + x0 + n]);
        }
        Some(Patch { size: n, data })
    }
}

/// Gradient magnitude of an 8-bit quantized image.
pub fn gradient_magnitude(q: &QuantizedImage) -> GradientMap {
    let values: Vec<f64> = q.pixels.iter().map(|&p| p as f64).collect();
    gradient_magnitude_of(q.width, q.height, &values)
}

/// `sqrt(du/dx^2 + du/dy^2)` with central differences inside and one-sided
/// differences on the border rows/columns.
pub fn gradient_magnitude_of(width: usize, height: usize, u: &[f64]) -> GradientMap {
    assert_eq!(width * height, u.len());
    let at = |x: usize, y: usize| u[y * width + x];
    let mut mag = Vec::with_capacity(u.len());
    for y in 0..height {
        for x in 0..width {
            let dx = derivative(width, x, |i| at(i, y));
            let dy = derivative(height, y, |j| at(x, j));
            mag.push((dx * dx + dy * dy).sqrt());
        }
    }
    GradientMap { width, height, mag }
}

#[inline]
fn derivative(len: usize, i: usize, f: impl Fn(usize) -> f64) -> f64 {
    if len < 2 {
        0.0
    } else if i == 0 {
        f(1) - f(0)
    } else if i == len - 1 {
        f(len - 1) - f(len - 2)
    } else {
        0.5 * (f(i + 1) - f(i - 1))
    }
}
