//! Thermal frame sequences: in-memory representation, on-disk container,
//! CSV import and synthetic scene generation.

mod container;
mod synth;

pub use container::{
    import_csv_dir, load_sequence, load_sequence_with, read_sequence, write_container,
    write_container_file, FrameStream, LoadReport, LoadedSequence, DEFAULT_CSV_FPS, MAGIC,
};
pub use synth::{
    generate_synthetic, AmbientStep, BreathPattern, GroundTruth, Keyframe, NostrilPath,
    SynthScenario, SyntheticSequence, PRESETS,
};

use crate::error::{Error, Result};
use crate::stats;

/// Default surface emissivity of human skin.
pub const DEFAULT_EMISSIVITY: f64 = 0.98;
/// Native sensor resolution of the reference mobile camera.
pub const SENSOR_WIDTH: usize = 160;
pub const SENSOR_HEIGHT: usize = 120;
/// Sampling rate of the chest-belt reference waveform.
pub const REFERENCE_FS: f64 = 256.0;

/// One timestamped matrix of absolute temperatures in degrees Celsius.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalFrame {
    width: usize,
    height: usize,
    timestamp: f64,
    temps: Vec<f32>,
}

impl ThermalFrame {
    pub fn new(width: usize, height: usize, timestamp: f64, temps: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        if width * height != temps.len() {
            return Err(Error::Argument(format!(
                "frame {width}x{height} needs {} temperatures, got {}",
                width * height,
                temps.len()
            )));
        }
        if !timestamp.is_finite() {
            return Err(Error::Argument("frame timestamp must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            timestamp,
            temps,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    /// Row-major temperatures.
    pub fn temps(&self) -> &[f32] {
        &self.temps
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.temps[y * self.width + x]
    }

    pub fn temps_f64(&self) -> Vec<f64> {
        self.temps.iter().map(|&t| t as f64).collect()
    }

    /// Temperatures inside the half-open pixel rectangle `[x0, x1) x [y0, y1)`,
    /// clipped to the frame. Empty when the rectangle misses the frame.
    pub fn crop(&self, x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<f64> {
        let cx0 = x0.clamp(0, self.width as i64) as usize;
        let cx1 = x1.clamp(0, self.width as i64) as usize;
        let cy0 = y0.clamp(0, self.height as i64) as usize;
        let cy1 = y1.clamp(0, self.height as i64) as usize;
        let mut out = Vec::with_capacity(cx1.saturating_sub(cx0) * cy1.saturating_sub(cy0));
        for y in cy0..cy1 {
            let row = &self.temps[y * self.width..(y + 1) * self.width];
            out.extend(row[cx0..cx1].iter().map(|&t| t as f64));
        }
        out
    }

    /// Median over finite temperatures.
    pub fn median(&self) -> Option<f64> {
        let finite: Vec<f64> = self
            .temps
            .iter()
            .filter(|t| t.is_finite())
            .map(|&t| t as f64)
            .collect();
        stats::median(&finite)
    }
}

/// Where a sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Recorded,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMeta {
    pub nominal_fps: f64,
    pub emissivity: f64,
    pub source: Source,
}

impl SequenceMeta {
    pub fn new(nominal_fps: f64, source: Source) -> Result<Self> {
        if !(nominal_fps > 0.0) || !nominal_fps.is_finite() {
            return Err(Error::Argument(format!(
                "nominal fps must be positive, got {nominal_fps}"
            )));
        }
        Ok(Self {
            nominal_fps,
            emissivity: DEFAULT_EMISSIVITY,
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_dimension_mismatch() {
        assert!(ThermalFrame::new(2, 2, 0.0, vec![30.0; 3]).is_err());
        assert!(ThermalFrame::new(0, 2, 0.0, vec![]).is_err());
    }

    #[test]
    fn crop_clips_to_frame() {
        let f = ThermalFrame::new(3, 2, 0.0, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(f.crop(1, 0, 10, 10), vec![2.0, 3.0, 5.0, 6.0]);
        assert!(f.crop(5, 5, 8, 8).is_empty());
        assert!(f.crop(-4, -4, -1, -1).is_empty());
    }

    #[test]
    fn default_emissivity() {
        let m = SequenceMeta::new(9.0, Source::Recorded).unwrap();
        assert_eq!(m.emissivity, 0.98);
        assert!(SequenceMeta::new(0.0, Source::Recorded).is_err());
    }
}
