//! Respiratory-rate estimation from sequences of absolute-temperature frames
//! captured by mobile thermal cameras.
//!
//! The processing chain is:
//!
//! 1. **frames** – container I/O, CSV import and synthetic oracle scenes.
//! 2. **quantize** – per-frame adaptive temperature range (outlier trim plus
//!    iterative two-class threshold) mapped onto 8-bit levels.
//! 3. **track** – nostril ROI tracking on thermal-gradient magnitude maps:
//!    pyramidal Lucas-Kanade, Median Flow with forward-backward error, and
//!    gradient NCC re-localization.
//! 4. **respsig** – thermal-voxel and mean-temperature respiration waveforms.
//! 5. **rate** – Gaussian-windowed, elliptic band-passed short-time
//!    autocorrelation spectra, peak rate and the rSQI goodness probability.
//! 6. **eval** – MACC alignment and Bland-Altman / RMSE / Pearson agreement.
//! 7. **pipeline** – configuration, end-to-end runs and artifact emission.

pub mod error;
pub mod eval;
pub mod frames;
pub mod pipeline;
pub mod quantize;
pub mod rate;
pub mod respsig;
pub mod stats;
pub mod track;

pub use error::{Error, Result};
