//! End-to-end runs: configuration, stage orchestration and artifact emission.
//!
//! The configuration is a flat TOML table. Every key is optional:
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `input` | - | container file or directory of CSV frames |
//! | `synth` | - | synthetic preset used when `input` is absent |
//! | `csv_fps` | 9 | frame rate assumed for CSV directories |
//! | `roi` | - | initial ROI `"X,Y,N"`; synthetic runs default to the true box |
//! | `quantize` | `"optimal"` | `"optimal"` or `"static"` |
//! | `static_range` | `"28:38"` | range for static quantization, deg C |
//! | `fb_max`, `grid`, `min_points_frac`, `search_radius`, `min_ncc`, `despeckle` | | tracker |
//! | `method`, `skew_thresh` | `"voxel"`, 0.5 | signal extraction |
//! | `f_lo`, `f_hi`, `t_max_hat`, `win_len`, `win_overlap`, `gauss_sigma`, `filter_order`, `ripple_db`, `atten_db` | | rate estimation |
//! | `reference` | - | 256 Hz reference waveform CSV |
//! | `cutoff` | 0.9825 | rSQI cutoff for agreement statistics |
//! | `output` | `"out"` | artifact directory |
//! | `seed` | 0 | synthetic scene seed |
//! | `stop_after` | `"eval"` | last stage to run |

use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{self, AgreementReport, DEFAULT_RSQI_CUTOFF};
use crate::frames::{self, generate_synthetic, GroundTruth, LoadReport, SynthScenario, ThermalFrame};
use crate::quantize::{QuantMode, QuantRange};
use crate::rate::{self, RateParams};
use crate::respsig::{self, ExtractParams, RespirationSignal, SignalMethod};
use crate::track::{self, Roi, RoiTrack, TrackParams};

pub const ROI_TRACK_CSV: &str = "roi_track.csv";
pub const SIGNAL_CSV: &str = "signal.csv";
pub const RATES_CSV: &str = "rates.csv";
pub const SPECTROGRAM_CSV: &str = "spectrogram.csv";
pub const REPORT_JSON: &str = "report.json";
pub const PAIRS_CSV: &str = "pairs.csv";
pub const BLAND_ALTMAN_SVG: &str = "bland_altman.svg";
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Track,
    Extract,
    Rate,
    Eval,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Track => "track",
            Stage::Extract => "extract",
            Stage::Rate => "rate",
            Stage::Eval => "eval",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "track" => Ok(Stage::Track),
            "extract" => Ok(Stage::Extract),
            "rate" => Ok(Stage::Rate),
            "eval" => Ok(Stage::Eval),
            _ => Err(Error::Config(format!(
                "unknown stage '{s}' (expected track, extract, rate or eval)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub synth: Option<String>,
    pub csv_fps: f64,
    pub roi: Option<String>,
    pub quantize: String,
    pub static_range: String,
    pub fb_max: f64,
    pub grid: usize,
    pub min_points_frac: f64,
    pub search_radius: Option<f64>,
    pub min_ncc: f64,
    pub despeckle: bool,
    pub method: SignalMethod,
    pub skew_thresh: f64,
    pub f_lo: f64,
    pub f_hi: f64,
    pub t_max_hat: f64,
    pub win_len: f64,
    pub win_overlap: f64,
    pub gauss_sigma: Option<f64>,
    pub filter_order: usize,
    pub ripple_db: f64,
    pub atten_db: f64,
    pub reference: Option<PathBuf>,
    pub cutoff: f64,
    pub output: PathBuf,
    pub seed: u64,
    pub stop_after: Stage,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let tp = TrackParams::default();
        let ep = ExtractParams::default();
        let rp = RateParams::default();
        Self {
            input: None,
            synth: None,
            csv_fps: frames::DEFAULT_CSV_FPS,
            roi: None,
            quantize: "optimal".into(),
            static_range: "28:38".into(),
            fb_max: tp.fb_max,
            grid: tp.grid,
            min_points_frac: tp.min_points_frac,
            search_radius: tp.search_radius,
            min_ncc: tp.min_ncc,
            despeckle: tp.despeckle,
            method: ep.method,
            skew_thresh: ep.skew_thresh,
            f_lo: rp.f_lo,
            f_hi: rp.f_hi,
            t_max_hat: rp.t_max_hat,
            win_len: rp.win_len,
            win_overlap: rp.win_overlap,
            gauss_sigma: rp.gauss_sigma,
            filter_order: rp.filter_order,
            ripple_db: rp.ripple_db,
            atten_db: rp.atten_db,
            reference: None,
            cutoff: DEFAULT_RSQI_CUTOFF,
            output: PathBuf::from("out"),
            seed: 0,
            stop_after: Stage::Eval,
        }
    }
}

/// Parse a `key=value` override; the value is read as a TOML literal and
/// falls back to a bare string.
pub fn parse_override(kv: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = kv
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

impl PipelineConfig {
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Self::from_table(table)
    }

    /// Read a config file (or start from defaults) and apply overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        Self::from_table(table)
    }

    /// Canonical serialization; the manifest hash is taken over this text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn quant_mode(&self) -> Result<QuantMode> {
        match self.quantize.as_str() {
            "optimal" => Ok(QuantMode::optimal()),
            "static" => Ok(QuantMode::Static {
                range: parse_range(&self.static_range)?,
            }),
            other => Err(Error::Config(format!(
                "quantize: expected optimal or static, got '{other}'"
            ))),
        }
    }

    pub fn track_params(&self) -> Result<TrackParams> {
        let p = TrackParams {
            fb_max: self.fb_max,
            grid: self.grid,
            min_points_frac: self.min_points_frac,
            search_radius: self.search_radius,
            min_ncc: self.min_ncc,
            despeckle: self.despeckle,
            ..TrackParams::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn extract_params(&self) -> Result<ExtractParams> {
        let p = ExtractParams {
            method: self.method,
            skew_thresh: self.skew_thresh,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn rate_params(&self) -> Result<RateParams> {
        let p = RateParams {
            f_lo: self.f_lo,
            f_hi: self.f_hi,
            t_max_hat: self.t_max_hat,
            win_len: self.win_len,
            win_overlap: self.win_overlap,
            gauss_sigma: self.gauss_sigma,
            filter_order: self.filter_order,
            ripple_db: self.ripple_db,
            atten_db: self.atten_db,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn init_roi(&self) -> Result<Option<Roi>> {
        self.roi
            .as_deref()
            .map(|s| s.parse::<Roi>().map_err(|e| Error::Config(format!("roi: {e}"))))
            .transpose()
    }

    /// Check every sub-configuration and the input selection.
    pub fn validate(&self) -> Result<()> {
        match (&self.input, &self.synth) {
            (None, None) => {
                return Err(Error::Config(
                    "input: no input path given (set `input` or `synth`)".into(),
                ))
            }
            (Some(p), _) if !p.exists() => {
                return Err(Error::Config(format!("input: {} does not exist", p.display())))
            }
            (None, Some(name)) => {
                SynthScenario::preset(name)?;
            }
            _ => {}
        }
        if self.input.is_some() && self.roi.is_none() {
            return Err(Error::Config("roi: required for recorded input".into()));
        }
        if let Some(r) = &self.reference {
            if !r.exists() {
                return Err(Error::Config(format!("reference: {} does not exist", r.display())));
            }
        }
        if !(self.csv_fps > 0.0) {
            return Err(Error::Config("csv_fps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.cutoff) {
            return Err(Error::Config(format!("cutoff must be in [0, 1], got {}", self.cutoff)));
        }
        parse_range(&self.static_range)?;
        self.quant_mode()?;
        self.track_params()?;
        self.extract_params()?;
        self.rate_params()?;
        self.init_roi()?;
        Ok(())
    }
}

/// Parse `"LO:HI"` in deg C.
pub fn parse_range(s: &str) -> Result<QuantRange> {
    let bad = || Error::Config(format!("static_range: expected LO:HI, got '{s}'"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    QuantRange::new(lo, hi).map_err(|e| Error::Config(format!("static_range: {e}")))
}

/// Frames plus whatever the source knows about them.
pub struct Input {
    pub fps: f64,
    pub frames: Vec<ThermalFrame>,
    pub report: LoadReport,
    pub truth: Option<GroundTruth>,
}

pub fn load_input(cfg: &PipelineConfig) -> Result<Input> {
    if let Some(path) = &cfg.input {
        let (meta, stream) =
            frames::load_sequence_with(path, cfg.csv_fps).map_err(|e| e.in_stage("load", None))?;
        let seq = stream.collect_all(meta).map_err(|e| e.in_stage("load", None))?;
        return Ok(Input {
            fps: seq.meta.nominal_fps,
            frames: seq.frames,
            report: seq.report,
            truth: None,
        });
    }
    let name = cfg
        .synth
        .as_deref()
        .ok_or_else(|| Error::Config("input: no input path given".into()))?;
    let scenario = SynthScenario::preset(name)?;
    let seq = generate_synthetic(&scenario, cfg.seed).map_err(|e| e.in_stage("synth", None))?;
    Ok(Input {
        fps: seq.meta.nominal_fps,
        report: LoadReport {
            frames: seq.frames.len(),
            repaired: 0,
        },
        frames: seq.frames,
        truth: Some(seq.truth),
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

/// Write a synthetic sequence as a container plus its oracle files:
/// `frames.thrm`, `truth_boxes.csv` and `reference.csv` (256 Hz waveform).
pub fn export_synthetic(seq: &frames::SyntheticSequence, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let container = dir.join("frames.thrm");
    frames::write_container_file(&container, seq.meta.nominal_fps, &seq.frames)?;
    let boxes = dir.join("truth_boxes.csv");
    let mut text = String::from("frame_idx,x,y,size,occluded\n");
    for (i, (b, occ)) in seq.truth.boxes.iter().zip(&seq.truth.occluded).enumerate() {
        text.push_str(&format!("{i},{},{},{},{}\n", b.x, b.y, b.size, u8::from(*occ)));
    }
    write_file(&boxes, text.as_bytes())?;
    let reference = dir.join("reference.csv");
    let sig = respsig::reference_from_truth(&seq.truth, frames::REFERENCE_FS)?;
    write_file(&reference, &csv_bytes(|b| sig.write_csv(b)))?;
    Ok(vec![container, boxes, reference])
}

pub fn read_reference(path: &Path) -> Result<RespirationSignal> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    RespirationSignal::read_csv(BufReader::new(file), SignalMethod::Reference)
}

#[derive(Debug, Serialize)]
struct RateSummary {
    n_windows: usize,
    n_valid: usize,
    median_bpm: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    config_hash: &'a str,
    method: SignalMethod,
    rates: RateSummary,
    lag_s: Option<f64>,
    correlation: Option<f64>,
    agreement: Option<&'a AgreementReport>,
}

#[derive(Debug, Serialize)]
struct ArtifactEntry {
    name: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    package: &'static str,
    version: &'static str,
    config_hash: &'a str,
    seed: u64,
    stop_after: Stage,
    frames: usize,
    repaired_pixels: usize,
    artifacts: Vec<ArtifactEntry>,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output: PathBuf,
    pub artifacts: Vec<PathBuf>,
    pub config_hash: String,
    pub track: RoiTrack,
    pub signal: Option<RespirationSignal>,
    pub rates: Option<rate::RateSeries>,
    pub agreement: Option<AgreementReport>,
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn put(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        write_file(&self.dir.join(name), &bytes)?;
        self.written.push((name.to_string(), bytes));
        Ok(())
    }
}

/// Run every stage up to `cfg.stop_after` and write the artifacts.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let hash = cfg.hash();
    let input = load_input(cfg)?;
    let quant = cfg.quant_mode()?;
    let track_params = cfg.track_params()?;
    let init_roi = match (cfg.init_roi()?, &input.truth) {
        (Some(r), _) => r,
        (None, Some(truth)) => truth.boxes[0],
        (None, None) => return Err(Error::Config("roi: required for recorded input".into())),
    };

    fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    let mut out = Artifacts {
        dir: cfg.output.clone(),
        written: Vec::new(),
    };

    let track = track::track_sequence(&input.frames, init_roi, &track_params, &quant)
        .map_err(|e| match e {
            Error::Stage { .. } => e,
            other => other.in_stage("track", None),
        })?;
    out.put(ROI_TRACK_CSV, csv_bytes(|b| track.write_csv(b)))?;

    let mut outcome = RunOutcome {
        output: cfg.output.clone(),
        artifacts: Vec::new(),
        config_hash: hash.clone(),
        track,
        signal: None,
        rates: None,
        agreement: None,
    };

    if cfg.stop_after >= Stage::Extract {
        let signal = respsig::extract_signal(
            &input.frames,
            &outcome.track,
            &cfg.extract_params()?,
            input.fps,
        )
        .map_err(|e| e.in_stage("extract", None))?;
        out.put(SIGNAL_CSV, csv_bytes(|b| signal.write_csv(b)))?;
        outcome.signal = Some(signal);
    }

    if cfg.stop_after >= Stage::Rate {
        let params = cfg.rate_params()?;
        let signal = outcome.signal.as_ref().expect("extract ran");
        let (rates, spectrogram) =
            rate::analyze(signal, &params).map_err(|e| e.in_stage("rate", None))?;
        out.put(RATES_CSV, csv_bytes(|b| rates.write_csv(b)))?;
        out.put(SPECTROGRAM_CSV, csv_bytes(|b| spectrogram.write_csv(b)))?;

        let mut lag_s = None;
        let mut correlation = None;
        if cfg.stop_after >= Stage::Eval {
            let reference = match (&cfg.reference, &input.truth) {
                (Some(path), _) => Some(read_reference(path).map_err(|e| e.in_stage("eval", None))?),
                (None, Some(truth)) => Some(
                    respsig::reference_from_truth(truth, frames::REFERENCE_FS)
                        .map_err(|e| e.in_stage("eval", None))?,
                ),
                (None, None) => None,
            };
            if let Some(reference) = reference {
                let ev = eval::evaluate(&reference, signal, &params, cfg.cutoff)
                    .map_err(|e| e.in_stage("eval", None))?;
                lag_s = Some(ev.aligned.lag as f64 / frames::REFERENCE_FS);
                correlation = Some(ev.aligned.correlation);
                out.put(PAIRS_CSV, csv_bytes(|b| eval::write_pairs_csv(&ev.pairs, b)))?;
                out.put(BLAND_ALTMAN_SVG, eval::bland_altman_svg(&ev.pairs, &ev.report).into_bytes())?;
                outcome.agreement = Some(ev.report);
            }
        }

        let valid = rates.valid_bpm();
        let report = Report {
            config_hash: &hash,
            method: signal.method,
            rates: RateSummary {
                n_windows: rates.len(),
                n_valid: valid.len(),
                median_bpm: crate::stats::median(&valid),
            },
            lag_s,
            correlation,
            agreement: outcome.agreement.as_ref(),
        };
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        out.put(REPORT_JSON, json.into_bytes())?;
        outcome.rates = Some(rates);
    }

    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: &hash,
        seed: cfg.seed,
        stop_after: cfg.stop_after,
        frames: input.report.frames,
        repaired_pixels: input.report.repaired,
        artifacts: out
            .written
            .iter()
            .map(|(name, bytes)| ArtifactEntry {
                name: name.clone(),
                sha256: hex::encode(Sha256::digest(bytes)),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    out.put(MANIFEST_JSON, json.into_bytes())?;

    outcome.artifacts = out.written.iter().map(|(n, _)| cfg.output.join(n)).collect();
    Ok(outcome)
}
