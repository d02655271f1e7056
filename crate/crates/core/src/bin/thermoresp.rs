use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use thermoresp::eval;
use thermoresp::frames::{self, generate_synthetic, SynthScenario};
use thermoresp::pipeline::{self, PipelineConfig, Stage};
use thermoresp::rate;
use thermoresp::respsig::{self, ExtractParams, RespirationSignal, SignalMethod};
use thermoresp::track::{self, Roi, RoiTrack};
use thermoresp::{Error, Result};

#[derive(Parser)]
#[command(name = "thermoresp", version, about = "Respiratory rate from thermal image sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: frames.thrm, truth_boxes.csv, reference.csv
    Synth {
        #[arg(long, default_value = "static")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Track the nostril ROI and write the per-frame track CSV
    Track {
        #[arg(long, short)]
        input: PathBuf,
        /// Initial ROI as X,Y,N
        #[arg(long)]
        roi: String,
        #[arg(long, default_value_t = 5.0)]
        fb_max: f64,
        #[arg(long, default_value = "optimal")]
        quantize: String,
        #[arg(long, default_value = "28:38")]
        static_range: String,
        #[arg(long, default_value_t = frames::DEFAULT_CSV_FPS)]
        csv_fps: f64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Extract the respiration waveform along a ROI track
    Extract {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long)]
        track: PathBuf,
        #[arg(long, default_value = "voxel")]
        method: SignalMethod,
        #[arg(long, default_value_t = 0.5)]
        skew_thresh: f64,
        #[arg(long, default_value_t = frames::DEFAULT_CSV_FPS)]
        csv_fps: f64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Windowed respiration rate of a waveform CSV
    Rate {
        #[arg(long, short)]
        signal: PathBuf,
        #[arg(long, default_value_t = 20.0)]
        win: f64,
        #[arg(long, default_value_t = 15.0)]
        overlap: f64,
        /// Breathing band LO:HI in Hz
        #[arg(long, default_value = "0.1:0.85")]
        band: String,
        /// Gaussian sigma in samples, or AUTO
        #[arg(long, default_value = "AUTO")]
        sigma: String,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        spectrogram: Option<PathBuf>,
    },
    /// Compare an estimated waveform with a reference waveform
    Eval {
        #[arg(long, short)]
        signal: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = eval::DEFAULT_RSQI_CUTOFF)]
        cutoff: f64,
        /// Directory for report.json, pairs.csv and bland_altman.svg
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run the whole pipeline from a config file
    Run {
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. --set fb_max=25
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        synth: Option<String>,
        #[arg(long)]
        roi: Option<String>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        stop_after: Option<Stage>,
        /// Print the effective config and exit
        #[arg(long)]
        print_config: bool,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("THERMORESP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("THERMORESP_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(File::create(p).map_err(|e| io_err(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn io_err(path: &Path, e: io::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

fn write_with(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    let mut w = sink(path)?;
    let name = path.map(|p| p.to_path_buf()).unwrap_or_else(|| "<stdout>".into());
    f(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&name, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| io_err(path, e))
}

fn load_frames(input: &Path, csv_fps: f64) -> Result<(f64, Vec<frames::ThermalFrame>)> {
    let (meta, stream) = frames::load_sequence_with(input, csv_fps)?;
    let seq = stream.collect_all(meta)?;
    Ok((seq.meta.nominal_fps, seq.frames))
}

fn parse_pair(s: &str, what: &str) -> Result<(f64, f64)> {
    let bad = || Error::Config(format!("{what}: expected LO:HI, got '{s}'"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth { preset, seed, out } => {
            let scenario = SynthScenario::preset(&preset)?;
            let seq = generate_synthetic(&scenario, seed)?;
            for p in pipeline::export_synthetic(&seq, &out)? {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Track { input, roi, fb_max, quantize, static_range, csv_fps, out } => {
            let cfg = PipelineConfig {
                quantize,
                static_range,
                fb_max,
                ..Default::default()
            };
            let quant = cfg.quant_mode()?;
            let params = cfg.track_params()?;
            let roi: Roi = roi.parse().map_err(|e| Error::Config(format!("roi: {e}")))?;
            let (_, frames) = load_frames(&input, csv_fps)?;
            let track = track::track_sequence(&frames, roi, &params, &quant)?;
            write_with(out.as_deref(), |w| track.write_csv(w))?;
        }
        Command::Extract { input, track, method, skew_thresh, csv_fps, out } => {
            let params = ExtractParams { method, skew_thresh };
            params.validate()?;
            let (fps, frames) = load_frames(&input, csv_fps)?;
            let track = RoiTrack::read_csv(open(&track)?)?;
            let signal = respsig::extract_signal(&frames, &track, &params, fps)?;
            write_with(out.as_deref(), |w| signal.write_csv(w))?;
        }
        Command::Rate { signal, win, overlap, band, sigma, out, spectrogram } => {
            let (f_lo, f_hi) = parse_pair(&band, "band")?;
            let gauss_sigma = if sigma.eq_ignore_ascii_case("auto") {
                None
            } else {
                Some(sigma.parse().map_err(|_| Error::Config(format!("sigma: expected AUTO or a number, got '{sigma}'")))?)
            };
            let params = rate::RateParams {
                f_lo,
                f_hi,
                win_len: win,
                win_overlap: overlap,
                gauss_sigma,
                ..Default::default()
            };
            params.validate()?;
            let signal = RespirationSignal::read_csv(open(&signal)?, SignalMethod::Voxel)?;
            let (rates, spec) = rate::analyze(&signal, &params)?;
            write_with(out.as_deref(), |w| rates.write_csv(w))?;
            if let Some(p) = spectrogram {
                write_with(Some(&p), |w| spec.write_csv(w))?;
            }
        }
        Command::Eval { signal, reference, cutoff, out } => {
            if !(0.0..=1.0).contains(&cutoff) {
                return Err(Error::Config(format!("cutoff must be in [0, 1], got {cutoff}")));
            }
            let est = RespirationSignal::read_csv(open(&signal)?, SignalMethod::Voxel)?;
            let reference = pipeline::read_reference(&reference)?;
            let ev = eval::evaluate(&reference, &est, &rate::RateParams::default(), cutoff)?;
            std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
            let json = serde_json::to_string_pretty(&ev.report).expect("report serializes");
            pipeline::write_file(&out.join(pipeline::REPORT_JSON), json.as_bytes())?;
            write_with(Some(&out.join(pipeline::PAIRS_CSV)), |w| eval::write_pairs_csv(&ev.pairs, w))?;
            let svg = eval::bland_altman_svg(&ev.pairs, &ev.report);
            pipeline::write_file(&out.join(pipeline::BLAND_ALTMAN_SVG), svg.as_bytes())?;
            println!("{json}");
        }
        Command::Run { config, set, input, synth, roi, reference, seed, out, stop_after, print_config } => {
            let mut overrides = set
                .iter()
                .map(|kv| pipeline::parse_override(kv))
                .collect::<Result<Vec<_>>>()?;
            let mut flag = |k: &str, v: Option<toml::Value>| {
                if let Some(v) = v {
                    overrides.push((k.to_string(), v));
                }
            };
            let path_value = |p: PathBuf| toml::Value::String(p.to_string_lossy().into_owned());
            flag("input", input.map(path_value));
            flag("synth", synth.map(toml::Value::String));
            flag("roi", roi.map(toml::Value::String));
            flag("reference", reference.map(path_value));
            flag("seed", seed.map(|s| toml::Value::Integer(s as i64)));
            flag("output", out.map(path_value));
            flag("stop_after", stop_after.map(|s| toml::Value::String(s.to_string())));
            let cfg = PipelineConfig::load(config.as_deref(), &overrides)?;
            if print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let outcome = pipeline::run_pipeline(&cfg)?;
            for p in &outcome.artifacts {
                eprintln!("wrote {}", p.display());
            }
            if let Some(r) = &outcome.agreement {
                eprintln!(
                    "bias {:.3} BPM, LoA [{:.3}, {:.3}], RMSE {:.3}, windows {}",
                    r.bias, r.loa_lo, r.loa_hi, r.rmse, r.n_windows
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
