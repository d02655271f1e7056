//! Drive the whole chain from a TOML config with command-line style
//! overrides, then list the artifacts and their digests.

use thermoresp::pipeline::{parse_override, run_pipeline, PipelineConfig};

const CONFIG: &str = r#"
synth = "motion"
seed = 11
fb_max = 5.0
cutoff = 0.9
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("thermoresp-pipeline");
    let overrides = [
        parse_override("method=\"voxel\"")?,
        parse_override(&format!("output=\"{}\"", out.display()))?,
    ];
    let mut table: toml::Table = toml::from_str(CONFIG).expect("literal config parses");
    table.extend(overrides);
    let cfg = PipelineConfig::from_table(table)?;
    println!("config hash {}", cfg.hash());

    let run = run_pipeline(&cfg)?;
    if let Some(rates) = &run.rates {
        let valid = rates.valid_bpm();
        println!("{} windows, {} valid", rates.len(), valid.len());
    }
    if let Some(a) = &run.agreement {
        println!("bias {:+.3} BPM, RMSE {:.3} BPM over {} windows", a.bias, a.rmse, a.n_windows);
    }
    for path in &run.artifacts {
        let bytes = std::fs::read(path)?;
        println!("  {:<20} {:>8} bytes", path.file_name().unwrap().to_string_lossy(), bytes.len());
    }
    Ok(())
}
