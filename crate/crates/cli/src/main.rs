use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use urbangrad::output::emit_outputs;
use urbangrad::pipeline::{run_pipeline, InputPaths, PipelineConfig};
use urbangrad::raster::save_grid;
use urbangrad::synth::{generate_scene_pair, GroundTruth, SyntheticSpec};
use urbangrad::Error;

/// Urban density-gradient analysis from co-registered optical and SAR
/// rasters.
#[derive(Parser)]
#[command(name = "urbangrad", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full analysis on an optical/SAR pair.
    Analyze {
        #[arg(long)]
        optical: PathBuf,
        #[arg(long)]
        sar: PathBuf,
        /// Pixel size in metres. Required unless both inputs carry a
        /// sidecar.
        #[arg(long)]
        resolution_m: Option<f64>,
        /// JSON config; missing keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Add a generated_at field to report.json (breaks byte equality
        /// between runs).
        #[arg(long)]
        timestamp: bool,
    },
    /// Generate a synthetic scene pair with ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
}

/// Exit status: 0 success, 1 a stage failed, 2 bad input or config.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_input_error() => 2,
        Some(_) => 1,
        None => 2,
    }
}

fn analyze(
    optical: PathBuf,
    sar: PathBuf,
    resolution_m: Option<f64>,
    config: Option<PathBuf>,
    out: &Path,
    timestamp: bool,
) -> anyhow::Result<()> {
    let cfg = match &config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let inputs = InputPaths { optical, sar, resolution_m };
    let mut result = run_pipeline(&inputs, &cfg)?;
    if timestamp {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        result.report.generated_at = Some(format!("{secs}"));
    }
    for w in &result.report.warnings {
        log::warn!("{}: {}", w.code, w.message);
    }
    emit_outputs(&result, out)?;
    let g = &result.report.gradient;
    println!(
        "alpha {:.6} /km  LD {:.3} km  peaks {}  {:?}  -> {}",
        g.alpha,
        g.ld_km,
        g.peaks.len(),
        g.morphology,
        out.display()
    );
    Ok(())
}

fn synth(spec_path: &Path, out: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| Error::Io { path: spec_path.to_path_buf(), source: e })?;
    let spec: SyntheticSpec = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let scene = generate_scene_pair(&spec)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    save_grid(&scene.optical, &out.join("optical.f32"))?;
    save_grid(&scene.sar, &out.join("sar.f32"))?;
    save_grid(&scene.density, &out.join("density.f32"))?;
    let truth = serde_json::to_string_pretty(&GroundTruth::new(&spec))?;
    let truth_path = out.join("truth.json");
    std::fs::write(&truth_path, truth + "\n")
        .map_err(|e| Error::Io { path: truth_path.clone(), source: e })?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Analyze { optical, sar, resolution_m, config, out, timestamp } => {
            analyze(optical, sar, resolution_m, config, &out, timestamp)
        }
        Command::Synth { spec, out } => synth(&spec, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
