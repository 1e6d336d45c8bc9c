use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};

use smcam::metrics::ExperimentReport;
use smcam::optics::CameraConfig;
use smcam_cli::config::{ExperimentConfig, RawConfig};
use smcam_cli::design::{optics_summary, rate_summary, Geometry};
use smcam_cli::pipeline;

/// Simulate and reconstruct line-sensor and single-pixel compressive cameras.
#[derive(Parser, Debug)]
#[command(name = "smcam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment configuration (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Camera preset applied before the configuration file.
    #[arg(long)]
    preset: Option<String>,
    /// Global seed; also seeds the schedule unless `schedule_seed` is set.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` assignments applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Stage {
    Simulate,
    Recover,
    Report,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Measurement-rate and optical-layout summary.
    Design {
        /// Camera preset (`paper-lisens`, `paper-spc`, `case-study`).
        #[arg(long, default_value = "paper-lisens")]
        preset: String,
        /// DMD width, height (mm).
        #[arg(long, num_args = 2, value_names = ["W", "H"])]
        dmd: Option<Vec<f64>>,
        /// Line-sensor width, height (mm).
        #[arg(long, num_args = 2, value_names = ["W", "H"])]
        sensor: Option<Vec<f64>>,
        /// Relay focal length and aperture diameter (mm).
        #[arg(long, num_args = 2, value_names = ["F", "D"])]
        relay: Option<Vec<f64>>,
    },
    /// Write the schedule and simulated measurements.
    Simulate(Common),
    /// Reconstruct from the measurements in the output directory.
    Recover(Common),
    /// Score the reconstruction in the output directory.
    Report(Common),
    /// Run the whole pipeline, or a single stage with `--stage`.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        stage: Stage,
    },
}

fn load_config(c: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut raw = RawConfig::default();
    if let Some(name) = &c.preset {
        raw.apply_preset(name, &mut Default::default())?;
        raw.set("preset", name.as_str());
    }
    if let Some(path) = &c.config {
        for (k, v) in RawConfig::load(path)?.iter() {
            raw.set(k, v);
        }
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
        raw.set(k.trim(), v.trim());
    }
    if let Some(seed) = c.seed {
        raw.set("seed", seed.to_string());
    }
    if let Some(out) = &c.out {
        raw.set("out", out.display().to_string());
    }
    Ok(ExperimentConfig::from_raw(&raw)?)
}

fn print_report(report: &ExperimentReport) -> anyhow::Result<()> {
    report.write_csv(std::io::stdout().lock())?;
    Ok(())
}

fn finish(report: &ExperimentReport) -> anyhow::Result<ExitCode> {
    print_report(report)?;
    if report.all_converged() {
        Ok(ExitCode::SUCCESS)
    } else {
        warn!("solver did not converge for every frame");
        Ok(ExitCode::from(2))
    }
}

fn run_stage(stage: Stage, common: &Common) -> anyhow::Result<ExitCode> {
    let cfg = load_config(common)?;
    match stage {
        Stage::Simulate => {
            pipeline::stage_simulate(&cfg)?;
            info!("measurements written to {}", cfg.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Stage::Recover => {
            let meta = pipeline::stage_recover(&cfg)?;
            info!(
                "recovered {} frame(s) with {}",
                meta.frames.len(),
                meta.solver
            );
            if meta.frames.iter().all(|f| f.converged) {
                Ok(ExitCode::SUCCESS)
            } else {
                warn!("solver did not converge for every frame");
                Ok(ExitCode::from(2))
            }
        }
        Stage::Report => finish(&pipeline::stage_report(&cfg)?),
        Stage::All => finish(&pipeline::run_experiment(&cfg)?),
    }
}

fn design(
    preset: &str,
    dmd: Option<Vec<f64>>,
    sensor: Option<Vec<f64>>,
    relay: Option<Vec<f64>>,
) -> anyhow::Result<ExitCode> {
    let camera =
        CameraConfig::preset(preset).ok_or_else(|| anyhow::anyhow!("unknown preset `{preset}`"))?;
    print!("{}", rate_summary(&camera));
    match (dmd, sensor, relay) {
        (Some(d), Some(s), Some(r)) => {
            let g = Geometry {
                dmd_width: d[0],
                dmd_height: d[1],
                sensor_width: s[0],
                sensor_height: s[1],
                relay_focal: r[0],
                relay_aperture: r[1],
            };
            print!("{}", optics_summary(&g)?);
        }
        (None, None, None) => {}
        _ => anyhow::bail!("--dmd, --sensor and --relay go together"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Design {
            preset,
            dmd,
            sensor,
            relay,
        } => design(&preset, dmd, sensor, relay),
        Command::Simulate(c) => run_stage(Stage::Simulate, &c),
        Command::Recover(c) => run_stage(Stage::Recover, &c),
        Command::Report(c) => run_stage(Stage::Report, &c),
        Command::Run { common, stage } => run_stage(stage, &common),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
