//! Experiment pipeline: schedule → simulate → demean → group → recover →
//! metrics, runnable in one go or stage by stage through files.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use smcam::codes::{demean, demean_noise_gain, PatternSchedule, ScheduleParams};
use smcam::io;
use smcam::metrics::{
    format_db, rsnr, under_sampling, CameraModel, ExperimentReport, Reference, RunRecord,
};
use smcam::operators::{tv_iso, LineSensing, PixelSensing, Sensing};
use smcam::optics::CameraConfig;
use smcam::recovery::{
    block_operator, median3, recover_pinv, recover_tv3d, stack_frames, unstack_frames, TraceRecord,
};
use smcam::simulator::{
    group_frames, simulate_lisens, simulate_spc, Acquisition, MeasurementSet, SceneVideo,
    SpcPatterns,
};

use crate::config::{Capture, ExperimentConfig, Noise, SceneSource, Solver};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Core(#[from] smcam::Error),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Invalid(msg.into())
}

pub const SCHEDULE_STEM: &str = "schedule";
pub const MEASUREMENT_STEM: &str = "measurements";
pub const RECOVERED_FILE: &str = "recovered.smcf";
pub const RECOVERY_META_FILE: &str = "recovery.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved";

/// A validated experiment with its scene and schedule in memory.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub scene: SceneVideo,
    /// Camera with the sensor size the scene actually uses.
    pub camera: CameraConfig,
    pub schedule: PatternSchedule,
    pub duration: f64,
}

impl Prepared {
    pub fn rows(&self) -> usize {
        self.scene.rows()
    }

    pub fn cols(&self) -> usize {
        self.scene.cols()
    }

    /// Readings per pattern.
    pub fn readings_per_slot(&self) -> usize {
        match self.config.camera {
            CameraModel::Lisens => self.rows(),
            CameraModel::Spc => 1,
        }
    }

    /// Patterns per second.
    pub fn slot_rate(&self) -> f64 {
        self.camera.effective_frame_rate()
    }
}

fn load_frames(cfg: &ExperimentConfig) -> Result<Vec<Array2<f64>>> {
    let (rows, cols) = (cfg.scene_rows, cfg.scene_cols);
    match &cfg.scene {
        SceneSource::Phantom(name) => Ok(vec![smcam::phantom::by_name(name, rows, cols)?]),
        SceneSource::Square => Ok(smcam::phantom::translating_square(
            rows,
            cols,
            cfg.scene_frames,
            cfg.square_size,
            cfg.square_velocity,
            1.0,
        )?
        .frames()
        .to_vec()),
        SceneSource::File(path) => Ok(io::read_scene_frames(path)?),
    }
}

/// Validate the configuration and build everything the stages share.
/// Touches no output files.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let frames = load_frames(config)?;
    if frames.is_empty() || frames[0].is_empty() {
        return Err(invalid("scene is empty"));
    }
    let (rows, cols) = frames[0].dim();
    let base = config.camera_config;
    if cols > base.dmd_cols || rows > base.dmd_rows {
        return Err(invalid(format!(
            "scene {rows}×{cols} does not fit the {}×{} DMD",
            base.dmd_rows, base.dmd_cols
        )));
    }
    let (camera, order, per_slot) = match config.camera {
        CameraModel::Lisens => {
            if rows > base.sensor_pixels {
                return Err(invalid(format!(
                    "scene has {rows} rows but the line sensor only {} pixels",
                    base.sensor_pixels
                )));
            }
            (base.with_sensor_pixels(rows), cols, rows)
        }
        CameraModel::Spc => (base.with_sensor_pixels(1), rows * cols, 1),
    };
    if !order.is_power_of_two() {
        return Err(invalid(format!(
            "Hadamard codes need a power-of-two code length, the scene gives {order}"
        )));
    }
    let slot_rate = camera.effective_frame_rate();
    let q = config.frames;
    let pixels = (rows * cols) as f64;
    let (slots, duration) = match config.capture {
        Capture::Duration(d) => {
            let slots = smcam::metrics::measurements_in(d, slot_rate);
            (slots, d)
        }
        Capture::UnderSampling(u) => {
            let slots = ((q as f64 * pixels / (u * per_slot as f64)).round() as usize).max(1);
            (slots, slots as f64 / slot_rate)
        }
    };
    if slots < q {
        return Err(invalid(format!(
            "{duration} s at {slot_rate:.6} patterns/s gives {slots} patterns, fewer than the {q} frames requested"
        )));
    }
    let fps = match config.scene_fps {
        Some(f) => f,
        None if frames.len() > 1 => frames.len() as f64 / duration,
        None => 1.0,
    };
    let scene = SceneVideo::new(frames, fps)?;
    let params = ScheduleParams::new(order, slots, config.schedule_seed, config.mean_track_period)
        .with_row_order(config.row_order);
    let schedule = PatternSchedule::build(params)?;
    Ok(Prepared {
        config: config.clone(),
        scene,
        camera,
        schedule,
        duration,
    })
}

fn acquire(p: &Prepared, sigma: f64, seed: u64) -> Result<MeasurementSet> {
    Ok(match p.config.camera {
        CameraModel::Lisens => simulate_lisens(&p.scene, &p.schedule, sigma, seed, &p.camera)?,
        CameraModel::Spc => {
            let patterns = SpcPatterns::from_schedule(&p.schedule, p.rows(), p.cols())?;
            simulate_spc(&p.scene, &patterns, sigma, seed, &p.camera)?
        }
    })
}

/// Simulated 0/1-coded measurements, rounded to `f32` as stored on disk.
pub fn simulate(p: &Prepared) -> Result<MeasurementSet> {
    let sigma = match p.config.noise {
        Noise::Absolute(s) => s,
        Noise::Relative(r) => r * acquire(p, 0.0, p.config.seed)?.mean_magnitude(),
    };
    let mut ms = acquire(p, sigma, p.config.seed)?;
    io::quantize_f32(&mut ms.values);
    Ok(ms)
}

/// Per-frame solver summary, stored next to the recovered frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub slots: (usize, usize),
    pub measurements: usize,
    pub iterations: usize,
    pub residual: f64,
    pub tv: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMeta {
    pub solver: String,
    pub epsilon: f64,
    pub median: bool,
    pub frames: Vec<FrameSummary>,
}

#[derive(Debug, Clone)]
pub struct Recovery {
    /// Recovered frames, rounded to `f32` as stored on disk.
    pub frames: Vec<Array2<f64>>,
    pub meta: RecoveryMeta,
    pub trace: Vec<TraceRecord>,
}

/// Data-ball radius matching the noise of the demeaned measurements that
/// enter the solver.
pub fn auto_epsilon(
    ms: &MeasurementSet,
    schedule: &PatternSchedule,
    include_mean_track: bool,
) -> Result<f64> {
    if ms.noise_sigma == 0.0 {
        return Ok(0.0);
    }
    let gain = demean_noise_gain(ms, schedule)?;
    let energy: f64 = gain
        .iter()
        .zip(ms.slots())
        .filter(|&(_, t)| include_mean_track || !schedule.is_mean_track(t))
        .map(|(g, _)| g)
        .sum();
    Ok(ms.noise_sigma * (ms.values.nrows() as f64 * energy).sqrt())
}

fn frame_operator(
    acquisition: Acquisition,
    codes: Array2<f64>,
    rows: usize,
) -> Result<Box<dyn Sensing>> {
    Ok(match acquisition {
        Acquisition::LineSensor => Box::new(LineSensing::new(codes, rows)),
        Acquisition::SinglePixel { rows, cols } => Box::new(PixelSensing::new(codes, rows, cols)?),
    })
}

/// Demean, group into `Q` frames and reconstruct.
pub fn recover(
    config: &ExperimentConfig,
    schedule: &PatternSchedule,
    ms: &MeasurementSet,
) -> Result<Recovery> {
    let signed = demean(ms, schedule, None)?;
    let blocks = group_frames(&signed, schedule, config.frames)?;
    let include = config.recovery.include_mean_track;
    let epsilon = match config.epsilon {
        Some(e) => e,
        None => auto_epsilon(ms, schedule, include)?,
    };
    let params = config.recovery.with_epsilon(epsilon);

    let (mut frames, summaries, trace) = match config.solver {
        Solver::Pinv => {
            let mut frames = Vec::new();
            let mut summaries = Vec::new();
            for b in &blocks {
                let (y, codes) = b.data(include);
                let x = match b.acquisition {
                    Acquisition::LineSensor => recover_pinv(y.view(), codes.view())?,
                    Acquisition::SinglePixel { rows, cols } => {
                        recover_pinv(y.view(), codes.view())?
                            .into_shape_with_order((rows, cols))
                            .map_err(|e| invalid(e.to_string()))?
                    }
                };
                let op = frame_operator(b.acquisition, codes, y.nrows())?;
                let residual = (op.apply(x.view()) - &y).mapv(|v| v * v).sum().sqrt();
                summaries.push(FrameSummary {
                    slots: (b.slots.start, b.slots.end),
                    measurements: y.len(),
                    iterations: 0,
                    residual,
                    tv: tv_iso(x.view()),
                    converged: true,
                });
                frames.push(x);
            }
            (frames, summaries, Vec::new())
        }
        Solver::Tv => {
            let video = recover_tv3d(&blocks, &params)?;
            let d = &video.diagnostics;
            let summaries = blocks
                .iter()
                .zip(&video.frame_diagnostics)
                .map(|(b, fd)| {
                    let used = block_operator(b, include)
                        .map(|(_, y)| y.len())
                        .unwrap_or(0);
                    FrameSummary {
                        slots: (b.slots.start, b.slots.end),
                        measurements: used,
                        iterations: fd.iterations,
                        residual: fd.residual,
                        tv: fd.tv,
                        converged: d.ok(),
                    }
                })
                .collect();
            (video.frames, summaries, d.trace.clone())
        }
    };

    let median = config.median.unwrap_or(frames.len() >= 3);
    if median {
        frames = unstack_frames(median3(stack_frames(&frames).view()).view());
    }
    for f in &mut frames {
        io::quantize_f32(f);
    }
    Ok(Recovery {
        frames,
        meta: RecoveryMeta {
            solver: format!(
                "{}{}",
                config.solver.as_str(),
                if median { "+median3" } else { "" }
            ),
            epsilon,
            median,
            frames: summaries,
        },
        trace,
    })
}

/// Nyquist-rate pseudoinverse reconstruction of one scene frame under the
/// experiment's noise level.
fn nyquist_reference(
    p: &Prepared,
    frame: &Array2<f64>,
    sigma: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    let order = p.schedule.order();
    let full = PatternSchedule::build(ScheduleParams::new(
        order,
        order,
        p.config.schedule_seed,
        None,
    ))?;
    let still = SceneVideo::still(frame.clone())?;
    let ideal = CameraConfig {
        burst: None,
        ..p.camera
    };
    let ms = match p.config.camera {
        CameraModel::Lisens => simulate_lisens(&still, &full, sigma, seed, &ideal)?,
        CameraModel::Spc => simulate_spc(
            &still,
            &SpcPatterns::from_schedule(&full, p.rows(), p.cols())?,
            sigma,
            seed,
            &ideal,
        )?,
    };
    let signed = demean(&ms, &full, None)?;
    let codes = full.code_matrix(0..order, signed.coding);
    let x = recover_pinv(signed.values.view(), codes.view())?;
    x.into_shape_with_order((p.rows(), p.cols()))
        .map_err(|e| invalid(e.to_string()))
}

/// Score each recovered frame against the scene frame shown at the middle
/// of its slots.
pub fn evaluate(p: &Prepared, ms: &MeasurementSet, rec: &Recovery) -> Result<ExperimentReport> {
    let cfg = &p.config;
    let mut report = ExperimentReport::default();
    if rec.frames.len() != rec.meta.frames.len() {
        return Err(invalid(
            "recovery metadata does not match the recovered frames",
        ));
    }
    for (k, (x, s)) in rec.frames.iter().zip(&rec.meta.frames).enumerate() {
        let mid = (s.slots.0 + s.slots.1 - 1) / 2;
        let ts = ms
            .timestamps
            .get(mid - ms.first_slot)
            .copied()
            .ok_or_else(|| invalid("frame slots outside the measurements"))?;
        let truth = &p.scene.frames()[p.scene.frame_index_at(ts)];
        let reference = match cfg.reference {
            Reference::Scene => truth.clone(),
            Reference::Nyquist => nyquist_reference(
                p,
                truth,
                ms.noise_sigma,
                cfg.seed.wrapping_add(1 + k as u64),
            )?,
        };
        let measured = (s.slots.1 - s.slots.0) * p.readings_per_slot();
        report.push(RunRecord {
            scene_id: cfg.scene.to_string(),
            camera: cfg.camera,
            frame: k,
            capture_duration_s: p.duration,
            measurements: measured,
            under_sampling: under_sampling(p.rows(), p.cols(), measured)?,
            rsnr_db: format_db(rsnr(&reference, x)?),
            reference: cfg.reference,
            solver: rec.meta.solver.clone(),
            iterations: s.iterations,
            residual: s.residual,
            tv: s.tv,
            converged: s.converged,
        });
    }
    Ok(report)
}

/// All in-memory artifacts of one run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub prepared: Prepared,
    pub measurements: MeasurementSet,
    pub recovery: Recovery,
    pub report: ExperimentReport,
}

/// Run every stage without touching the file system.
pub fn execute(config: &ExperimentConfig) -> Result<Outcome> {
    let prepared = prepare(config)?;
    let measurements = simulate(&prepared)?;
    let recovery = recover(config, &prepared.schedule, &measurements)?;
    let report = evaluate(&prepared, &measurements, &recovery)?;
    Ok(Outcome {
        prepared,
        measurements,
        recovery,
        report,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_simulation(dir: &Path, p: &Prepared, ms: &MeasurementSet) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join(RESOLVED_CONFIG_FILE), &p.config.to_text())?;
    io::write_schedule(&dir.join(SCHEDULE_STEM), &p.schedule)?;
    io::write_measurements(&dir.join(MEASUREMENT_STEM), ms)?;
    Ok(())
}

pub fn read_simulation(dir: &Path) -> Result<(PatternSchedule, MeasurementSet)> {
    let schedule = io::read_schedule(&dir.join(SCHEDULE_STEM).with_extension("smcs"))?;
    let ms = io::read_measurements(&dir.join(MEASUREMENT_STEM))?;
    Ok((schedule, ms))
}

pub fn write_recovery(dir: &Path, rec: &Recovery) -> Result<()> {
    create_dir(dir)?;
    io::write_raw(&dir.join(RECOVERED_FILE), &stack_frames(&rec.frames))?;
    for (k, f) in rec.frames.iter().enumerate() {
        io::write_pgm16(&dir.join(format!("frame_{k:03}.pgm")), f)?;
    }
    let meta = serde_json::to_string_pretty(&rec.meta).map_err(|source| PipelineError::Json {
        path: dir.join(RECOVERY_META_FILE),
        source,
    })?;
    write_text(&dir.join(RECOVERY_META_FILE), &meta)?;
    let path = dir.join(DIAGNOSTICS_FILE);
    let file = fs::File::create(&path).map_err(|source| PipelineError::Io {
        path: path.clone(),
        source,
    })?;
    io::write_trace_csv(file, &rec.trace)?;
    Ok(())
}

pub fn read_recovery(dir: &Path) -> Result<Recovery> {
    let volume: Array3<f64> = io::read_raw(&dir.join(RECOVERED_FILE))?;
    let meta: RecoveryMeta = read_json(&dir.join(RECOVERY_META_FILE))?;
    Ok(Recovery {
        frames: volume.axis_iter(Axis(0)).map(|f| f.to_owned()).collect(),
        meta,
        trace: Vec::new(),
    })
}

pub fn write_report(dir: &Path, report: &ExperimentReport) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join(REPORT_FILE);
    let file = fs::File::create(&path).map_err(|source| PipelineError::Io {
        path: path.clone(),
        source,
    })?;
    report.write_csv(file)?;
    Ok(())
}

/// Full pipeline with every artifact written to the configured directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let outcome = execute(config)?;
    let dir = &config.out;
    write_simulation(dir, &outcome.prepared, &outcome.measurements)?;
    write_recovery(dir, &outcome.recovery)?;
    write_report(dir, &outcome.report)?;
    Ok(outcome.report)
}

/// `simulate` stage: schedule and measurements on disk.
pub fn stage_simulate(config: &ExperimentConfig) -> Result<()> {
    let p = prepare(config)?;
    let ms = simulate(&p)?;
    write_simulation(&config.out, &p, &ms)
}

/// `recover` stage: reads the simulation artifacts from the output directory.
pub fn stage_recover(config: &ExperimentConfig) -> Result<RecoveryMeta> {
    let (schedule, ms) = read_simulation(&config.out)?;
    let rec = recover(config, &schedule, &ms)?;
    write_recovery(&config.out, &rec)?;
    Ok(rec.meta)
}

/// `report` stage: scores the recovered frames on disk.
pub fn stage_report(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let p = prepare(config)?;
    let (_, ms) = read_simulation(&config.out)?;
    let rec = read_recovery(&config.out)?;
    let report = evaluate(&p, &ms, &rec)?;
    write_report(&config.out, &report)?;
    Ok(report)
}
