//! Simulation and reconstruction for spatial-multiplexing compressive
//! cameras: line-sensor (LiSens) and single-pixel (SPC) architectures.
//!
//! The modules follow the acquisition pipeline:
//!
//! - [`codes`]: Hadamard codes, measurement schedules, ±1 conversion.
//! - [`optics`]: measurement-rate design space and optical layout.
//! - [`simulator`]: forward models, noise, burst timing, frame grouping.
//! - [`recovery`]: pseudoinverse, TV-constrained image and video recovery,
//!   median filtering.
//! - [`metrics`]: under-sampling, reconstruction SNR, reports.
//! - [`io`]: container formats.

pub mod codes;
pub mod error;
pub mod io;
pub mod metrics;
pub mod operators;
pub mod optics;
pub mod phantom;
pub mod recovery;
pub mod simulator;

pub use codes::{build_schedule, demean, hadamard, PatternSchedule, RowOrder, ScheduleParams};
pub use error::{Error, Result};
pub use metrics::{rsnr, under_sampling, CameraModel, ExperimentReport, Reference, RunRecord};
pub use optics::{burst_rate, f_min, measurement_rate, BurstTiming, CameraConfig, OpticalDesign};
pub use recovery::{
    median3, recover_pinv, recover_tv2d, recover_tv3d, RecoveredVideo, RecoveryParams, TvWeights,
};
pub use simulator::{
    group_frames, simulate_lisens, simulate_spc, Acquisition, Coding, FrameBlock, MeasurementSet,
    SceneVideo, SpcPatterns,
};
