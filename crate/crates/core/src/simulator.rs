//! Forward models for line-sensor and single-pixel acquisition.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codes::PatternSchedule;
use crate::error::{Error, Result};
use crate::optics::CameraConfig;

/// Ground-truth image sequence.
///
/// Frames are `rows × cols` with rows along the line-sensor axis and columns
/// along the multiplexed axis. Intensities are normalized radiance in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneVideo {
    frames: Vec<Array2<f64>>,
    frame_rate: f64,
}

impl SceneVideo {
    pub fn new(frames: Vec<Array2<f64>>, frame_rate: f64) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("scene", "has no frames"))?;
        let dim = first.dim();
        if dim.0 == 0 || dim.1 == 0 {
            return Err(Error::invalid("scene", "frames are empty"));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::invalid(
                "frame_rate",
                format!("must be positive, got {frame_rate}"),
            ));
        }
        for (k, f) in frames.iter().enumerate() {
            if f.dim() != dim {
                return Err(Error::mismatch(
                    "scene frame",
                    format!("{dim:?}"),
                    format!("{:?} at frame {k}", f.dim()),
                ));
            }
            if let Some(v) = f
                .iter()
                .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
            {
                return Err(Error::invalid(
                    "scene",
                    format!("frame {k} holds {v} outside [0, 1]"),
                ));
            }
        }
        Ok(SceneVideo { frames, frame_rate })
    }

    /// A single static frame. The frame rate is irrelevant and set to 1 Hz.
    pub fn still(frame: Array2<f64>) -> Result<Self> {
        SceneVideo::new(vec![frame], 1.0)
    }

    pub fn frames(&self) -> &[Array2<f64>] {
        &self.frames
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.frames[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.frames[0].ncols()
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.frame_rate
    }

    /// Index of the frame shown at `time` (zero-order hold, clamped to the
    /// last frame).
    pub fn frame_index_at(&self, time: f64) -> usize {
        let k = (time * self.frame_rate + 1e-9).floor().max(0.0) as usize;
        k.min(self.frames.len() - 1)
    }
}

/// Whether measurement columns correspond to 0/1 codes as displayed or to
/// the ±1 codes recovered by [`crate::codes::demean`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coding {
    Binary,
    Signed,
}

/// How each measurement column was formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Acquisition {
    /// One reading per sensor row: `y_t = X_t φ_t`.
    LineSensor,
    /// One scalar per pattern over a `rows × cols` frame: `y_t = ⟨X_t, Φ_t⟩`.
    SinglePixel { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    /// Readings with one column per schedule slot.
    pub values: Array2<f64>,
    pub timestamps: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub schedule_ref: String,
    /// Schedule slot of the first column.
    pub first_slot: usize,
    pub coding: Coding,
    pub acquisition: Acquisition,
}

impl MeasurementSet {
    /// Schedule slots covered by the columns.
    pub fn slots(&self) -> Range<usize> {
        self.first_slot..self.first_slot + self.len()
    }

    /// Sub-window of columns `range` (relative to this set).
    pub fn window(&self, range: Range<usize>) -> Result<MeasurementSet> {
        if range.start > range.end || range.end > self.len() {
            return Err(Error::invalid(
                "window",
                format!("{range:?} outside 0..{}", self.len()),
            ));
        }
        Ok(MeasurementSet {
            values: self.values.slice(s![.., range.clone()]).to_owned(),
            timestamps: self.timestamps[range.clone()].to_vec(),
            first_slot: self.first_slot + range.start,
            ..self.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    /// Number of scalar readings.
    pub fn scalar_count(&self) -> usize {
        self.values.len()
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len().max(1) as f64
    }
}

fn check_sigma(noise_sigma: f64) -> Result<()> {
    if noise_sigma.is_finite() && noise_sigma >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "noise_sigma",
            format!("must be non-negative, got {noise_sigma}"),
        ))
    }
}

/// Noise for column `t`. Each column has its own ChaCha stream keyed by
/// `(seed, t)`, so results do not depend on evaluation order.
fn add_noise(column: &mut [f64], sigma: f64, seed: u64, t: usize) {
    if sigma == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    for v in column {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
}

/// Runs of consecutive slots that see the same scene frame.
fn hold_runs(scene: &SceneVideo, timestamps: &[f64]) -> Vec<(usize, Range<usize>)> {
    let mut runs: Vec<(usize, Range<usize>)> = Vec::new();
    for (t, &ts) in timestamps.iter().enumerate() {
        let k = scene.frame_index_at(ts);
        match runs.last_mut() {
            Some((frame, r)) if *frame == k => r.end = t + 1,
            _ => runs.push((k, t..t + 1)),
        }
    }
    runs
}

/// Line-sensor acquisition `y_t = X_t φ_t + e_t` over the whole schedule.
///
/// `X_t` is the scene frame active at the slot's timestamp (zero-order hold)
/// and `e_t` is i.i.d. Gaussian with deviation `noise_sigma`.
pub fn simulate_lisens(
    scene: &SceneVideo,
    schedule: &PatternSchedule,
    noise_sigma: f64,
    seed: u64,
    timing: &CameraConfig,
) -> Result<MeasurementSet> {
    check_sigma(noise_sigma)?;
    timing.validate()?;
    if schedule.order() != scene.cols() {
        return Err(Error::mismatch(
            "pattern length vs scene columns",
            scene.cols(),
            schedule.order(),
        ));
    }
    let timestamps = timing.timestamps(schedule.len());
    let mut values = Array2::<f64>::zeros((scene.rows(), schedule.len()));
    for (k, run) in hold_runs(scene, &timestamps) {
        let codes = schedule.code_matrix(run.clone(), Coding::Binary);
        let block = scene.frames()[k].dot(&codes);
        values.slice_mut(s![.., run]).assign(&block);
    }
    finish(
        values,
        timestamps,
        noise_sigma,
        seed,
        schedule.id(),
        Acquisition::LineSensor,
    )
}

fn finish(
    values: Array2<f64>,
    timestamps: Vec<f64>,
    noise_sigma: f64,
    seed: u64,
    schedule_ref: String,
    acquisition: Acquisition,
) -> Result<MeasurementSet> {
    // Column-major so each column is a contiguous slice for its noise stream.
    let (rows, cols) = values.dim();
    let mut data: Vec<f64> = values.t().iter().copied().collect();
    data.par_chunks_mut(rows)
        .enumerate()
        .for_each(|(t, col)| add_noise(col, noise_sigma, seed, t));
    let values = Array2::from_shape_vec((cols, rows), data)
        .expect("shape preserved")
        .reversed_axes()
        .as_standard_layout()
        .into_owned();
    Ok(MeasurementSet {
        values,
        timestamps,
        noise_sigma,
        seed,
        schedule_ref,
        first_slot: 0,
        coding: Coding::Binary,
        acquisition,
    })
}

/// Full-frame binary DMD patterns for a single-pixel camera.
#[derive(Debug, Clone, PartialEq)]
pub struct SpcPatterns {
    pub patterns: Vec<Array2<u8>>,
    pub schedule_ref: String,
}

impl SpcPatterns {
    /// Reshape each length-`rows·cols` code of `schedule` row-major into a
    /// `rows × cols` pattern.
    pub fn from_schedule(schedule: &PatternSchedule, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != schedule.order() {
            return Err(Error::mismatch(
                "SPC pattern size",
                schedule.order(),
                rows * cols,
            ));
        }
        let patterns = (0..schedule.len())
            .map(|t| {
                schedule
                    .pattern(t)
                    .to_owned()
                    .into_shape_with_order((rows, cols))
                    .expect("size checked")
            })
            .collect();
        Ok(SpcPatterns {
            patterns,
            schedule_ref: schedule.id(),
        })
    }

    /// Rank-one patterns `1·φ_tᵀ` with the schedule's column codes.
    pub fn rank_one(schedule: &PatternSchedule, rows: usize) -> Self {
        let patterns = (0..schedule.len())
            .map(|t| {
                let code = schedule.pattern(t);
                Array2::from_shape_fn((rows, code.len()), |(_, j)| code[j])
            })
            .collect();
        SpcPatterns {
            patterns,
            schedule_ref: schedule.id(),
        }
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

/// Single-pixel acquisition `y_t = ⟨X_t, Φ_t⟩ + e_t`.
///
/// Returns a `1 × T` measurement set with the same noise and timing
/// semantics as [`simulate_lisens`].
pub fn simulate_spc(
    scene: &SceneVideo,
    patterns: &SpcPatterns,
    noise_sigma: f64,
    seed: u64,
    timing: &CameraConfig,
) -> Result<MeasurementSet> {
    check_sigma(noise_sigma)?;
    timing.validate()?;
    let shape = (scene.rows(), scene.cols());
    if let Some((t, p)) = patterns
        .patterns
        .iter()
        .enumerate()
        .find(|(_, p)| p.dim() != shape)
    {
        return Err(Error::mismatch(
            "SPC pattern",
            format!("{shape:?}"),
            format!("{:?} at slot {t}", p.dim()),
        ));
    }
    let timestamps = timing.timestamps(patterns.len());
    let values: Vec<f64> = patterns
        .patterns
        .par_iter()
        .zip(timestamps.par_iter())
        .map(|(p, &ts)| {
            let x = &scene.frames()[scene.frame_index_at(ts)];
            x.iter()
                .zip(p.iter())
                .filter(|(_, &b)| b == 1)
                .map(|(v, _)| *v)
                .sum()
        })
        .collect();
    let values = Array2::from_shape_vec((1, values.len()), values).expect("1 × T");
    finish(
        values,
        timestamps,
        noise_sigma,
        seed,
        patterns.schedule_ref.clone(),
        Acquisition::SinglePixel {
            rows: shape.0,
            cols: shape.1,
        },
    )
}

/// Consecutive measurement columns associated with one recovered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBlock {
    pub index: usize,
    /// Schedule slots covered by the block.
    pub slots: Range<usize>,
    /// Measurement columns, `rows × len`.
    pub values: Array2<f64>,
    /// Code columns matching `values`, in the measurement set's coding.
    pub codes: Array2<f64>,
    /// Marks inserted mean-tracking columns.
    pub mean_track: Vec<bool>,
    pub coding: Coding,
    pub acquisition: Acquisition,
}

impl FrameBlock {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Measurements and codes, optionally dropping mean-tracking columns.
    pub fn data(&self, include_mean_track: bool) -> (Array2<f64>, Array2<f64>) {
        if include_mean_track {
            return (self.values.clone(), self.codes.clone());
        }
        let keep: Vec<usize> = (0..self.len()).filter(|&c| !self.mean_track[c]).collect();
        (
            self.values.select(Axis(1), &keep),
            self.codes.select(Axis(1), &keep),
        )
    }
}

/// Split the measurement columns into `q` contiguous blocks whose sizes
/// differ by at most one, with the larger blocks first.
pub fn group_frames(
    measurements: &MeasurementSet,
    schedule: &PatternSchedule,
    q: usize,
) -> Result<Vec<FrameBlock>> {
    let total = measurements.len();
    if q == 0 || q > total {
        return Err(Error::invalid(
            "Q",
            format!("must lie in 1..={total}, got {q}"),
        ));
    }
    let window = measurements.slots();
    if window.end > schedule.len() {
        return Err(Error::mismatch(
            "measurement slots vs schedule",
            schedule.len(),
            window.end,
        ));
    }
    if measurements.schedule_ref != schedule.id() {
        return Err(Error::invalid(
            "schedule",
            "does not match the measurements' schedule_ref",
        ));
    }
    let (base, extra) = (total / q, total % q);
    let mut start = 0;
    let mut blocks = Vec::with_capacity(q);
    for k in 0..q {
        let len = base + usize::from(k < extra);
        let cols = start..start + len;
        start += len;
        let slots = window.start + cols.start..window.start + cols.end;
        blocks.push(FrameBlock {
            index: k,
            slots: slots.clone(),
            values: measurements.values.slice(s![.., cols]).to_owned(),
            codes: schedule.code_matrix(slots.clone(), measurements.coding),
            mean_track: slots.map(|t| schedule.is_mean_track(t)).collect(),
            coding: measurements.coding,
            acquisition: measurements.acquisition,
        });
    }
    Ok(blocks)
}

/// Row sums, i.e. the reading under an all-ones code.
pub fn line_integrals(x: ArrayView2<'_, f64>) -> Array1<f64> {
    x.sum_axis(Axis(1))
}
