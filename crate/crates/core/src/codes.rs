//! Hadamard multiplexing codes and measurement schedules.
//!
//! A schedule is a time-ordered list of binary column codes `φ_t`. Each code
//! is displayed on the DMD as the rank-one pattern `1·φ_tᵀ`. Codes are rows of
//! a column-permuted Sylvester Hadamard matrix with `-1` mapped to `0`, and
//! all-ones "mean tracking" codes may be interleaved at a fixed period so the
//! 0/1 measurements can be converted back to their ±1 equivalents.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{Coding, MeasurementSet};

/// Sign of entry `(row, col)` of the natural-order Sylvester Hadamard matrix.
#[inline]
pub fn hadamard_sign(row: usize, col: usize) -> i8 {
    if (row & col).count_ones().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

/// Sylvester Hadamard matrix of the given order, built by the block
/// recursion `H_2n = [[H, H], [H, -H]]`.
pub fn hadamard(order: usize) -> Result<Array2<i8>> {
    if order == 0 || !order.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(order));
    }
    let mut h = Array2::<i8>::ones((order, order));
    let mut size = 1;
    while size < order {
        for i in 0..size {
            for j in 0..size {
                let v = h[[i, j]];
                h[[i, j + size]] = v;
                h[[i + size, j]] = v;
                h[[i + size, j + size]] = -v;
            }
        }
        size *= 2;
    }
    Ok(h)
}

/// In-place unnormalized fast Walsh-Hadamard transform in natural order.
///
/// Computes `H·x` for the Sylvester matrix of order `x.len()`.
pub fn fwht(x: &mut [f64]) -> Result<()> {
    let n = x.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut half = 1;
    while half < n {
        for block in x.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (u, v) = (*a, *b);
                *a = u + v;
                *b = u - v;
            }
        }
        half *= 2;
    }
    Ok(())
}

/// Order in which Hadamard rows are consumed by a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowOrder {
    /// Rows `0, 1, 2, …` of the permuted matrix.
    Natural,
    /// Row 0 (the DC row) first, then the remaining rows in a seeded random
    /// order.
    Shuffled,
}

impl RowOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            RowOrder::Natural => "natural",
            RowOrder::Shuffled => "shuffled",
        }
    }
}

impl std::str::FromStr for RowOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(RowOrder::Natural),
            "shuffled" => Ok(RowOrder::Shuffled),
            other => Err(Error::invalid(
                "row_order",
                format!("expected `natural` or `shuffled`, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub order: usize,
    pub count: usize,
    pub seed: u64,
    /// One all-ones pattern every `period` slots, at `t ≡ 0 (mod period)`.
    pub mean_track_period: Option<usize>,
    pub row_order: RowOrder,
}

impl ScheduleParams {
    pub fn new(order: usize, count: usize, seed: u64, mean_track_period: Option<usize>) -> Self {
        ScheduleParams {
            order,
            count,
            seed,
            mean_track_period,
            row_order: RowOrder::Shuffled,
        }
    }

    pub fn with_row_order(mut self, row_order: RowOrder) -> Self {
        self.row_order = row_order;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || !self.order.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(self.order));
        }
        if self.order > u32::MAX as usize {
            return Err(Error::invalid("order", "exceeds 2^32"));
        }
        if self.count == 0 {
            return Err(Error::invalid("count", "must be at least 1"));
        }
        if let Some(p) = self.mean_track_period {
            if p < 2 {
                return Err(Error::invalid(
                    "mean_track_period",
                    format!("must be >= 2 when enabled, got {p}"),
                ));
            }
        }
        Ok(())
    }
}

/// Time-ordered binary column codes for one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSchedule {
    params: ScheduleParams,
    permutation: Vec<u32>,
    row_sequence: Vec<u32>,
    /// `count × order` matrix of 0/1 codes, one code per row.
    patterns: Array2<u8>,
    /// Hadamard row shown at each slot, `None` for mean-tracking slots.
    rows: Vec<Option<u32>>,
}

/// Build a schedule with the default (shuffled) row order.
pub fn build_schedule(
    order: usize,
    count: usize,
    seed: u64,
    mean_track_period: Option<usize>,
) -> Result<PatternSchedule> {
    PatternSchedule::build(ScheduleParams::new(order, count, seed, mean_track_period))
}

impl PatternSchedule {
    pub fn build(params: ScheduleParams) -> Result<Self> {
        params.validate()?;
        let n = params.order;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

        let mut permutation: Vec<u32> = (0..n as u32).collect();
        permutation.shuffle(&mut rng);

        let mut row_sequence: Vec<u32> = (0..n as u32).collect();
        if params.row_order == RowOrder::Shuffled {
            row_sequence[1..].shuffle(&mut rng);
        }

        let mut patterns = Array2::<u8>::zeros((params.count, n));
        let mut rows = Vec::with_capacity(params.count);
        let mut next_row = 0usize;
        for t in 0..params.count {
            let tracking = params.mean_track_period.is_some_and(|p| t % p == 0);
            let mut code = patterns.row_mut(t);
            if tracking {
                code.fill(1);
                rows.push(None);
            } else {
                let r = row_sequence[next_row % n] as usize;
                next_row += 1;
                for (j, c) in code.iter_mut().enumerate() {
                    *c = u8::from(hadamard_sign(r, permutation[j] as usize) > 0);
                }
                rows.push(Some(r as u32));
            }
        }

        Ok(PatternSchedule {
            params,
            permutation,
            row_sequence,
            patterns,
            rows,
        })
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    /// Pattern length `N`.
    pub fn order(&self) -> usize {
        self.params.order
    }

    pub fn len(&self) -> usize {
        self.params.count
    }

    pub fn is_empty(&self) -> bool {
        self.params.count == 0
    }

    pub fn seed(&self) -> u64 {
        self.params.seed
    }

    /// Column permutation applied to the base Hadamard matrix: column `j` of
    /// the permuted matrix is column `permutation[j]` of the base matrix.
    pub fn permutation(&self) -> &[u32] {
        &self.permutation
    }

    pub fn row_sequence(&self) -> &[u32] {
        &self.row_sequence
    }

    pub fn patterns(&self) -> &Array2<u8> {
        &self.patterns
    }

    pub fn pattern(&self, t: usize) -> ArrayView1<'_, u8> {
        self.patterns.row(t)
    }

    /// ±1 code underlying slot `t`. Mean-tracking slots map to all `+1`.
    pub fn signed(&self, t: usize) -> Array1<i8> {
        self.patterns.row(t).mapv(|b| if b == 1 { 1 } else { -1 })
    }

    pub fn hadamard_row(&self, t: usize) -> Option<usize> {
        self.rows[t].map(|r| r as usize)
    }

    pub fn is_mean_track(&self, t: usize) -> bool {
        self.rows[t].is_none()
    }

    pub fn mean_track_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&t| self.is_mean_track(t)).collect()
    }

    /// Slots whose code is all ones: inserted tracking slots plus every
    /// appearance of the Hadamard DC row.
    pub fn is_all_ones(&self, t: usize) -> bool {
        matches!(self.rows[t], None | Some(0))
    }

    /// Stable identifier binding measurements to this schedule.
    pub fn id(&self) -> String {
        let p = &self.params;
        format!(
            "hadamard-n{}-t{}-s{}-p{}-{}",
            p.order,
            p.count,
            p.seed,
            p.mean_track_period.unwrap_or(0),
            p.row_order.as_str()
        )
    }

    /// `N × len` matrix whose columns are the codes of the given slots, in
    /// the requested coding.
    pub fn code_matrix(&self, slots: Range<usize>, coding: Coding) -> Array2<f64> {
        let n = self.order();
        let mut m = Array2::<f64>::zeros((n, slots.len()));
        for (c, t) in slots.enumerate() {
            for (j, &b) in self.patterns.row(t).iter().enumerate() {
                m[[j, c]] = match (coding, b) {
                    (_, 1) => 1.0,
                    (Coding::Binary, _) => 0.0,
                    (Coding::Signed, _) => -1.0,
                };
            }
        }
        m
    }

    /// Rebuild a schedule from its parameters and check it against stored
    /// permutation, row order and codes.
    pub(crate) fn from_parts(
        params: ScheduleParams,
        permutation: &[u32],
        row_sequence: &[u32],
        patterns: &Array2<u8>,
    ) -> Result<Self> {
        let rebuilt = PatternSchedule::build(params)?;
        if rebuilt.permutation != permutation {
            return Err(Error::invalid("permutation", "does not match the seed"));
        }
        if rebuilt.row_sequence != row_sequence {
            return Err(Error::invalid("row_sequence", "does not match the seed"));
        }
        if rebuilt.patterns != patterns {
            return Err(Error::invalid("patterns", "do not match the parameters"));
        }
        Ok(rebuilt)
    }
}

/// Mean-estimate weights for one column: `(column, weight)` pairs over the
/// all-ones columns, or empty when the column keeps its raw value.
type MeanWeights = Vec<(usize, f64)>;

/// Weights of the mean estimate for every column of a window starting at
/// `first`. `None` when the window holds no all-ones sample.
fn mean_weights(
    schedule: &PatternSchedule,
    first: usize,
    times: &[f64],
) -> Option<Vec<MeanWeights>> {
    let count = times.len();
    let samples: Vec<usize> = (0..count)
        .filter(|&t| schedule.is_all_ones(first + t))
        .collect();
    if samples.is_empty() {
        return None;
    }
    let weights = (0..count)
        .map(|t| {
            if schedule.is_all_ones(first + t) {
                return Vec::new();
            }
            let after = samples.partition_point(|&s| times[s] < times[t]);
            if after == 0 {
                return vec![(samples[0], 1.0)];
            }
            if after == samples.len() {
                return vec![(samples[after - 1], 1.0)];
            }
            let (a, b) = (samples[after - 1], samples[after]);
            let w = (times[t] - times[a]) / (times[b] - times[a]);
            vec![(a, 1.0 - w), (b, w)]
        })
        .collect();
    Some(weights)
}

fn check_window(measurements: &MeasurementSet, schedule: &PatternSchedule) -> Result<()> {
    if measurements.schedule_ref != schedule.id() {
        return Err(Error::invalid(
            "schedule",
            format!(
                "measurements were taken with `{}`, not `{}`",
                measurements.schedule_ref,
                schedule.id()
            ),
        ));
    }
    let count = measurements.values.ncols();
    if measurements.first_slot + count > schedule.len() {
        return Err(Error::mismatch(
            "demean window end",
            schedule.len(),
            measurements.first_slot + count,
        ));
    }
    if measurements.timestamps.len() != count {
        return Err(Error::mismatch(
            "timestamps",
            count,
            measurements.timestamps.len(),
        ));
    }
    Ok(())
}

/// Convert 0/1-coded measurements to their ±1-coded equivalents.
///
/// For a 0/1 code `φ01 = (1 + φ±)/2` we have `X·φ± = 2·X·φ01 − X·1`, and the
/// scene mean `X·1` is read off the all-ones slots. Between all-ones samples
/// the mean is interpolated linearly in time and held constant outside them.
/// `fallback_mean`, if given, is used only when the window holds no all-ones
/// sample. All-ones slots keep their measured value (their ±1 code is the
/// all-ones vector itself).
pub fn demean(
    measurements: &MeasurementSet,
    schedule: &PatternSchedule,
    fallback_mean: Option<ArrayView1<'_, f64>>,
) -> Result<MeasurementSet> {
    if measurements.coding != Coding::Binary {
        return Err(Error::invalid("measurements", "already ±1 coded"));
    }
    check_window(measurements, schedule)?;
    let (rows, count) = measurements.values.dim();
    let first = measurements.first_slot;
    let y = &measurements.values;
    let weights = mean_weights(schedule, first, &measurements.timestamps);
    let fallback = match (&weights, fallback_mean) {
        (Some(_), _) => None,
        (None, Some(m)) if m.len() == rows => Some(m),
        (None, Some(m)) => return Err(Error::mismatch("fallback mean", rows, m.len())),
        (None, None) => return Err(Error::NoMeanSample),
    };

    let mut out = y.clone();
    for t in 0..count {
        if schedule.is_all_ones(first + t) {
            continue;
        }
        let mean = match (&weights, fallback) {
            (Some(w), _) => w[t].iter().fold(Array1::zeros(rows), |acc, &(c, wc)| {
                acc + &(&y.column(c) * wc)
            }),
            (None, Some(m)) => m.to_owned(),
            (None, None) => unreachable!("checked above"),
        };
        let mut col = out.column_mut(t);
        col *= 2.0;
        col -= &mean;
    }

    Ok(MeasurementSet {
        values: out,
        coding: Coding::Signed,
        ..measurements.clone()
    })
}

/// Per-column noise variance after [`demean`], in units of the raw noise
/// variance: 1 for all-ones columns, `4 + Σ w²` for the others (the mean
/// estimate's noise adds to the doubled reading). With a fallback mean the
/// estimate is taken as noise-free.
pub fn demean_noise_gain(
    measurements: &MeasurementSet,
    schedule: &PatternSchedule,
) -> Result<Vec<f64>> {
    check_window(measurements, schedule)?;
    let first = measurements.first_slot;
    let weights = mean_weights(schedule, first, &measurements.timestamps);
    Ok((0..measurements.values.ncols())
        .map(|t| {
            if schedule.is_all_ones(first + t) {
                1.0
            } else {
                4.0 + weights
                    .as_ref()
                    .map_or(0.0, |w| w[t].iter().map(|(_, wc)| wc * wc).sum())
            }
        })
        .collect())
}
