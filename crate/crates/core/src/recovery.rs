//! Image and video recovery: pseudoinverse at the Nyquist rate,
//! total-variation-constrained recovery below it, and a 3×3×3 median
//! post-filter.
//!
//! The TV problems are
//!
//! ```text
//! minimize  Σ_k TV(X_k)   subject to   Σ_k ‖Y_k − A_k(X_k)‖²_F ≤ ε²
//! ```
//!
//! with isotropic spatial (one frame) or spatio-temporal (several frames)
//! TV, solved by a first-order primal-dual iteration. When every `A_k` has
//! orthogonal rows of a common norm the data constraint is enforced by exact
//! projection onto the feasible set, so every iterate is feasible. Otherwise
//! the constraint is dualized through a projection onto the Frobenius ball.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{
    sensing_norm_squared, tv_iso, tv_iso_volume, GradientField, LineSensing, PixelSensing, Sensing,
    VolumeGradient,
};
use crate::simulator::{Acquisition, FrameBlock};

const POWER_ITERATIONS: usize = 20;
/// Power iteration underestimates; inflate before deriving step sizes.
const NORM_SAFETY: f64 = 1.05;
const CHECK_EVERY: usize = 10;
/// Primal over dual step `τ/σ`, with `τσ‖K‖² = 1`. Tuned for images in `[0, 1]`.
const STEP_RATIO: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvWeights {
    pub spatial: f64,
    pub temporal: f64,
}

impl Default for TvWeights {
    fn default() -> Self {
        TvWeights {
            spatial: 1.0,
            temporal: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryParams {
    /// Radius of the data-fidelity ball, in measurement units.
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Relative change between iterates below which the solver stops.
    pub tolerance: f64,
    pub tv_weights: TvWeights,
    /// Keep mean-tracking columns in the sensing blocks.
    pub include_mean_track: bool,
}

impl Default for RecoveryParams {
    fn default() -> Self {
        RecoveryParams {
            epsilon: 0.0,
            max_iterations: 5000,
            tolerance: 1e-6,
            tv_weights: TvWeights::default(),
            include_mean_track: false,
        }
    }
}

impl RecoveryParams {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// Discrepancy-principle radius `σ·√(rows·count)` for `count` readings of
    /// `rows` values each with noise deviation `sigma`.
    pub fn discrepancy_epsilon(sigma: f64, rows: usize, count: usize) -> f64 {
        sigma * ((rows * count) as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::invalid(
                "epsilon",
                format!("must be >= 0, got {}", self.epsilon),
            ));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::invalid(
                "tolerance",
                format!("must be > 0, got {}", self.tolerance),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be positive"));
        }
        let w = self.tv_weights;
        if !(w.spatial > 0.0 && w.temporal > 0.0 && w.spatial.is_finite() && w.temporal.is_finite())
        {
            return Err(Error::invalid("tv_weights", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverVariant {
    /// Exact projection onto the feasible set.
    Projected,
    /// Constraint handled in the dual.
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub residual: f64,
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub variant: SolverVariant,
    pub iterations: usize,
    pub converged: bool,
    /// `false` if no retained iterate met the data constraint.
    pub feasible: bool,
    /// Iteration of the returned (best-TV feasible) iterate.
    pub best_iteration: usize,
    pub residual: f64,
    pub tv: f64,
    pub epsilon: f64,
    pub trace: Vec<TraceRecord>,
}

impl SolveDiagnostics {
    /// Converged to a feasible point.
    pub fn ok(&self) -> bool {
        self.converged && self.feasible
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub iterations: usize,
    pub residual: f64,
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvImage {
    pub image: Array2<f64>,
    pub diagnostics: SolveDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredVideo {
    pub frames: Vec<Array2<f64>>,
    pub frame_diagnostics: Vec<FrameDiagnostics>,
    pub diagnostics: SolveDiagnostics,
}

impl RecoveredVideo {
    pub fn volume(&self) -> Array3<f64> {
        stack_frames(&self.frames)
    }
}

pub fn stack_frames(frames: &[Array2<f64>]) -> Array3<f64> {
    let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
    ndarray::stack(Axis(0), &views).expect("frames share a shape")
}

pub fn unstack_frames(volume: ArrayView3<'_, f64>) -> Vec<Array2<f64>> {
    volume.outer_iter().map(|f| f.to_owned()).collect()
}

fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Minimum-norm least-squares recovery `X̂ = Y Φ†` for `Y = X Φ` with `Φ`
/// of full row rank.
pub fn recover_pinv(y: ArrayView2<'_, f64>, phi: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (n, t) = phi.dim();
    if y.ncols() != t {
        return Err(Error::mismatch(
            "measurement columns vs codes",
            t,
            y.ncols(),
        ));
    }
    if t < n {
        return Err(Error::RankDeficient {
            rank: t,
            required: n,
            detail: format!("only {t} codes for {n} unknowns per row"),
        });
    }
    let gram = phi.dot(&phi.t());
    let g = DMatrix::from_fn(n, n, |i, j| gram[[i, j]]);
    let rank_error = |g: DMatrix<f64>| {
        let svd = g.svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd.rank(smax * 1e-12);
        Error::RankDeficient {
            rank,
            required: n,
            detail: format!("ΦΦᵀ has {} near-zero singular values", n - rank),
        }
    };
    let chol = match g.clone().cholesky() {
        Some(c) => c,
        None => return Err(rank_error(g)),
    };
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| {
        (lo.min(d), hi.max(d))
    });
    if (lo / hi).powi(2) < 1e-12 {
        return Err(rank_error(g));
    }
    // X̂ᵀ = (ΦΦᵀ)⁻¹ Φ Yᵀ
    let rhs = phi.dot(&y.t());
    let b = DMatrix::from_fn(n, y.nrows(), |i, j| rhs[[i, j]]);
    let sol = chol.solve(&b);
    Ok(Array2::from_shape_fn((y.nrows(), n), |(i, j)| sol[(j, i)]))
}

/// One frame of a TV problem: sensing operator and its data.
pub struct FrameProblem<'a> {
    pub op: &'a dyn Sensing,
    pub data: ArrayView2<'a, f64>,
}

fn common_gram_scale(frames: &[FrameProblem<'_>]) -> Option<f64> {
    let c = frames.first()?.op.gram_scale()?;
    frames
        .iter()
        .all(|f| {
            f.op.gram_scale()
                .is_some_and(|ck| (ck - c).abs() <= 1e-12 * c)
        })
        .then_some(c)
}

fn residuals(frames: &[FrameProblem<'_>], v: ArrayView3<'_, f64>) -> Vec<Array2<f64>> {
    frames
        .par_iter()
        .zip(v.outer_iter().into_par_iter())
        .map(|(f, x)| f.op.apply(x) - f.data)
        .collect()
}

fn total_norm(parts: &[Array2<f64>]) -> f64 {
    parts
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Euclidean projection onto `{V : Σ‖A_k V_k − Y_k‖² ≤ ε²}` when
/// `A_k A_kᵀ = c·I` for every frame.
fn project_feasible(frames: &[FrameProblem<'_>], c: f64, epsilon: f64, v: &mut Array3<f64>) {
    let r = residuals(frames, v.view());
    let norm = total_norm(&r);
    if norm <= epsilon {
        return;
    }
    let shrink = (1.0 - epsilon / norm) / c;
    let updates: Vec<Array2<f64>> = frames
        .par_iter()
        .zip(r.par_iter())
        .map(|(f, rk)| f.op.adjoint(rk.view()))
        .collect();
    for (mut x, u) in v.outer_iter_mut().zip(updates) {
        x.scaled_add(-shrink, &u);
    }
}

/// Project each pointwise gradient vector onto the unit ball.
fn project_unit_balls(p: &mut GradientField) {
    Zip::from(&mut p.gx)
        .and(&mut p.gy)
        .and(&mut p.gt)
        .par_for_each(|a, b, c| {
            let n = (*a * *a + *b * *b + *c * *c).sqrt();
            if n > 1.0 {
                *a /= n;
                *b /= n;
                *c /= n;
            }
        });
}

fn relative_change(new: &Array3<f64>, old: &Array3<f64>) -> f64 {
    let (num, den) = Zip::from(new).and(old).fold((0.0, 0.0), |(n, d), a, b| {
        (n + (a - b) * (a - b), d + a * a)
    });
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

struct Best {
    volume: Array3<f64>,
    iteration: usize,
    tv: f64,
    residual: f64,
}

/// Solve the (possibly multi-frame) TV-constrained problem.
pub fn solve_tv(
    frames: &[FrameProblem<'_>],
    params: &RecoveryParams,
    init: Option<Array3<f64>>,
) -> Result<(Array3<f64>, SolveDiagnostics)> {
    params.validate()?;
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("blocks", "need at least one frame"))?;
    let (rows, cols) = first.op.image_dim();
    for f in frames {
        if f.op.image_dim() != (rows, cols) {
            return Err(Error::mismatch(
                "frame image size",
                format!("{:?}", (rows, cols)),
                format!("{:?}", f.op.image_dim()),
            ));
        }
        if f.data.dim() != f.op.measurement_dim() {
            return Err(Error::mismatch(
                "block data",
                format!("{:?}", f.op.measurement_dim()),
                format!("{:?}", f.data.dim()),
            ));
        }
    }
    let dim = (frames.len(), rows, cols);
    let grad = VolumeGradient::new(params.tv_weights.spatial, params.tv_weights.temporal);
    let epsilon = params.epsilon;
    let data_norm = frames
        .iter()
        .map(|f| f.data.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let feasible_bound = epsilon * (1.0 + params.tolerance) + params.tolerance * data_norm;

    let mut x = match init {
        Some(v) if v.dim() == dim => v,
        Some(v) => {
            return Err(Error::mismatch(
                "initial volume",
                format!("{dim:?}"),
                format!("{:?}", v.dim()),
            ))
        }
        None => Array3::zeros(dim),
    };

    let gram = common_gram_scale(frames);
    let variant = if gram.is_some() {
        SolverVariant::Projected
    } else {
        SolverVariant::Split
    };

    let grad_norm2 = grad.norm_squared(dim, POWER_ITERATIONS) * NORM_SAFETY;
    // Sensing operators are rescaled to unit norm in the split variant.
    let data_scale = match variant {
        SolverVariant::Projected => 1.0,
        SolverVariant::Split => {
            frames
                .iter()
                .map(|f| sensing_norm_squared(f.op, POWER_ITERATIONS))
                .fold(0.0f64, f64::max)
                .sqrt()
                * NORM_SAFETY.sqrt()
        }
    };
    let lipschitz = match variant {
        SolverVariant::Projected => grad_norm2.sqrt(),
        SolverVariant::Split => (grad_norm2 + 1.0).sqrt(),
    };
    let tau = STEP_RATIO / lipschitz;
    let sigma = 1.0 / (STEP_RATIO * lipschitz);

    if let Some(c) = gram {
        project_feasible(frames, c, epsilon, &mut x);
    }

    let evaluate = |v: &Array3<f64>| -> (f64, f64) {
        (
            tv_iso_volume(v.view(), &grad),
            total_norm(&residuals(frames, v.view())),
        )
    };

    let mut p = GradientField::zeros(dim);
    let mut q: Vec<Array2<f64>> = frames.iter().map(|f| Array2::zeros(f.data.dim())).collect();
    let mut x_bar = x.clone();
    let mut trace = Vec::new();
    let mut best: Option<Best> = None;
    let mut converged = false;
    let mut iterations = 0;

    let consider =
        |v: &Array3<f64>, it: usize, trace: &mut Vec<TraceRecord>, best: &mut Option<Best>| {
            let (tv, residual) = evaluate(v);
            trace.push(TraceRecord {
                iteration: it,
                residual,
                tv,
            });
            if residual <= feasible_bound && best.as_ref().is_none_or(|b| tv < b.tv) {
                *best = Some(Best {
                    volume: v.clone(),
                    iteration: it,
                    tv,
                    residual,
                });
            }
        };
    consider(&x, 0, &mut trace, &mut best);

    for it in 1..=params.max_iterations {
        iterations = it;
        // Dual ascent on the TV term.
        let g = grad.apply(x_bar.view());
        p.gx.scaled_add(sigma, &g.gx);
        p.gy.scaled_add(sigma, &g.gy);
        p.gt.scaled_add(sigma, &g.gt);
        project_unit_balls(&mut p);

        let mut step = grad.adjoint(&p);
        if variant == SolverVariant::Split {
            // Dual ascent on the data term: prox of the conjugate of the
            // indicator of the ball B(Y/s, ε/s).
            let ax: Vec<Array2<f64>> = frames
                .par_iter()
                .zip(x_bar.outer_iter().into_par_iter())
                .map(|(f, xb)| f.op.apply(xb) / data_scale)
                .collect();
            let mut shifted: Vec<Array2<f64>> = q
                .iter()
                .zip(&ax)
                .zip(frames)
                .map(|((qk, axk), f)| (qk + &(axk * sigma)) / sigma - &(&f.data / data_scale))
                .collect();
            let dist = total_norm(&shifted);
            let radius = epsilon / data_scale;
            if dist > radius {
                for d in &mut shifted {
                    *d *= radius / dist;
                }
            }
            for (((qk, axk), f), d) in q.iter_mut().zip(&ax).zip(frames).zip(&shifted) {
                // q ← v − σ·proj(v/σ), proj = Y/s + d
                let v = &*qk + &(axk * sigma);
                *qk = v - &((&(&f.data / data_scale) + d) * sigma);
            }
            let back: Vec<Array2<f64>> = frames
                .par_iter()
                .zip(q.par_iter())
                .map(|(f, qk)| f.op.adjoint(qk.view()) / data_scale)
                .collect();
            for (mut s, b) in step.outer_iter_mut().zip(back) {
                s += &b;
            }
        }

        let mut x_new = &x - &(step * tau);
        if let Some(c) = gram {
            project_feasible(frames, c, epsilon, &mut x_new);
        }
        let change = relative_change(&x_new, &x);
        x_bar = &x_new * 2.0 - &x;
        x = x_new;

        let done = change < params.tolerance;
        if done || it % CHECK_EVERY == 0 || it == params.max_iterations {
            consider(&x, it, &mut trace, &mut best);
        }
        if done {
            converged = true;
            break;
        }
    }

    let (volume, best_iteration, tv, residual, feasible) = match best {
        Some(b) => (b.volume, b.iteration, b.tv, b.residual, true),
        None => {
            let (tv, residual) = evaluate(&x);
            (x, iterations, tv, residual, false)
        }
    };
    Ok((
        volume,
        SolveDiagnostics {
            variant,
            iterations,
            converged,
            feasible,
            best_iteration,
            residual,
            tv,
            epsilon,
            trace,
        },
    ))
}

/// `min TV(X)` subject to `‖Y − A(X)‖_F ≤ ε` for an arbitrary sensing
/// operator, starting from zero.
pub fn recover_tv2d_with(
    op: &dyn Sensing,
    y: ArrayView2<'_, f64>,
    params: &RecoveryParams,
) -> Result<TvImage> {
    let frames = [FrameProblem { op, data: y }];
    let (v, diagnostics) = solve_tv(&frames, params, None)?;
    Ok(TvImage {
        image: v.index_axis(Axis(0), 0).to_owned(),
        diagnostics,
    })
}

/// `min TV(X)` subject to `‖Y − XΦ‖_F ≤ ε` for a line sensor.
pub fn recover_tv2d(
    y: ArrayView2<'_, f64>,
    phi: ArrayView2<'_, f64>,
    params: &RecoveryParams,
) -> Result<TvImage> {
    if y.ncols() != phi.ncols() {
        return Err(Error::mismatch(
            "measurement columns vs codes",
            phi.ncols(),
            y.ncols(),
        ));
    }
    let op = LineSensing::new(phi.to_owned(), y.nrows());
    recover_tv2d_with(&op, y, params)
}

/// Sensing operator and data for one grouped block.
pub fn block_operator(
    block: &FrameBlock,
    include_mean_track: bool,
) -> Result<(Box<dyn Sensing>, Array2<f64>)> {
    let (y, codes) = block.data(include_mean_track);
    if y.ncols() == 0 {
        return Err(Error::invalid(
            "block",
            format!("block {} has no usable columns", block.index),
        ));
    }
    let op: Box<dyn Sensing> = match block.acquisition {
        Acquisition::LineSensor => Box::new(LineSensing::new(codes, y.nrows())),
        Acquisition::SinglePixel { rows, cols } => Box::new(PixelSensing::new(codes, rows, cols)?),
    };
    Ok((op, y))
}

/// Jointly recover one frame per block under spatio-temporal TV with a
/// single aggregated data constraint.
pub fn recover_tv3d(blocks: &[FrameBlock], params: &RecoveryParams) -> Result<RecoveredVideo> {
    if blocks.is_empty() {
        return Err(Error::invalid("blocks", "need at least one block"));
    }
    let built: Vec<(Box<dyn Sensing>, Array2<f64>)> = blocks
        .iter()
        .map(|b| block_operator(b, params.include_mean_track))
        .collect::<Result<_>>()?;
    let frames: Vec<FrameProblem<'_>> = built
        .iter()
        .map(|(op, y)| FrameProblem {
            op: op.as_ref(),
            data: y.view(),
        })
        .collect();
    let (rows, cols) = frames[0].op.image_dim();

    // Square line-sensor blocks start from their exact inverse.
    let mut init = Array3::<f64>::zeros((frames.len(), rows, cols));
    for ((block, (_, y)), mut slot) in blocks.iter().zip(&built).zip(init.outer_iter_mut()) {
        if block.acquisition == Acquisition::LineSensor && y.ncols() == cols {
            let (_, codes) = block.data(params.include_mean_track);
            if let Ok(x) = recover_pinv(y.view(), codes.view()) {
                slot.assign(&x);
            }
        }
    }

    let (volume, diagnostics) = solve_tv(&frames, params, Some(init))?;
    let frame_diagnostics = volume
        .outer_iter()
        .zip(&frames)
        .map(|(x, f)| FrameDiagnostics {
            iterations: diagnostics.iterations,
            residual: frob(&(f.op.apply(x) - f.data)),
            tv: tv_iso(x),
        })
        .collect();
    Ok(RecoveredVideo {
        frames: unstack_frames(volume.view()),
        frame_diagnostics,
        diagnostics,
    })
}

/// Per-voxel median over the 3×3×3 neighbourhood with replicate boundaries.
pub fn median3(video: ArrayView3<'_, f64>) -> Array3<f64> {
    let (q, rows, cols) = video.dim();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut out = Array3::<f64>::zeros(video.dim());
    Zip::indexed(&mut out).par_for_each(|(k, i, j), o| {
        let mut window = [0.0f64; 27];
        let mut n = 0;
        for dk in -1..=1 {
            for di in -1..=1 {
                for dj in -1..=1 {
                    window[n] = video[[
                        clamp(k as isize + dk, q),
                        clamp(i as isize + di, rows),
                        clamp(j as isize + dj, cols),
                    ]];
                    n += 1;
                }
            }
        }
        let (_, m, _) = window.select_nth_unstable_by(13, |a, b| a.total_cmp(b));
        *o = *m;
    });
    out
}

/// Median-filter a frame list.
pub fn median3_frames(frames: &[Array2<f64>]) -> Vec<Array2<f64>> {
    unstack_frames(median3(stack_frames(frames).view()).view())
}
