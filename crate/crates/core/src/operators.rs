//! Linear operators used by the recovery solvers, each with its adjoint.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Forward differences with a replicate boundary.
///
/// `G_x` differentiates along columns and `G_y` along rows; the last column
/// of `G_x` and the last row of `G_y` are zero.
pub fn grad_ops(x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let (rows, cols) = x.dim();
    let mut gx = Array2::zeros((rows, cols));
    let mut gy = Array2::zeros((rows, cols));
    if cols > 1 {
        let d = &x.slice(s![.., 1..]) - &x.slice(s![.., ..cols - 1]);
        gx.slice_mut(s![.., ..cols - 1]).assign(&d);
    }
    if rows > 1 {
        let d = &x.slice(s![1.., ..]) - &x.slice(s![..rows - 1, ..]);
        gy.slice_mut(s![..rows - 1, ..]).assign(&d);
    }
    (gx, gy)
}

/// Adjoint of the forward difference along `axis`, accumulated into `out`
/// (`out += Dᵀ p`). The last entry of `p` along the axis is ignored.
fn diff_adjoint_into<D: ndarray::RemoveAxis>(
    p: &ndarray::ArrayView<'_, f64, D>,
    axis: Axis,
    out: &mut ndarray::ArrayViewMut<'_, f64, D>,
) {
    let n = p.len_of(axis);
    if n < 2 {
        return;
    }
    // (Dᵀp)_0 = -p_0, (Dᵀp)_i = p_{i-1} - p_i, (Dᵀp)_{n-1} = p_{n-2}.
    let head = p.slice_axis(axis, (..n - 1).into());
    {
        let mut lo = out.slice_axis_mut(axis, (..n - 1).into());
        lo -= &head;
    }
    let mut hi = out.slice_axis_mut(axis, (1..).into());
    hi += &head;
}

/// `G_xᵀ p_x + G_yᵀ p_y`, i.e. the negative divergence.
pub fn grad_adjoint(px: ArrayView2<'_, f64>, py: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(px.dim());
    diff_adjoint_into(&px, Axis(1), &mut out.view_mut());
    diff_adjoint_into(&py, Axis(0), &mut out.view_mut());
    out
}

/// Forward difference along the frame axis of a `(frames, rows, cols)`
/// volume, last frame zero.
pub fn temporal_diff(v: ArrayView3<'_, f64>) -> Array3<f64> {
    let q = v.len_of(Axis(0));
    let mut out = Array3::zeros(v.dim());
    if q > 1 {
        let d = &v.slice(s![1.., .., ..]) - &v.slice(s![..q - 1, .., ..]);
        out.slice_mut(s![..q - 1, .., ..]).assign(&d);
    }
    out
}

pub fn temporal_diff_adjoint(p: ArrayView3<'_, f64>) -> Array3<f64> {
    let mut out = Array3::zeros(p.dim());
    diff_adjoint_into(&p, Axis(0), &mut out.view_mut());
    out
}

/// Weighted spatio-temporal gradient of a `(frames, rows, cols)` volume.
///
/// The components are scaled by `√w_s` and `√w_t` so that the pointwise norm
/// of the output is `√(w_s(G_x² + G_y²) + w_t G_t²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeGradient {
    pub spatial_weight: f64,
    pub temporal_weight: f64,
}

/// Output of [`VolumeGradient::apply`]: `gx`, `gy`, `gt`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub gx: Array3<f64>,
    pub gy: Array3<f64>,
    pub gt: Array3<f64>,
}

impl GradientField {
    pub fn zeros(dim: (usize, usize, usize)) -> Self {
        GradientField {
            gx: Array3::zeros(dim),
            gy: Array3::zeros(dim),
            gt: Array3::zeros(dim),
        }
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        let d = |a: &Array3<f64>, b: &Array3<f64>| {
            Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + x * y)
        };
        d(&self.gx, &other.gx) + d(&self.gy, &other.gy) + d(&self.gt, &other.gt)
    }
}

impl VolumeGradient {
    pub fn new(spatial_weight: f64, temporal_weight: f64) -> Self {
        VolumeGradient {
            spatial_weight,
            temporal_weight,
        }
    }

    pub fn apply(&self, v: ArrayView3<'_, f64>) -> GradientField {
        let dim = v.dim();
        let ws = self.spatial_weight.sqrt();
        let mut gx = Array3::zeros(dim);
        let mut gy = Array3::zeros(dim);
        for k in 0..dim.0 {
            let (fx, fy) = grad_ops(v.index_axis(Axis(0), k));
            gx.index_axis_mut(Axis(0), k).assign(&(fx * ws));
            gy.index_axis_mut(Axis(0), k).assign(&(fy * ws));
        }
        let gt = temporal_diff(v) * self.temporal_weight.sqrt();
        GradientField { gx, gy, gt }
    }

    pub fn adjoint(&self, g: &GradientField) -> Array3<f64> {
        let ws = self.spatial_weight.sqrt();
        let mut out = temporal_diff_adjoint(g.gt.view()) * self.temporal_weight.sqrt();
        let mut spatial = Array3::zeros(g.gx.dim());
        diff_adjoint_into(&g.gx.view(), Axis(2), &mut spatial.view_mut());
        diff_adjoint_into(&g.gy.view(), Axis(1), &mut spatial.view_mut());
        out.scaled_add(ws, &spatial);
        out
    }

    /// Power-iteration estimate of `‖∇‖²`.
    pub fn norm_squared(&self, dim: (usize, usize, usize), iterations: usize) -> f64 {
        power_iteration(dim, iterations, |v| self.adjoint(&self.apply(v)))
    }
}

/// Isotropic total variation `Σ √(G_x² + G_y²)` of one image.
pub fn tv_iso(x: ArrayView2<'_, f64>) -> f64 {
    let (gx, gy) = grad_ops(x);
    Zip::from(&gx)
        .and(&gy)
        .fold(0.0, |acc, a, b| acc + a.hypot(*b))
}

/// Isotropic spatio-temporal total variation of a volume.
pub fn tv_iso_volume(v: ArrayView3<'_, f64>, grad: &VolumeGradient) -> f64 {
    let g = grad.apply(v);
    Zip::from(&g.gx)
        .and(&g.gy)
        .and(&g.gt)
        .fold(0.0, |acc, a, b, c| acc + (a * a + b * b + c * c).sqrt())
}

/// Linear map from a `rows × cols` image to a block of measurements.
pub trait Sensing: Send + Sync {
    fn image_dim(&self) -> (usize, usize);

    fn measurement_dim(&self) -> (usize, usize);

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64>;

    fn adjoint(&self, y: ArrayView2<'_, f64>) -> Array2<f64>;

    /// `c` such that `A Aᵀ = c·I`, when the rows of the operator are
    /// orthogonal with equal norms.
    fn gram_scale(&self) -> Option<f64>;
}

/// `X ↦ X Φ` for a line sensor, `Φ` holding one code per column.
#[derive(Debug, Clone)]
pub struct LineSensing {
    codes: Array2<f64>,
    rows: usize,
    gram_scale: Option<f64>,
}

/// Detect `ΦᵀΦ = c·I` up to round-off.
fn scalar_gram(codes: ArrayView2<'_, f64>) -> Option<f64> {
    if codes.ncols() == 0 {
        return None;
    }
    let g = codes.t().dot(&codes);
    let c = g[[0, 0]];
    if c <= 0.0 {
        return None;
    }
    let tol = 1e-10 * c;
    for ((i, j), &v) in g.indexed_iter() {
        let expect = if i == j { c } else { 0.0 };
        if (v - expect).abs() > tol {
            return None;
        }
    }
    Some(c)
}

impl LineSensing {
    /// `codes` is `cols × T`; images are `rows × cols`.
    pub fn new(codes: Array2<f64>, rows: usize) -> Self {
        let gram_scale = scalar_gram(codes.view());
        LineSensing {
            codes,
            rows,
            gram_scale,
        }
    }

    pub fn codes(&self) -> &Array2<f64> {
        &self.codes
    }
}

impl Sensing for LineSensing {
    fn image_dim(&self) -> (usize, usize) {
        (self.rows, self.codes.nrows())
    }

    fn measurement_dim(&self) -> (usize, usize) {
        (self.rows, self.codes.ncols())
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.codes)
    }

    fn adjoint(&self, y: ArrayView2<'_, f64>) -> Array2<f64> {
        y.dot(&self.codes.t())
    }

    fn gram_scale(&self) -> Option<f64> {
        self.gram_scale
    }
}

/// `X ↦ [⟨X, Φ_t⟩]_t` for a single-pixel camera; codes are the row-major
/// flattened patterns, one per column.
#[derive(Debug, Clone)]
pub struct PixelSensing {
    codes: Array2<f64>,
    dim: (usize, usize),
    gram_scale: Option<f64>,
}

impl PixelSensing {
    /// `codes` is `(rows·cols) × T`.
    pub fn new(codes: Array2<f64>, rows: usize, cols: usize) -> Result<Self> {
        if codes.nrows() != rows * cols {
            return Err(Error::mismatch(
                "pixel sensing codes",
                rows * cols,
                codes.nrows(),
            ));
        }
        let gram_scale = scalar_gram(codes.view());
        Ok(PixelSensing {
            codes,
            dim: (rows, cols),
            gram_scale,
        })
    }
}

impl Sensing for PixelSensing {
    fn image_dim(&self) -> (usize, usize) {
        self.dim
    }

    fn measurement_dim(&self) -> (usize, usize) {
        (1, self.codes.ncols())
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let flat = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((1, self.dim.0 * self.dim.1))
            .expect("contiguous");
        flat.dot(&self.codes)
    }

    fn adjoint(&self, y: ArrayView2<'_, f64>) -> Array2<f64> {
        y.dot(&self.codes.t())
            .into_shape_with_order(self.dim)
            .expect("size matches")
    }

    fn gram_scale(&self) -> Option<f64> {
        self.gram_scale
    }
}

/// Power-iteration estimate of the largest eigenvalue of the symmetric
/// positive semi-definite map `normal` (typically `AᵀA`).
pub fn power_iteration<F>(dim: (usize, usize, usize), iterations: usize, normal: F) -> f64
where
    F: Fn(ArrayView3<'_, f64>) -> Array3<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = Array3::from_shape_fn(dim, |_| rng.random::<f64>() - 0.5);
    let norm = |a: &Array3<f64>| a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n0 = norm(&v);
    v /= n0;
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let w = normal(v.view());
        lambda = Zip::from(&w).and(&v).fold(0.0, |acc, a, b| acc + a * b);
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        v = w / nw;
    }
    lambda
}

/// Power-iteration estimate of `‖A‖²` for a sensing operator.
pub fn sensing_norm_squared(op: &dyn Sensing, iterations: usize) -> f64 {
    let (r, c) = op.image_dim();
    power_iteration((1, r, c), iterations, |v| {
        op.adjoint(op.apply(v.index_axis(Axis(0), 0)).view())
            .insert_axis(Axis(0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn random2(dim: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn(dim, |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn random3(dim: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
        Array3::from_shape_fn(dim, |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn inner2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + x * y)
    }

    #[test]
    fn constant_has_zero_gradient() {
        let x = Array2::from_elem((5, 7), 0.4);
        let (gx, gy) = grad_ops(x.view());
        assert!(gx.iter().chain(gy.iter()).all(|&v| v == 0.0));
        assert_eq!(tv_iso(x.view()), 0.0);
    }

    #[test]
    fn ramp_gradient() {
        let x = Array2::from_shape_fn((4, 6), |(_, j)| j as f64);
        let (gx, gy) = grad_ops(x.view());
        for ((_, j), &v) in gx.indexed_iter() {
            assert_eq!(v, if j == 5 { 0.0 } else { 1.0 });
        }
        assert!(gy.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tv_of_unit_step() {
        // Step between columns 2 and 3 of a 9-row image: one unit per row.
        let x = Array2::from_shape_fn((9, 6), |(_, j)| if j >= 3 { 1.0 } else { 0.0 });
        let (gx, gy) = grad_ops(x.view());
        let direct: f64 = (0..9)
            .flat_map(|i| (0..6).map(move |j| (i, j)))
            .map(|(i, j)| (gx[[i, j]].powi(2) + gy[[i, j]].powi(2)).sqrt())
            .sum();
        assert_eq!(direct, 9.0);
        assert_eq!(tv_iso(x.view()), 9.0);
        assert!((tv_iso((x * -2.5).view()) - 22.5).abs() < 1e-12);
    }

    #[test]
    fn gradient_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = random2((32, 32), &mut rng);
            let px = random2((32, 32), &mut rng);
            let py = random2((32, 32), &mut rng);
            let (gx, gy) = grad_ops(x.view());
            let lhs = inner2(&gx, &px) + inner2(&gy, &py);
            let rhs = inner2(&x, &grad_adjoint(px.view(), py.view()));
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn volume_gradient_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let op = VolumeGradient::new(0.7, 2.0);
        for _ in 0..10 {
            let v = random3((4, 9, 11), &mut rng);
            let g = GradientField {
                gx: random3((4, 9, 11), &mut rng),
                gy: random3((4, 9, 11), &mut rng),
                gt: random3((4, 9, 11), &mut rng),
            };
            let lhs = op.apply(v.view()).dot(&g);
            let adj = op.adjoint(&g);
            let rhs = Zip::from(&v).and(&adj).fold(0.0, |a, x, y| a + x * y);
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn single_frame_volume_tv_is_spatial_tv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random2((8, 8), &mut rng);
        let v = x.clone().insert_axis(Axis(0));
        let tv3 = tv_iso_volume(v.view(), &VolumeGradient::new(1.0, 5.0));
        assert!((tv3 - tv_iso(x.view())).abs() < 1e-12);
    }

    #[test]
    fn gradient_norm_estimate() {
        let n2 = VolumeGradient::new(1.0, 0.0).norm_squared((1, 32, 32), 20);
        assert!(n2 > 6.0 && n2 < 8.0, "{n2}");
    }

    #[test]
    fn sensing_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let line = LineSensing::new(random2((12, 5), &mut rng), 7);
        let pixel = PixelSensing::new(random2((7 * 12, 5), &mut rng), 7, 12).unwrap();
        for op in [&line as &dyn Sensing, &pixel] {
            let x = random2(op.image_dim(), &mut rng);
            let y = random2(op.measurement_dim(), &mut rng);
            let lhs = inner2(&op.apply(x.view()), &y);
            let rhs = inner2(&x, &op.adjoint(y.view()));
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
            assert!(op.gram_scale().is_none());
        }
    }

    #[test]
    fn hadamard_codes_have_scalar_gram() {
        let h = crate::codes::hadamard(16).unwrap().mapv(f64::from);
        let op = LineSensing::new(h.slice(s![.., ..6]).to_owned(), 3);
        assert_eq!(op.gram_scale(), Some(16.0));
        let n2 = sensing_norm_squared(&op, 20);
        assert!((n2 - 16.0).abs() < 1e-6);
    }
}
