//! SO(d) primitives: Haar sampling, the simultaneous action on stacked
//! vectors, plane-rotation geodesics and spectral norms.
//!
//! A [`PointCloud`] stores `n` vectors of `R^d` as the columns of a `d x n`
//! matrix. Rotations act on every column at once, so the Euclidean norm of a
//! point cloud is the Frobenius norm of that matrix and the Lipschitz constant
//! of `U -> U x` is the spectral norm of `x`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Tolerance on `||U^T U - I||_F` for a valid rotation.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;
/// Tolerance on `|det U - 1|` for a valid rotation.
pub const DETERMINANT_TOL: f64 = 1e-8;
/// Tolerance on the orthonormality of a rotation plane.
pub const PLANE_TOL: f64 = 1e-10;

const POWER_ITERATION_MAX: usize = 10_000;
const POWER_ITERATION_RTOL: f64 = 1e-12;

pub(crate) fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub(crate) fn gaussian_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// `n` vectors in `R^d`, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    data: DMatrix<f64>,
}

impl PointCloud {
    pub fn from_matrix(data: DMatrix<f64>) -> Self {
        Self { data }
    }

    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        let Some(first) = columns.first() else {
            return Err(Error::InvalidDimension("a point cloud needs at least one column".into()));
        };
        let d = first.len();
        if let Some(bad) = columns.iter().find(|c| c.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
        Ok(Self {
            data: DMatrix::from_columns(columns),
        })
    }

    pub fn zeros(d: usize, n: usize) -> Self {
        Self {
            data: DMatrix::zeros(d, n),
        }
    }

    /// `n` independent columns, each uniform on the sphere of the given radius.
    pub fn random_sphere<R: Rng + ?Sized>(d: usize, n: usize, radius: f64, rng: &mut R) -> Self {
        let mut data = gaussian_matrix(d, n, rng);
        for mut col in data.column_iter_mut() {
            let norm = col.norm();
            col *= radius / norm;
        }
        Self { data }
    }

    /// Vector dimension `d`.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Number of vectors `n`.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.data.column(i).into_owned()
    }

    pub fn column_norms(&self) -> Vec<f64> {
        self.data.column_iter().map(|c| c.norm()).collect()
    }

    /// Euclidean norm on `(R^d)^n`, i.e. the Frobenius norm of the matrix.
    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn spectral_norm(&self) -> f64 {
        spectral_norm(self)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn distance(&self, other: &PointCloud) -> Result<f64> {
        check_same_shape(self, other)?;
        Ok((&self.data - &other.data).norm())
    }

    pub fn dot(&self, other: &PointCloud) -> Result<f64> {
        check_same_shape(self, other)?;
        Ok(self.data.dot(&other.data))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            data: &self.data * c,
        }
    }
}

impl std::ops::Neg for &PointCloud {
    type Output = PointCloud;

    fn neg(self) -> PointCloud {
        PointCloud { data: -&self.data }
    }
}

fn check_same_shape(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// An element of SO(d).
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix {
    m: DMatrix<f64>,
}

impl RotationMatrix {
    /// Validates orthogonality and unit determinant.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::InvalidDimension(format!(
                "rotation must be a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let residual = orthogonality_residual(&m);
        if residual > ORTHOGONALITY_TOL {
            return Err(Error::NotRotation(format!("||U^T U - I||_F = {residual:e}")));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > DETERMINANT_TOL {
            return Err(Error::NotRotation(format!("det = {det}")));
        }
        Ok(Self { m })
    }

    pub(crate) fn from_matrix_unchecked(m: DMatrix<f64>) -> Self {
        Self { m }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            m: DMatrix::identity(d, d),
        }
    }

    /// `-I`, which lies in SO(d) only for even `d`.
    pub fn negative_identity(d: usize) -> Result<Self> {
        if d == 0 || d % 2 == 1 {
            return Err(Error::InvalidDimension(format!("-I is not in SO({d})")));
        }
        Ok(Self {
            m: -DMatrix::<f64>::identity(d, d),
        })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn inverse(&self) -> Self {
        Self {
            m: self.m.transpose(),
        }
    }

    /// `self * other`.
    pub fn compose(&self, other: &RotationMatrix) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(Self {
            m: &self.m * &other.m,
        })
    }

    pub fn orthogonality_residual(&self) -> f64 {
        orthogonality_residual(&self.m)
    }

    pub fn determinant(&self) -> f64 {
        self.m.determinant()
    }

    /// Canonical decomposition `U = Q B Q^T` with `B` block-diagonal plane
    /// rotations, giving the one-parameter family `t -> Q B(t) Q^T` from the
    /// identity (`t = 0`) to `U` (`t = 1`).
    pub fn geodesic(&self) -> Result<Geodesic> {
        let d = self.dim();
        let schur = nalgebra::linalg::Schur::try_new(self.m.clone(), f64::EPSILON, 10_000)
            .ok_or_else(|| Error::NotRotation("real Schur decomposition did not converge".into()))?;
        let (q, t) = schur.unpack();
        let mut planes = Vec::new();
        let mut negatives = Vec::new();
        let mut i = 0;
        while i < d {
            if i + 1 < d && t[(i + 1, i)].abs() > 1e-12 {
                let c = 0.5 * (t[(i, i)] + t[(i + 1, i + 1)]);
                let s = 0.5 * (t[(i + 1, i)] - t[(i, i + 1)]);
                planes.push((i, i + 1, s.atan2(c)));
                i += 2;
            } else {
                if t[(i, i)] < 0.0 {
                    negatives.push(i);
                }
                i += 1;
            }
        }
        if negatives.len() % 2 == 1 {
            return Err(Error::NotRotation("odd number of -1 eigenvalues".into()));
        }
        for pair in negatives.chunks_exact(2) {
            planes.push((pair[0], pair[1], std::f64::consts::PI));
        }
        Ok(Geodesic { q, planes })
    }
}

fn orthogonality_residual(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    (m.transpose() * m - DMatrix::<f64>::identity(d, d)).norm()
}

/// `t -> Q B(t) Q^T`, where `B(t)` rotates each invariant plane of a rotation
/// by `t` times its angle.
#[derive(Debug, Clone)]
pub struct Geodesic {
    q: DMatrix<f64>,
    planes: Vec<(usize, usize, f64)>,
}

impl Geodesic {
    /// Rotation angles of the invariant planes.
    pub fn angles(&self) -> Vec<f64> {
        self.planes.iter().map(|p| p.2).collect()
    }

    pub fn apply(&self, t: f64, x: &PointCloud) -> Result<PointCloud> {
        if x.dim() != self.q.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.q.nrows(),
                found: x.dim(),
            });
        }
        let mut y = self.q.tr_mul(x.matrix());
        for &(i, j, angle) in &self.planes {
            let (s, c) = (t * angle).sin_cos();
            for col in 0..y.ncols() {
                let (a, b) = (y[(i, col)], y[(j, col)]);
                y[(i, col)] = c * a - s * b;
                y[(j, col)] = s * a + c * b;
            }
        }
        Ok(PointCloud::from_matrix(&self.q * y))
    }

    pub fn rotation(&self, t: f64) -> RotationMatrix {
        let d = self.q.nrows();
        let id = PointCloud::from_matrix(DMatrix::identity(d, d));
        let m = self.apply(t, &id).expect("dimension fixed by construction");
        RotationMatrix::from_matrix_unchecked(m.into_matrix())
    }
}

/// Haar-distributed rotation: QR of a Gaussian matrix with the columns of `Q`
/// multiplied by the signs of `diag(R)`, then the first column negated when the
/// determinant is `-1`.
pub fn haar_sample<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<RotationMatrix> {
    if d == 0 {
        return Err(Error::InvalidDimension("SO(0) is empty; d must be >= 1".into()));
    }
    let qr = gaussian_matrix(d, d, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    Ok(RotationMatrix { m: q })
}

pub fn frobenius_distance(u: &RotationMatrix, v: &RotationMatrix) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            found: v.dim(),
        });
    }
    Ok((&u.m - &v.m).norm())
}

/// `U . (x_1, ..., x_n) = (U x_1, ..., U x_n)`.
pub fn act(u: &RotationMatrix, x: &PointCloud) -> Result<PointCloud> {
    if u.dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            found: x.dim(),
        });
    }
    Ok(PointCloud::from_matrix(&u.m * &x.data))
}

/// Largest singular value of the `d x n` matrix, by power iteration on the
/// smaller Gram matrix.
pub fn spectral_norm(x: &PointCloud) -> f64 {
    let m = &x.data;
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.tr_mul(m)
    };
    let k = gram.nrows();
    if k == 0 {
        return 0.0;
    }
    let (start, top) = (0..k)
        .map(|i| (i, gram[(i, i)]))
        .fold((0, 0.0), |acc, (i, g)| if g > acc.1 { (i, g) } else { acc });
    if top == 0.0 {
        return 0.0;
    }
    // Start from the heaviest Gram column, nudged off any exact eigenspace
    // boundary by a fixed low-discrepancy vector.
    let mut v = gram.column(start).into_owned();
    for (i, vi) in v.iter_mut().enumerate() {
        *vi += top * 1e-3 * (((i as f64 + 1.0) * 0.618_033_988_749_895).fract() - 0.5);
    }
    v /= v.norm();
    let mut lambda = 0.0f64;
    for _ in 0..POWER_ITERATION_MAX {
        let w = &gram * &v;
        let next = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        v = w / wn;
        let done = (next - lambda).abs() <= POWER_ITERATION_RTOL * next.abs();
        lambda = next;
        if done {
            break;
        }
    }
    lambda.max(0.0).sqrt()
}

/// Rotation by `theta` in the plane spanned by the orthonormal pair `(u, v)`:
/// `R = I + (cos t - 1)(u u^T + v v^T) + sin t (v u^T - u v^T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneRotation {
    u: DVector<f64>,
    v: DVector<f64>,
    theta: f64,
}

impl PlaneRotation {
    pub fn new(u: DVector<f64>, v: DVector<f64>, theta: f64) -> Result<Self> {
        if u.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: u.len(),
                found: v.len(),
            });
        }
        if u.len() < 2 {
            return Err(Error::InvalidDimension("a rotation plane needs d >= 2".into()));
        }
        let residual = u
            .dot(&v)
            .abs()
            .max((u.norm() - 1.0).abs())
            .max((v.norm() - 1.0).abs());
        if !(residual <= PLANE_TOL) {
            return Err(Error::NotOrthonormal { residual });
        }
        Ok(Self { u, v, theta })
    }

    /// Gram-Schmidt on an arbitrary pair, then [`PlaneRotation::new`].
    pub fn from_pair(a: DVector<f64>, b: DVector<f64>, theta: f64) -> Result<Self> {
        let an = a.norm();
        if an == 0.0 {
            return Err(Error::NotOrthonormal { residual: 1.0 });
        }
        let u = a / an;
        let mut v = &b - &u * u.dot(&b);
        // A second pass removes the residual component left by cancellation.
        v -= &u * u.dot(&v);
        let vn = v.norm();
        if vn == 0.0 {
            return Err(Error::NotOrthonormal { residual: 1.0 });
        }
        Self::new(u, v / vn, theta)
    }

    /// Plane spanned by an orthonormalised pair of standard Gaussian vectors.
    pub fn random<R: Rng + ?Sized>(d: usize, theta: f64, rng: &mut R) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension("a rotation plane needs d >= 2".into()));
        }
        loop {
            let a = gaussian_vector(d, rng);
            let b = gaussian_vector(d, rng);
            if let Ok(p) = Self::from_pair(a, b, theta) {
                return Ok(p);
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn with_angle(&self, theta: f64) -> Self {
        Self {
            u: self.u.clone(),
            v: self.v.clone(),
            theta,
        }
    }

    pub fn materialize(&self) -> RotationMatrix {
        let d = self.dim();
        let (s, c) = self.theta.sin_cos();
        let uu = &self.u * self.u.transpose();
        let vv = &self.v * self.v.transpose();
        let vu = &self.v * self.u.transpose();
        let m = DMatrix::<f64>::identity(d, d) + (uu + vv) * (c - 1.0) + (&vu - vu.transpose()) * s;
        RotationMatrix::from_matrix_unchecked(m)
    }

    /// Restriction of the family `theta -> R(theta) x` to one point cloud.
    pub fn orbit_of(&self, x: &PointCloud) -> Result<PlaneOrbit> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.dim(),
            });
        }
        let a = x.data.tr_mul(&self.u);
        let b = x.data.tr_mul(&self.v);
        let projected = (a.norm_squared() + b.norm_squared()).sqrt();
        Ok(PlaneOrbit {
            base: x.data.clone(),
            u: self.u.clone(),
            v: self.v.clone(),
            a,
            b,
            projected,
        })
    }
}

/// Applies `R(theta)` to every column of `x`.
pub fn plane_rotation_apply(p: &PlaneRotation, x: &PointCloud) -> Result<PointCloud> {
    Ok(p.orbit_of(x)?.point(p.theta))
}

/// Precomputed projections of a point cloud onto a rotation plane, so that the
/// rotated cloud and its distance to the base are cheap for any angle.
#[derive(Debug, Clone)]
pub struct PlaneOrbit {
    base: DMatrix<f64>,
    u: DVector<f64>,
    v: DVector<f64>,
    a: DVector<f64>,
    b: DVector<f64>,
    projected: f64,
}

impl PlaneOrbit {
    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    /// Coefficients of the rank-2 update at angle `theta`:
    /// `R(theta) x = x + u c_u^T + v c_v^T`.
    pub fn update_coefficients(&self, theta: f64) -> (DVector<f64>, DVector<f64>) {
        let (s, c) = theta.sin_cos();
        let cu = &self.a * (c - 1.0) - &self.b * s;
        let cv = &self.b * (c - 1.0) + &self.a * s;
        (cu, cv)
    }

    /// Norm of the projection of the base cloud onto the plane.
    pub fn projected_norm(&self) -> f64 {
        self.projected
    }

    pub fn point(&self, theta: f64) -> PointCloud {
        let (cu, cv) = self.update_coefficients(theta);
        let mut m = self.base.clone();
        m.ger(1.0, &self.u, &cu, 1.0);
        m.ger(1.0, &self.v, &cv, 1.0);
        PointCloud::from_matrix(m)
    }

    /// `||R(theta) x - x|| = 2 |sin(theta/2)| ||P x||`.
    pub fn distance(&self, theta: f64) -> f64 {
        2.0 * (0.5 * theta).sin().abs() * self.projected
    }

    /// Largest distance reachable in this plane.
    pub fn max_distance(&self) -> f64 {
        2.0 * self.projected
    }

    /// Smallest angle in `[0, pi]` reaching `distance`, clamped to `pi`.
    pub fn angle_for_distance(&self, distance: f64) -> f64 {
        if self.projected == 0.0 {
            return std::f64::consts::PI;
        }
        let s = (distance / (2.0 * self.projected)).clamp(0.0, 1.0);
        2.0 * s.asin()
    }
}

/// Haar sampler on the orbit `C(x0) = {U x0 : U in SO(d)}`.
///
/// When `n < d`, write `x0 = Q0 R0` (thin QR). Then `U x0 = (U Q0) R0` and
/// `U Q0` is uniform on the Stiefel manifold of `n`-frames, because SO(d)
/// acts transitively on frames of fewer than `d` vectors. Sampling that frame
/// costs `O(d n^2)` instead of a full `O(d^3)` Haar draw. For `n >= d` the
/// sampler falls back to `act(haar_sample(d), x0)`.
#[derive(Debug, Clone)]
pub struct OrbitSampler {
    base: PointCloud,
    triangular: Option<DMatrix<f64>>,
}

impl OrbitSampler {
    pub fn new(x0: &PointCloud) -> Self {
        let triangular = (x0.len() < x0.dim()).then(|| x0.data.clone().qr().r());
        Self {
            base: x0.clone(),
            triangular,
        }
    }

    pub fn base(&self) -> &PointCloud {
        &self.base
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PointCloud> {
        match &self.triangular {
            Some(r0) => {
                let (d, n) = (self.base.dim(), self.base.len());
                let qr = gaussian_matrix(d, n, rng).qr();
                let r = qr.r();
                let mut q = qr.q();
                for j in 0..n {
                    if r[(j, j)] < 0.0 {
                        q.column_mut(j).neg_mut();
                    }
                }
                Ok(PointCloud::from_matrix(q * r0))
            }
            None => act(&haar_sample(self.base.dim(), rng)?, &self.base),
        }
    }
}

/// One Haar-distributed point of the orbit of `x0`.
pub fn orbit_sample<R: Rng + ?Sized>(x0: &PointCloud, rng: &mut R) -> Result<PointCloud> {
    if x0.dim() == 0 {
        return Err(Error::InvalidDimension("d must be >= 1".into()));
    }
    OrbitSampler::new(x0).sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use crate::stream::derive_stream;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// One-sided Jacobi SVD, used only as an independent oracle.
    fn jacobi_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
        let mut a = m.clone();
        let n = a.ncols();
        for _sweep in 0..100 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    let alpha = a.column(p).norm_squared();
                    let beta = a.column(q).norm_squared();
                    let gamma = a.column(p).dot(&a.column(q));
                    if gamma.abs() <= 1e-300 {
                        continue;
                    }
                    off = off.max(gamma.abs() / (alpha * beta).sqrt());
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..a.nrows() {
                        let (x, y) = (a[(i, p)], a[(i, q)]);
                        a[(i, p)] = c * x - s * y;
                        a[(i, q)] = s * x + c * y;
                    }
                }
            }
            if off < 1e-15 {
                break;
            }
        }
        let mut sv: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
        sv.sort_by(|x, y| y.total_cmp(x));
        sv
    }

    #[test]
    fn so1_has_one_element() {
        let mut rng = derive_stream(1, 0);
        for _ in 0..10 {
            let u = haar_sample(1, &mut rng).unwrap();
            assert_eq!(u.matrix()[(0, 0)], 1.0);
        }
    }

    #[test]
    fn zero_dimension_rejected() {
        let mut rng = derive_stream(1, 0);
        assert!(matches!(haar_sample(0, &mut rng), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn haar_samples_satisfy_invariants() {
        let mut rng = derive_stream(3, 0);
        for d in [2, 3, 5, 8, 17, 64] {
            for _ in 0..20 {
                let u = haar_sample(d, &mut rng).unwrap();
                assert!(u.orthogonality_residual() < ORTHOGONALITY_TOL);
                assert!((u.determinant() - 1.0).abs() < DETERMINANT_TOL);
                RotationMatrix::new(u.into_matrix()).unwrap();
            }
        }
    }

    #[test]
    fn haar_mean_is_zero() {
        // E[U] = 0; each entry has variance 1/d, so the 5-sigma band for the
        // sample mean of 1e5 draws at d = 8 is 5 / sqrt(8e5) ~ 0.0056 < 0.01.
        let d = 8;
        let n = 100_000;
        let mut rng = derive_stream(4, 0);
        let mut acc = vec![stats::CompensatedSum::new(); d * d];
        for _ in 0..n {
            let u = haar_sample(d, &mut rng).unwrap();
            for (a, x) in acc.iter_mut().zip(u.matrix().iter()) {
                a.add(*x);
            }
        }
        for a in acc {
            assert!((a.value() / n as f64).abs() < 0.01);
        }
    }

    #[test]
    fn rejects_non_rotations() {
        let refl = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(RotationMatrix::new(refl).is_err());
        let skewed = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(RotationMatrix::new(skewed).is_err());
        assert!(RotationMatrix::negative_identity(3).is_err());
        assert!(RotationMatrix::negative_identity(4).is_ok());
    }

    #[test]
    fn frobenius_distance_cases() {
        let mut rng = derive_stream(5, 0);
        let u = haar_sample(6, &mut rng).unwrap();
        assert_eq!(frobenius_distance(&u, &u).unwrap(), 0.0);

        let id = RotationMatrix::identity(2);
        let half_turn = PlaneRotation::new(DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0]), PI)
            .unwrap()
            .materialize();
        let dist = frobenius_distance(&id, &half_turn).unwrap();
        assert!((dist - 2.0 * 2f64.sqrt()).abs() < 1e-12);

        for _ in 0..50 {
            let w = haar_sample(6, &mut rng).unwrap();
            let v = haar_sample(6, &mut rng).unwrap();
            let lhs = frobenius_distance(&w.compose(&u).unwrap(), &w.compose(&v).unwrap()).unwrap();
            assert!((lhs - frobenius_distance(&u, &v).unwrap()).abs() < 1e-10);
        }
        assert!(frobenius_distance(&u, &RotationMatrix::identity(3)).is_err());
    }

    #[test]
    fn action_cases() {
        let mut rng = derive_stream(6, 0);
        let x = PointCloud::from_matrix(gaussian_matrix(5, 3, &mut rng));
        assert_eq!(act(&RotationMatrix::identity(5), &x).unwrap(), x);

        let quarter = PlaneRotation::new(DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0]), FRAC_PI_2)
            .unwrap()
            .materialize();
        let e = PointCloud::from_matrix(DMatrix::identity(2, 2));
        let out = act(&quarter, &e).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((out.matrix() - expected).norm() < 1e-15);

        for _ in 0..50 {
            let u = haar_sample(5, &mut rng).unwrap();
            let y = act(&u, &x).unwrap();
            assert!((y.norm() - x.norm()).abs() < 1e-10);
            assert!((y.spectral_norm() - x.spectral_norm()).abs() < 1e-10);
        }
        assert!(act(&RotationMatrix::identity(4), &x).is_err());
    }

    #[test]
    fn spectral_norm_cases() {
        let col = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let x = PointCloud::from_columns(&[col.clone(), col.clone(), col.clone(), col]).unwrap();
        assert!((spectral_norm(&x) - 2.0).abs() < 1e-12);

        let mut rng = derive_stream(7, 0);
        let frame = haar_sample(5, &mut rng).unwrap();
        let mut m = frame.matrix().columns(0, 3).into_owned();
        m.column_mut(0).scale_mut(3.0);
        assert!((spectral_norm(&PointCloud::from_matrix(m)) - 3.0).abs() < 1e-12);

        assert_eq!(spectral_norm(&PointCloud::zeros(4, 3)), 0.0);

        // Columns e1 and -e1: the top eigenvector of the Gram matrix is
        // orthogonal to the all-ones vector.
        let e = DVector::from_vec(vec![1.0, 0.0]);
        let x = PointCloud::from_columns(&[e.clone(), -e]).unwrap();
        assert!((spectral_norm(&x) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn random_inputs_have_spectral_ratio_near_inverse_sqrt_min_dim() {
        // sp/frob is at least 1/sqrt(min(d, n)); for random clouds it stays
        // within (1 + sqrt(min/max)) of that, up to fluctuation.
        let mut rng = derive_stream(81, 0);
        for (d, n) in [(256, 4), (64, 64), (16, 200), (100, 1)] {
            let x = PointCloud::random_sphere(d, n, (d as f64).sqrt(), &mut rng);
            let (lo, hi) = (d.min(n) as f64, d.max(n) as f64);
            let scaled = x.spectral_norm() / x.norm() * lo.sqrt();
            assert!(scaled >= 1.0 - 1e-12, "{d}x{n}: {scaled}");
            assert!(scaled <= 1.1 * (1.0 + (lo / hi).sqrt()), "{d}x{n}: {scaled}");
        }
    }

    #[test]
    fn spectral_norm_matches_jacobi_oracle() {
        let mut rng = derive_stream(8, 0);
        for _ in 0..20 {
            let m = gaussian_matrix(16, 8, &mut rng);
            let oracle = jacobi_singular_values(&m)[0];
            let got = spectral_norm(&PointCloud::from_matrix(m.clone()));
            assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
            let got_t = spectral_norm(&PointCloud::from_matrix(m.transpose()));
            assert!((got_t - oracle).abs() < 1e-8);
        }
    }

    #[test]
    fn plane_rotation_cases() {
        let mut rng = derive_stream(9, 0);
        let x = PointCloud::from_matrix(gaussian_matrix(6, 4, &mut rng));
        let p = PlaneRotation::random(6, 0.0, &mut rng).unwrap();
        assert!((plane_rotation_apply(&p, &x).unwrap().matrix() - x.matrix()).norm() < 1e-15);

        let p = PlaneRotation::new(DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0]), FRAC_PI_2).unwrap();
        let x1 = PointCloud::from_columns(&[DVector::from_vec(vec![1.0, 0.0])]).unwrap();
        let y = plane_rotation_apply(&p, &x1).unwrap();
        assert!((y.column(0) - DVector::from_vec(vec![0.0, 1.0])).norm() < 1e-15);

        for _ in 0..50 {
            let theta = rng.random_range(-PI..PI);
            let p = PlaneRotation::random(6, theta, &mut rng).unwrap();
            let r = p.materialize();
            assert!(r.orthogonality_residual() < ORTHOGONALITY_TOL);
            assert!((r.determinant() - 1.0).abs() < DETERMINANT_TOL);
            let direct = act(&r, &x).unwrap();
            let fast = plane_rotation_apply(&p, &x).unwrap();
            assert!((direct.matrix() - fast.matrix()).norm() < 1e-10);
            let orbit = p.orbit_of(&x).unwrap();
            assert!((orbit.distance(theta) - fast.distance(&x).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn plane_rotation_rejects_non_orthonormal() {
        let u = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let v = DVector::from_vec(vec![1e-6, 1.0, 0.0]);
        assert!(matches!(PlaneRotation::new(u.clone(), v, 0.1), Err(Error::NotOrthonormal { .. })));
        let v = DVector::from_vec(vec![0.0, 2.0, 0.0]);
        assert!(PlaneRotation::new(u, v, 0.1).is_err());
    }

    #[test]
    fn plane_angle_inverts_distance() {
        let mut rng = derive_stream(10, 0);
        let x = PointCloud::from_matrix(gaussian_matrix(8, 3, &mut rng));
        let orbit = PlaneRotation::random(8, 0.0, &mut rng).unwrap().orbit_of(&x).unwrap();
        for frac in [0.01, 0.3, 0.9, 1.0] {
            let target = frac * orbit.max_distance();
            let theta = orbit.angle_for_distance(target);
            assert!((orbit.distance(theta) - target).abs() < 1e-9);
        }
    }

    #[test]
    fn geodesic_endpoints() {
        let mut rng = derive_stream(11, 0);
        for d in [2, 3, 6, 9, 16] {
            let u = haar_sample(d, &mut rng).unwrap();
            let g = u.geodesic().unwrap();
            assert!((g.rotation(1.0).matrix() - u.matrix()).norm() < 1e-8);
            assert!((g.rotation(0.0).matrix() - DMatrix::<f64>::identity(d, d)).norm() < 1e-12);
            let mid = g.rotation(0.37);
            assert!(mid.orthogonality_residual() < 1e-10);
            assert!((mid.determinant() - 1.0).abs() < 1e-8);
        }
        let g = RotationMatrix::negative_identity(4).unwrap().geodesic().unwrap();
        assert!((g.rotation(1.0).matrix() + DMatrix::<f64>::identity(4, 4)).norm() < 1e-12);
    }

    #[test]
    fn orbit_sample_preserves_norm() {
        let mut rng = derive_stream(12, 0);
        for (d, n) in [(5, 2), (4, 4), (3, 7)] {
            let x0 = PointCloud::from_matrix(gaussian_matrix(d, n, &mut rng));
            let sampler = OrbitSampler::new(&x0);
            for _ in 0..20 {
                let z = sampler.sample(&mut rng).unwrap();
                assert!((z.norm() - x0.norm()).abs() < 1e-10);
                // Gram matrix is an orbit invariant.
                let g0 = x0.matrix().tr_mul(x0.matrix());
                let g = z.matrix().tr_mul(z.matrix());
                assert!((g - g0).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn orbit_first_coordinate_is_centred() {
        let d = 10;
        let x0 = PointCloud::from_matrix(DMatrix::from_fn(d, 1, |i, _| if i == 0 { (d as f64).sqrt() } else { 0.0 }));
        let mut rng = derive_stream(13, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| orbit_sample(&x0, &mut rng).unwrap().matrix()[(0, 0)]).collect();
        // Var of the first coordinate of a uniform point on sqrt(d) S^{d-1} is 1.
        let m = stats::mean(&xs);
        assert!(m.abs() < 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn orbit_law_independent_of_representative() {
        let d = 6;
        let mut rng = derive_stream(14, 0);
        let x0 = PointCloud::from_matrix(gaussian_matrix(d, 2, &mut rng));
        let v = haar_sample(d, &mut rng).unwrap();
        let x1 = act(&v, &x0).unwrap();
        let e1 = |z: PointCloud| z.matrix()[(0, 0)];
        let n = 10_000;
        let a: Vec<f64> = (0..n).map(|_| e1(orbit_sample(&x0, &mut rng).unwrap())).collect();
        let b: Vec<f64> = (0..n).map(|_| e1(orbit_sample(&x1, &mut rng).unwrap())).collect();
        assert!(stats::ks_same_distribution(&a, &b, 0.01));
    }

    #[test]
    fn stiefel_fast_path_matches_full_haar() {
        let d = 7;
        let mut rng = derive_stream(15, 0);
        let x0 = PointCloud::from_matrix(gaussian_matrix(d, 3, &mut rng));
        let probe = |z: &PointCloud| z.matrix()[(0, 1)] + z.matrix()[(2, 2)];
        let sampler = OrbitSampler::new(&x0);
        let n = 10_000;
        let fast: Vec<f64> = (0..n).map(|_| probe(&sampler.sample(&mut rng).unwrap())).collect();
        let full: Vec<f64> = (0..n)
            .map(|_| probe(&act(&haar_sample(d, &mut rng).unwrap(), &x0).unwrap()))
            .collect();
        assert!(stats::ks_same_distribution(&fast, &full, 0.01));
    }

    #[test]
    fn haar_left_invariance() {
        let d = 5;
        let mut rng = derive_stream(16, 0);
        let v = haar_sample(d, &mut rng).unwrap();
        let id = RotationMatrix::identity(d);
        let vinv = v.inverse();
        let n = 10_000;
        let a: Vec<f64> = (0..n)
            .map(|_| frobenius_distance(&v.compose(&haar_sample(d, &mut rng).unwrap()).unwrap(), &id).unwrap())
            .collect();
        let b: Vec<f64> = (0..n)
            .map(|_| frobenius_distance(&haar_sample(d, &mut rng).unwrap(), &vinv).unwrap())
            .collect();
        assert!(stats::ks_same_distribution(&a, &b, 0.01));
    }
}
