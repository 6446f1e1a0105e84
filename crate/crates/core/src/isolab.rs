//! Monte Carlo checks of concentration on SO(d), blow-ups of subsets of an
//! orbit, Sudakov minoration, sphere inner-product tails and the variance of
//! a maximum of last-layer outputs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::convnet::{LayerWeights, Network};
use crate::error::{Error, Result};
use crate::rotgroup::{frobenius_distance, gaussian_vector, haar_sample, OrbitSampler, PlaneRotation, PointCloud, RotationMatrix};
use crate::stats;
use crate::stream::{child_seed, derive_stream};

const LIPSCHITZ_PAIRS: usize = 256;
const WITNESS_SLACK: f64 = 1e-9;

type RotationFn = dyn Fn(&RotationMatrix) -> f64 + Send + Sync;

/// A function on SO(d) together with a claimed Lipschitz constant for the
/// Frobenius metric.
pub struct TestFunction {
    pub label: String,
    pub lipschitz: f64,
    eval: Box<RotationFn>,
}

impl TestFunction {
    pub fn new(label: impl Into<String>, lipschitz: f64, eval: impl Fn(&RotationMatrix) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            lipschitz,
            eval: Box::new(eval),
        }
    }

    /// `U -> U_11`, 1-Lipschitz.
    pub fn entry11() -> Self {
        Self::new("u11", 1.0, |u| u.matrix()[(0, 0)])
    }

    /// `U -> tr(U) / sqrt(d)`, 1-Lipschitz by Cauchy-Schwarz.
    pub fn normalized_trace() -> Self {
        Self::new("trace", 1.0, |u| u.matrix().trace() / (u.dim() as f64).sqrt())
    }

    pub fn constant(value: f64) -> Self {
        Self::new("constant", 0.0, move |_| value)
    }

    pub fn from_label(label: &str) -> Result<Self> {
        match label {
            "u11" => Ok(Self::entry11()),
            "trace" => Ok(Self::normalized_trace()),
            "constant" => Ok(Self::constant(1.0)),
            other => Err(Error::Precondition(format!(
                "unknown test function `{other}` (expected u11, trace or constant)"
            ))),
        }
    }

    pub fn eval(&self, u: &RotationMatrix) -> f64 {
        (self.eval)(u)
    }
}

/// Checks `|g(U) - g(V)| <= L ||U - V||_F` on Haar pairs and on pairs a small
/// plane rotation apart.
pub fn check_lipschitz<R: Rng + ?Sized>(g: &TestFunction, d: usize, pairs: usize, rng: &mut R) -> Result<()> {
    for k in 0..pairs {
        let u = haar_sample(d, rng)?;
        let v = if k % 2 == 0 {
            haar_sample(d, rng)?
        } else {
            let step = 1e-3 * (1 + k % 7) as f64;
            let r = PlaneRotation::random(d, step, rng)?.materialize();
            u.compose(&r)?
        };
        let lhs = (g.eval(&u) - g.eval(&v)).abs();
        let rhs = g.lipschitz * frobenius_distance(&u, &v)?;
        if lhs > rhs * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::Precondition(format!(
                "`{}` is not {}-Lipschitz: |g(U) - g(V)| = {lhs} > {rhs}",
                g.label, g.lipschitz
            )));
        }
    }
    Ok(())
}

/// `exp(-(d - 2) eps^2 / (8 L^2))`.
pub fn concentration_bound(d: usize, epsilon: f64, lipschitz: f64) -> f64 {
    if lipschitz == 0.0 {
        return 0.0;
    }
    (-((d as f64) - 2.0) * epsilon * epsilon / (8.0 * lipschitz * lipschitz)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationRecord {
    pub d: usize,
    pub epsilon: f64,
    pub lipschitz: f64,
    pub empirical_tail: f64,
    pub theoretical_bound: f64,
    pub samples: usize,
    /// 99% halfwidth of the empirical tail.
    pub halfwidth: f64,
    pub mean: f64,
}

/// Estimates `mu(g >= E g + eps)` from Haar samples, with `E g` replaced by
/// the sample mean, and pairs it with the concentration bound.
pub fn concentration_experiment(
    g: &TestFunction,
    d: usize,
    epsilons: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<ConcentrationRecord>> {
    if samples < 1000 {
        return Err(Error::Precondition(format!("concentration needs >= 1000 samples, got {samples}")));
    }
    check_lipschitz(g, d, LIPSCHITZ_PAIRS, &mut derive_stream(child_seed(seed, 1), 0))?;
    let values = (0..samples)
        .into_par_iter()
        .map(|i| Ok(g.eval(&haar_sample(d, &mut derive_stream(seed, i as u64))?)))
        .collect::<Result<Vec<f64>>>()?;
    let mean = stats::mean(&values);
    Ok(epsilons
        .iter()
        .map(|&eps| {
            let (tail, _) = stats::frequency(values.iter().map(|&v| v >= mean + eps));
            ConcentrationRecord {
                d,
                epsilon: eps,
                lipschitz: g.lipschitz,
                empirical_tail: tail,
                theoretical_bound: concentration_bound(d, eps, g.lipschitz),
                samples,
                halfwidth: stats::binomial_halfwidth_99(tail, samples),
                mean,
            }
        })
        .collect())
}

type Membership = dyn Fn(&PointCloud) -> bool + Send + Sync;
type ExactBlowup = dyn Fn(&PointCloud, f64) -> Option<bool> + Send + Sync;

/// A subset of an orbit given by a membership predicate, optionally with a
/// closed-form test for its blow-ups.
pub struct IndicatorSet {
    pub label: String,
    member: Box<Membership>,
    exact: Option<Box<ExactBlowup>>,
}

impl IndicatorSet {
    pub fn new(label: impl Into<String>, member: impl Fn(&PointCloud) -> bool + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            member: Box::new(member),
            exact: None,
        }
    }

    pub fn with_exact_blowup(mut self, exact: impl Fn(&PointCloud, f64) -> Option<bool> + Send + Sync + 'static) -> Self {
        self.exact = Some(Box::new(exact));
        self
    }

    pub fn whole_orbit() -> Self {
        Self::new("whole", |_| true).with_exact_blowup(|_, _| Some(true))
    }

    /// `{z : z_{1,1} >= 0}`. For single-vector clouds the distance to the set
    /// is the chord from `z` to the nearest equator point,
    /// `sqrt(z_1^2 + (sqrt(R^2 - z_1^2) - R)^2)` when `z_1 < 0`.
    pub fn hemisphere() -> Self {
        Self::new("hemisphere", |z| z.matrix()[(0, 0)] >= 0.0).with_exact_blowup(|z, eps| {
            if z.len() != 1 {
                return None;
            }
            let z1 = z.matrix()[(0, 0)];
            if z1 >= 0.0 {
                return Some(true);
            }
            let r = z.norm();
            let rest = (r * r - z1 * z1).max(0.0).sqrt();
            Some((z1 * z1 + (rest - r) * (rest - r)).sqrt() <= eps)
        })
    }

    pub fn from_label(label: &str) -> Result<Self> {
        match label {
            "hemisphere" => Ok(Self::hemisphere()),
            "whole" => Ok(Self::whole_orbit()),
            other => Err(Error::Precondition(format!("unknown set `{other}` (expected hemisphere or whole)"))),
        }
    }

    pub fn contains(&self, z: &PointCloud) -> bool {
        (self.member)(z)
    }

    pub fn exact_blowup(&self, z: &PointCloud, epsilon: f64) -> Option<bool> {
        self.exact.as_ref().and_then(|f| f(z, epsilon))
    }
}

/// A point of `A` within `distance` of a sampled orbit point.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub point: PointCloud,
    pub witness: PointCloud,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeConfig {
    /// Random-plane probes per point, split evenly over the strata.
    pub probes: usize,
    /// Distances `eps s / strata`, `s = 1..=strata`.
    pub strata: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { probes: 128, strata: 4 }
    }
}

/// Searches for `y` in `A` with `||y - z|| <= eps`: first along random planes
/// through the column span of `z`, then along the planes joining that span to
/// each coordinate axis, in both orientations.
pub fn certify<R: Rng + ?Sized>(
    set: &IndicatorSet,
    z: &PointCloud,
    epsilon: f64,
    probes: &ProbeConfig,
    rng: &mut R,
) -> Result<Option<Certificate>> {
    if set.contains(z) {
        return Ok(Some(Certificate {
            point: z.clone(),
            witness: z.clone(),
            distance: 0.0,
        }));
    }
    let d = z.dim();
    let strata = probes.strata.max(1);
    let mixed = |rng: &mut R| -> DVector<f64> {
        let a: DVector<f64> = z.matrix() * gaussian_vector(z.len(), rng);
        if a.norm() > 0.0 { a } else { gaussian_vector(d, rng) }
    };
    let try_plane = |plane: PlaneRotation, signs: &[f64]| -> Result<Option<Certificate>> {
        let orbit = plane.orbit_of(z)?;
        for s in 1..=strata {
            let angle = orbit.angle_for_distance(epsilon * s as f64 / strata as f64);
            for &sg in signs {
                let y = orbit.point(sg * angle);
                let distance = y.distance(z)?;
                if distance <= epsilon + WITNESS_SLACK && set.contains(&y) {
                    return Ok(Some(Certificate {
                        point: z.clone(),
                        witness: y,
                        distance,
                    }));
                }
            }
        }
        Ok(None)
    };
    for _ in 0..probes.probes.div_ceil(strata) {
        let a = mixed(rng);
        let plane = PlaneRotation::from_pair(a, gaussian_vector(d, rng), 0.0)?;
        if let Some(c) = try_plane(plane, &[1.0])? {
            return Ok(Some(c));
        }
    }
    let a = mixed(rng);
    for k in 0..d {
        let mut axis = DVector::zeros(d);
        axis[k] = 1.0;
        let Ok(plane) = PlaneRotation::from_pair(a.clone(), axis, 0.0) else {
            continue;
        };
        if let Some(c) = try_plane(plane, &[1.0, -1.0])? {
            return Ok(Some(c));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupRecord {
    pub epsilon: f64,
    pub measure: f64,
    pub measure_samples: usize,
    /// Certified lower estimate of `mu(A_eps)`.
    pub blowup: f64,
    pub blowup_samples: usize,
    /// Closed-form estimate on the same points, when available.
    pub exact_blowup: Option<f64>,
    /// Fraction of points where certification and the closed form agree.
    pub agreement: Option<f64>,
    pub lipschitz: f64,
    /// `1 - exp(-(d - 2) eps^2 mu(A)^2 / (8 L^2))` at the estimated measure.
    pub bound: f64,
    /// `sqrt(p (1 - p) / N)` at the certified estimate.
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct BlowupOutcome {
    pub records: Vec<BlowupRecord>,
    /// Certificates of the first points of each `eps`, for re-checking.
    pub certificates: Vec<Vec<Certificate>>,
}

/// `1 - exp(-(d - 2) eps^2 measure^2 / (8 L^2))`.
pub fn isoperimetric_bound(d: usize, epsilon: f64, measure: f64, lipschitz: f64) -> f64 {
    1.0 - (-((d as f64) - 2.0) * (epsilon * measure / lipschitz).powi(2) / 8.0).exp()
}

const KEPT_CERTIFICATES: usize = 64;

#[allow(clippy::too_many_arguments)]
pub fn blowup_experiment(
    set: &IndicatorSet,
    x0: &PointCloud,
    epsilons: &[f64],
    samples_measure: usize,
    samples_blowup: usize,
    probes: &ProbeConfig,
    seed: u64,
) -> Result<BlowupOutcome> {
    if x0.is_zero() {
        return Err(Error::ZeroInput);
    }
    if samples_measure == 0 || samples_blowup == 0 {
        return Err(Error::Precondition("sample counts must be positive".into()));
    }
    let sampler = OrbitSampler::new(x0);
    let lipschitz = x0.spectral_norm();
    let d = x0.dim();
    let measure_seed = child_seed(seed, 0);
    let inside = (0..samples_measure)
        .into_par_iter()
        .map(|i| Ok(set.contains(&sampler.sample(&mut derive_stream(measure_seed, i as u64))?)))
        .collect::<Result<Vec<bool>>>()?;
    let (measure, _) = stats::frequency(inside);

    let mut records = Vec::with_capacity(epsilons.len());
    let mut certificates = Vec::with_capacity(epsilons.len());
    for (k, &eps) in epsilons.iter().enumerate() {
        let eps_seed = child_seed(seed, 1 + k as u64);
        let outcomes = (0..samples_blowup)
            .into_par_iter()
            .map(|i| {
                let mut rng = derive_stream(eps_seed, i as u64);
                let z = sampler.sample(&mut rng)?;
                let cert = certify(set, &z, eps, probes, &mut rng)?;
                let exact = set.exact_blowup(&z, eps);
                Ok((cert, exact))
            })
            .collect::<Vec<Result<_>>>()
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.map_err(|e: Error| e.in_trial(i)))
            .collect::<Result<Vec<(Option<Certificate>, Option<bool>)>>>()?;
        let (blowup, _) = stats::frequency(outcomes.iter().map(|o| o.0.is_some()));
        let exact_known = outcomes.iter().all(|o| o.1.is_some());
        let (exact_blowup, agreement) = if exact_known {
            (
                Some(stats::frequency(outcomes.iter().map(|o| o.1 == Some(true))).0),
                Some(stats::frequency(outcomes.iter().map(|o| o.1 == Some(o.0.is_some()))).0),
            )
        } else {
            (None, None)
        };
        records.push(BlowupRecord {
            epsilon: eps,
            measure,
            measure_samples: samples_measure,
            blowup,
            blowup_samples: samples_blowup,
            exact_blowup,
            agreement,
            lipschitz,
            bound: isoperimetric_bound(d, eps, measure, lipschitz),
            sigma: stats::binomial_std_error(blowup, samples_blowup),
        });
        certificates.push(
            outcomes
                .into_iter()
                .filter_map(|o| o.0)
                .take(KEPT_CERTIFICATES)
                .collect(),
        );
    }
    Ok(BlowupOutcome { records, certificates })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SudakovRecord {
    pub m: usize,
    pub alpha: f64,
    pub samples: usize,
    /// Monte Carlo estimate of `E max_i <w, x_i>`.
    pub estimate: f64,
    pub std_error: f64,
    /// `estimate / (alpha sqrt(ln m))`; absent for `m = 1`.
    pub ratio: Option<f64>,
}

/// Estimates `E max_i <w, x_i>` for standard Gaussian `w` and points that
/// are pairwise at least `alpha` apart.
pub fn sudakov_check(points: &[DVector<f64>], alpha: f64, samples: usize, seed: u64) -> Result<SudakovRecord> {
    let m = points.len();
    if m == 0 || samples < 2 {
        return Err(Error::Precondition("need at least one point and two samples".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points have different lengths".into()));
    }
    for i in 0..m {
        for j in i + 1..m {
            let gap = (&points[i] - &points[j]).norm();
            if gap < alpha * (1.0 - 1e-12) {
                return Err(Error::Precondition(format!(
                    "points {i} and {j} are {gap} apart, below the separation {alpha}"
                )));
            }
        }
    }
    let stacked = DMatrix::from_columns(points).transpose();
    let maxima = (0..samples)
        .into_par_iter()
        .map(|i| {
            let w = gaussian_vector(dim, &mut derive_stream(seed, i as u64));
            (&stacked * w).max()
        })
        .collect::<Vec<f64>>();
    let estimate = stats::mean(&maxima);
    Ok(SudakovRecord {
        m,
        alpha,
        samples,
        estimate,
        std_error: (stats::variance(&maxima) / samples as f64).sqrt(),
        ratio: (m > 1).then(|| estimate / (alpha * (m as f64).ln().sqrt())),
    })
}

/// `x_i = e_i` in `R^m`, pairwise `sqrt(2)` apart.
pub fn basis_points(m: usize) -> Vec<DVector<f64>> {
    (0..m)
        .map(|i| {
            let mut e = DVector::zeros(m);
            e[i] = 1.0;
            e
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRecord {
    pub d: usize,
    pub t: f64,
    pub empirical: f64,
    /// `exp(-t^2 / (2 d))`.
    pub bound: f64,
    pub samples: usize,
    pub sigma: f64,
}

/// Tails `Pr(<x, y> >= t)` for independent uniform `x, y` on the sphere of
/// radius `sqrt(d)`, all thresholds evaluated on the same pairs.
pub fn sphere_tail_check(d: usize, ts: &[f64], samples: usize, seed: u64) -> Result<Vec<TailRecord>> {
    if d == 0 || samples == 0 {
        return Err(Error::Precondition("need d >= 1 and samples >= 1".into()));
    }
    let radius = (d as f64).sqrt();
    let products = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_stream(seed, i as u64);
            let x = PointCloud::random_sphere(d, 1, radius, &mut rng);
            let y = PointCloud::random_sphere(d, 1, radius, &mut rng);
            x.dot(&y).expect("same shape")
        })
        .collect::<Vec<f64>>();
    Ok(ts
        .iter()
        .map(|&t| {
            let (p, _) = stats::frequency(products.iter().map(|&v| v >= t));
            let bound = (-t * t / (2.0 * d as f64)).exp();
            TailRecord {
                d,
                t,
                empirical: p,
                bound,
                samples,
                sigma: stats::binomial_std_error(p, samples),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRecord {
    pub points: usize,
    pub trials: usize,
    pub max_feature_norm: f64,
    /// Unbiased variance of `Z = max_i <G, Psi(x^i)>`.
    pub variance: f64,
    pub std_error: f64,
    pub bound: f64,
}

/// Holding all but the last layer of `net` fixed, redraws the last layer
/// `trials` times and estimates the variance of `Z = max_i <G, Psi(x^i)>`
/// with `G` standard Gaussian. With the network's own last-layer law,
/// `Z = sqrt(2^{l-1}) max_i f(x^i)`.
pub fn variance_check_last_layer(net: &Network, points: &[PointCloud], trials: usize, seed: u64) -> Result<VarianceRecord> {
    let spec = net.spec();
    if !spec.is_relu_xavier() || spec.depth() < 2 {
        return Err(Error::Precondition(
            "needs Xavier ReLU hidden layers and an identity scalar last layer".into(),
        ));
    }
    if points.is_empty() || trials < 2 {
        return Err(Error::Precondition("need at least one point and two trials".into()));
    }
    let features = points.iter().map(|p| net.feature_map(p)).collect::<Result<Vec<_>>>()?;
    let max_feature_norm = features.iter().map(PointCloud::norm).fold(0.0, f64::max);
    if max_feature_norm > 2.0 + 1e-12 {
        return Err(Error::Precondition(format!(
            "feature norms must be <= 2, got {max_feature_norm}"
        )));
    }
    let last = *spec.layers().last().expect("depth >= 2");
    let scale = 2f64.powi(spec.depth() as i32 - 1).sqrt();
    let zs = (0..trials)
        .into_par_iter()
        .map(|i| {
            let w = LayerWeights::sample(&last, &mut derive_stream(seed, i as u64));
            let candidate = net.with_layer(spec.depth() - 1, w)?;
            let mut best = f64::NEG_INFINITY;
            for p in points {
                best = best.max(candidate.forward(p)?);
            }
            Ok(scale * best)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(VarianceRecord {
        points: points.len(),
        trials,
        max_feature_norm,
        variance: stats::variance(&zs),
        std_error: stats::variance_std_error(&zs),
        bound: 4.0,
    })
}
