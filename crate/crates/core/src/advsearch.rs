//! Sign flips of random networks on rotation orbits: radius budgets, balance
//! estimates, the orbit search and the end-to-end trial drivers.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::convnet::{Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::rotgroup::{act, gaussian_vector, haar_sample, OrbitSampler, PlaneOrbit, PlaneRotation, PointCloud};
use crate::stats::{self, CompensatedSum};
use crate::stream::{child_seed, derive_stream};

const SEARCH_STREAM_TAG: u64 = 0x5EA2C4;

/// A real-valued function of a point cloud, evaluated on orbit points.
pub trait OrbitFunction: Sync {
    fn eval(&self, x: &PointCloud) -> Result<f64>;

    /// Optional faster evaluator of `theta -> f(R(theta) x)` along a plane.
    fn along_plane<'a>(&'a self, _orbit: &'a PlaneOrbit) -> Result<Option<PlaneFn<'a>>> {
        Ok(None)
    }
}

pub type PlaneFn<'a> = Box<dyn Fn(f64) -> Result<f64> + 'a>;

impl OrbitFunction for Network {
    fn eval(&self, x: &PointCloud) -> Result<f64> {
        self.forward(x)
    }

    fn along_plane<'a>(&'a self, orbit: &'a PlaneOrbit) -> Result<Option<PlaneFn<'a>>> {
        let ev = Network::along_plane(self, orbit)?;
        Ok(Some(Box::new(move |theta| ev.eval(theta))))
    }
}

impl<F> OrbitFunction for F
where
    F: Fn(&PointCloud) -> Result<f64> + Sync,
{
    fn eval(&self, x: &PointCloud) -> Result<f64> {
        self(x)
    }
}

/// `-1`, `0` or `+1`; zero is a sign of its own.
pub fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdversarialBudget {
    pub tau: f64,
    pub d: usize,
    pub spectral: f64,
    pub norm: f64,
    /// `tau ||x0||_sp / sqrt(d - 2)`.
    pub epsilon: f64,
    /// `1 - 2 exp(-tau^2 / 32)`.
    pub success_floor: f64,
}

pub fn budget(tau: f64, x0: &PointCloud) -> Result<AdversarialBudget> {
    let d = x0.dim();
    if d < 3 {
        return Err(Error::InvalidDimension(format!("the budget needs d >= 3, got {d}")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    let norm = x0.norm();
    if norm == 0.0 {
        return Err(Error::ZeroInput);
    }
    let spectral = x0.spectral_norm();
    Ok(AdversarialBudget {
        tau,
        d,
        spectral,
        norm,
        epsilon: tau * spectral / ((d - 2) as f64).sqrt(),
        success_floor: odd_success_floor(tau),
    })
}

pub fn odd_success_floor(tau: f64) -> f64 {
    1.0 - 2.0 * (-tau * tau / 32.0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceReport {
    /// Fraction of orbit samples with `f >= 0`.
    pub p_plus: f64,
    /// Fraction of orbit samples with `f <= 0`.
    pub p_minus: f64,
    pub samples: usize,
    /// 99% normal-approximation halfwidth of a binomial proportion at `p_plus`.
    pub confidence_halfwidth: f64,
}

impl BalanceReport {
    pub fn min_side(&self) -> f64 {
        self.p_plus.min(self.p_minus)
    }
}

pub fn estimate_balance<F: OrbitFunction + ?Sized, R: Rng + ?Sized>(
    f: &F,
    x0: &PointCloud,
    samples: usize,
    rng: &mut R,
) -> Result<BalanceReport> {
    if samples < 100 {
        return Err(Error::Precondition(format!("balance needs >= 100 samples, got {samples}")));
    }
    let sampler = OrbitSampler::new(x0);
    let (mut plus, mut minus) = (0usize, 0usize);
    for _ in 0..samples {
        let v = f.eval(&sampler.sample(rng)?)?;
        plus += (v >= 0.0) as usize;
        minus += (v <= 0.0) as usize;
    }
    let p_plus = plus as f64 / samples as f64;
    Ok(BalanceReport {
        p_plus,
        p_minus: minus as f64 / samples as f64,
        samples,
        confidence_halfwidth: stats::binomial_halfwidth_99(p_plus, samples),
    })
}

/// Knobs of [`find_adversarial`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchConfig {
    /// Random planes tried in the first phase.
    pub planes: usize,
    /// Distances on the geometric ladder of each plane.
    pub angles: usize,
    /// Haar rotations tried in the second phase.
    pub haar: usize,
    /// Relative width at which bisection stops.
    pub rel_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            planes: 64,
            angles: 32,
            haar: 64,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchPhase {
    /// `f(x0) = 0`.
    Degenerate,
    Plane,
    Haar,
    /// No flip seen.
    NotFound,
}

impl fmt::Display for SearchPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchPhase::Degenerate => "degenerate",
            SearchPhase::Plane => "plane",
            SearchPhase::Haar => "haar",
            SearchPhase::NotFound => "not-found",
        })
    }
}

#[derive(Debug, Clone)]
pub struct AdversarialResult {
    pub base_sign: i8,
    /// Closest flip seen is within the budget (or `f(x0) = 0`).
    pub found: bool,
    /// Closest flip seen, which may lie beyond the budget.
    pub flip_point: Option<PointCloud>,
    /// `||flip_point - x0||`, `0` in the degenerate case, infinite if no flip
    /// was seen.
    pub achieved_distance: f64,
    pub budget: AdversarialBudget,
    pub evaluations: usize,
    /// `(distance from x0, sign)` for every evaluation after the base point.
    pub trace: Vec<(f64, i8)>,
    pub phase: SearchPhase,
}

struct Flip {
    point: PointCloud,
    distance: f64,
}

struct Search<'a, F: OrbitFunction + ?Sized> {
    f: &'a F,
    x0: &'a PointCloud,
    base_sign: i8,
    config: &'a SearchConfig,
    evaluations: usize,
    trace: Vec<(f64, i8)>,
}

impl<F: OrbitFunction + ?Sized> Search<'_, F> {
    fn sign_at(&mut self, x: &PointCloud, distance: f64) -> Result<i8> {
        let s = sign(self.f.eval(x)?);
        self.evaluations += 1;
        self.trace.push((distance, s));
        Ok(s)
    }

    fn sign_on_plane(&mut self, fast: Option<&PlaneFn<'_>>, orbit: &PlaneOrbit, theta: f64) -> Result<i8> {
        let value = match fast {
            Some(g) => g(theta)?,
            None => self.f.eval(&orbit.point(theta))?,
        };
        let s = sign(value);
        self.evaluations += 1;
        self.trace.push((orbit.distance(theta), s));
        Ok(s)
    }

    fn flipped(&self, s: i8) -> bool {
        s == -self.base_sign
    }

    /// Random plane whose first axis lies in the column span of `x0`.
    fn plane<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PlaneRotation> {
        let d = self.x0.dim();
        let mixed: DVector<f64> = self.x0.matrix() * gaussian_vector(self.x0.len(), rng);
        let a = if mixed.norm() > 0.0 { mixed } else { gaussian_vector(d, rng) };
        PlaneRotation::from_pair(a, gaussian_vector(d, rng), 0.0)
    }

    fn plane_phase<R: Rng + ?Sized>(&mut self, epsilon: f64, rng: &mut R) -> Result<Option<Flip>> {
        let mut best: Option<Flip> = None;
        let rungs = self.config.angles.max(1);
        let top = 2.0 * epsilon;
        for _ in 0..self.config.planes {
            let plane = self.plane(rng)?;
            let orbit = plane.orbit_of(self.x0)?;
            if orbit.projected_norm() == 0.0 {
                continue;
            }
            let f = self.f;
            let fast = f.along_plane(&orbit)?;
            let limit = best.as_ref().map_or(f64::INFINITY, |b| b.distance);
            let mut lo = 0.0;
            let mut last_angle = -1.0;
            for k in 0..rungs {
                let target = top * 2f64.powf(-((rungs - 1 - k) as f64) / 4.0);
                if target >= limit {
                    break;
                }
                let angle = orbit.angle_for_distance(target);
                if angle <= last_angle {
                    break;
                }
                last_angle = angle;
                let s = self.sign_on_plane(fast.as_ref(), &orbit, angle)?;
                if self.flipped(s) {
                    let mut hi = angle;
                    while hi - lo > self.config.rel_tol * hi {
                        let mid = 0.5 * (lo + hi);
                        let s = self.sign_on_plane(fast.as_ref(), &orbit, mid)?;
                        if self.flipped(s) {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    let point = orbit.point(hi);
                    let distance = point.distance(self.x0)?;
                    // The fast path may disagree with a direct evaluation in
                    // the last bits; only directly confirmed flips count.
                    let confirmed = fast.is_none() || {
                        let s = self.sign_at(&point, distance)?;
                        self.flipped(s)
                    };
                    if confirmed && distance < limit {
                        best = Some(Flip { point, distance });
                    }
                    break;
                }
                lo = angle;
            }
        }
        Ok(best)
    }

    fn haar_phase<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<Flip>> {
        let mut best: Option<Flip> = None;
        for _ in 0..self.config.haar {
            let u = haar_sample(self.x0.dim(), rng)?;
            let y = act(&u, self.x0)?;
            let dy = y.distance(self.x0)?;
            let s = self.sign_at(&y, dy)?;
            if !self.flipped(s) {
                continue;
            }
            let path = u.geodesic()?;
            let (mut lo, mut hi) = (0.0, 1.0);
            while hi - lo > self.config.rel_tol * hi {
                let mid = 0.5 * (lo + hi);
                let p = path.apply(mid, self.x0)?;
                let dist = p.distance(self.x0)?;
                let s = self.sign_at(&p, dist)?;
                if self.flipped(s) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let point = path.apply(hi, self.x0)?;
            let distance = point.distance(self.x0)?;
            if best.as_ref().is_none_or(|b| distance < b.distance) {
                best = Some(Flip { point, distance });
            }
        }
        Ok(best)
    }
}

/// Looks for a point `U x0` near `x0` where `f` has the opposite strict sign.
///
/// Phase one draws random planes through the column span of `x0` and walks
/// each along a geometric ladder of distances up to `2 epsilon`; the first
/// strict flip on a plane is bisected in angle. Phase two, run only when no
/// plane flipped, draws Haar rotations and bisects any flip along the
/// one-parameter family from the identity to the rotation. The closest flip
/// wins; the search succeeds iff it lies within `epsilon`.
pub fn find_adversarial<F: OrbitFunction + ?Sized, R: Rng + ?Sized>(
    f: &F,
    x0: &PointCloud,
    budget: &AdversarialBudget,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<AdversarialResult> {
    if x0.is_zero() {
        return Err(Error::ZeroInput);
    }
    let base_sign = sign(f.eval(x0)?);
    if base_sign == 0 {
        return Ok(AdversarialResult {
            base_sign,
            found: true,
            flip_point: None,
            achieved_distance: 0.0,
            budget: *budget,
            evaluations: 1,
            trace: Vec::new(),
            phase: SearchPhase::Degenerate,
        });
    }
    let mut search = Search {
        f,
        x0,
        base_sign,
        config,
        evaluations: 1,
        trace: Vec::new(),
    };
    let mut phase = SearchPhase::Plane;
    let mut best = search.plane_phase(budget.epsilon, rng)?;
    if best.is_none() {
        phase = SearchPhase::Haar;
        best = search.haar_phase(rng)?;
    }
    let (flip_point, achieved_distance) = match best {
        Some(flip) => (Some(flip.point), flip.distance),
        None => {
            phase = SearchPhase::NotFound;
            (None, f64::INFINITY)
        }
    };
    Ok(AdversarialResult {
        base_sign,
        found: achieved_distance <= budget.epsilon,
        flip_point,
        achieved_distance,
        budget: *budget,
        evaluations: search.evaluations,
        trace: search.trace,
        phase,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoremKind {
    /// Odd activations, even dimension.
    Odd,
    /// Xavier ReLU hidden layers, linear scalar output.
    Relu,
}

impl fmt::Display for TheoremKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TheoremKind::Odd => "odd",
            TheoremKind::Relu => "relu",
        })
    }
}

impl FromStr for TheoremKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "odd" => Ok(TheoremKind::Odd),
            "relu" => Ok(TheoremKind::Relu),
            other => Err(format!("unknown theorem kind `{other}` (expected odd or relu)")),
        }
    }
}

impl TheoremKind {
    pub fn check(self, arch: &NetworkSpec) -> Result<()> {
        let (d, _) = arch.input_shape();
        if !arch.is_scalar() {
            return Err(Error::Precondition("the network must have a scalar output".into()));
        }
        match self {
            TheoremKind::Odd if !arch.all_odd() => {
                Err(Error::Precondition("kind odd needs odd activations in every layer".into()))
            }
            TheoremKind::Odd if d % 2 == 1 => Err(Error::Precondition(format!("kind odd needs even d, got {d}"))),
            TheoremKind::Relu if !arch.is_relu_xavier() => Err(Error::Precondition(
                "kind relu needs Xavier ReLU hidden layers and an identity last layer".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Probability floor with explicit constants, where one is known.
    pub fn floor(self, tau: f64) -> Option<f64> {
        match self {
            TheoremKind::Odd => Some(odd_success_floor(tau)),
            TheoremKind::Relu => None,
        }
    }
}

/// One network at one `tau`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub network: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub base_sign: i8,
    pub found: bool,
    pub achieved_distance: f64,
    pub phase: SearchPhase,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauSummary {
    pub tau: f64,
    pub epsilon: f64,
    pub networks: usize,
    pub success_rate: f64,
    pub degenerate_rate: f64,
    /// Mean of `achieved_distance / epsilon` over non-degenerate successes.
    pub mean_distance_ratio: f64,
    pub success_floor: Option<f64>,
    /// `sqrt(p (1 - p) / N)` at the floor, or at the observed rate when there
    /// is no floor.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremRecord {
    pub kind: TheoremKind,
    pub rows: Vec<TrialRow>,
    pub summaries: Vec<TauSummary>,
}

/// Runs the search on `networks` independent weight draws for every `tau`.
///
/// Network `i` comes from stream `i` of `seed`. Every `tau` reuses the same
/// search stream for a given network, and a flip found at a smaller `tau` is
/// kept for larger ones, so success is monotone in `tau`.
pub fn theorem_trial(
    kind: TheoremKind,
    arch: &NetworkSpec,
    x0: &PointCloud,
    taus: &[f64],
    networks: usize,
    search: &SearchConfig,
    seed: u64,
) -> Result<TheoremRecord> {
    kind.check(arch)?;
    if networks == 0 || taus.is_empty() {
        return Err(Error::Precondition("need at least one network and one tau".into()));
    }
    let mut taus = taus.to_vec();
    taus.sort_by(f64::total_cmp);
    let budgets = taus.iter().map(|&t| budget(t, x0)).collect::<Result<Vec<_>>>()?;
    let search_seed = child_seed(seed, SEARCH_STREAM_TAG);

    let per_network: Vec<Result<Vec<TrialRow>>> = (0..networks)
        .into_par_iter()
        .map(|i| {
            let net = Network::sample(arch, &mut derive_stream(seed, i as u64));
            let mut carried = (f64::INFINITY, SearchPhase::NotFound);
            let mut rows = Vec::with_capacity(budgets.len());
            for b in &budgets {
                let mut rng = derive_stream(search_seed, i as u64);
                let r = find_adversarial(&net, x0, b, search, &mut rng).map_err(|e| e.in_trial(i))?;
                if r.achieved_distance <= carried.0 {
                    carried = (r.achieved_distance, r.phase);
                }
                let (distance, phase) = carried;
                rows.push(TrialRow {
                    network: i,
                    tau: b.tau,
                    epsilon: b.epsilon,
                    base_sign: r.base_sign,
                    found: distance <= b.epsilon,
                    achieved_distance: distance,
                    phase,
                    evaluations: r.evaluations,
                });
            }
            Ok(rows)
        })
        .collect();
    let per_network = per_network.into_iter().collect::<Result<Vec<_>>>()?;

    let summaries = budgets
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let rows: Vec<&TrialRow> = per_network.iter().map(|r| &r[k]).collect();
            let (success_rate, _) = stats::frequency(rows.iter().map(|r| r.found));
            let (degenerate_rate, _) = stats::frequency(rows.iter().map(|r| r.base_sign == 0));
            let mut ratio = CompensatedSum::new();
            let mut count = 0usize;
            for r in rows.iter().filter(|r| r.found && r.base_sign != 0) {
                ratio.add(r.achieved_distance / r.epsilon);
                count += 1;
            }
            let floor = kind.floor(b.tau);
            TauSummary {
                tau: b.tau,
                epsilon: b.epsilon,
                networks,
                success_rate,
                degenerate_rate,
                mean_distance_ratio: if count > 0 { ratio.value() / count as f64 } else { 0.0 },
                success_floor: floor,
                std_error: stats::binomial_std_error(floor.unwrap_or(success_rate).clamp(0.0, 1.0), networks),
            }
        })
        .collect();

    Ok(TheoremRecord {
        kind,
        rows: per_network.into_iter().flatten().collect(),
        summaries,
    })
}

/// `floor(sqrt(ln d))`, the number of orbit points in a separation trial.
pub fn separation_points(d: usize) -> usize {
    (d as f64).ln().sqrt().floor() as usize
}

/// `1 - 2 C(m, 2) n exp(-d/8)`: union bound on all same-position column pairs
/// having inner product at most half the squared norm.
pub fn core1_bound(m: usize, n: usize, d: usize) -> f64 {
    let pairs = (m * m.saturating_sub(1) / 2) as f64;
    1.0 - 2.0 * pairs * n as f64 * (-(d as f64) / 8.0).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationRow {
    pub trial: usize,
    pub separated: bool,
    pub core1: bool,
    pub min_feature_gap: f64,
    pub max_feature_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationRecord {
    pub m: usize,
    pub trials: usize,
    pub rows: Vec<SeparationRow>,
    pub separation_rate: f64,
    pub core1_rate: f64,
    pub core1_bound: f64,
    pub mean_min_feature_gap: f64,
    pub max_feature_norm: f64,
}

/// Per trial: `m` orbit points and a fresh network. Records whether the
/// network takes both strict signs on them, whether all same-position column
/// pairs have inner product at most `||x0_t||^2 / 2`, and the spread of
/// their feature maps.
pub fn separation_experiment(arch: &NetworkSpec, x0: &PointCloud, trials: usize, seed: u64) -> Result<SeparationRecord> {
    TheoremKind::Relu.check(arch)?;
    if arch.depth() < 2 {
        return Err(Error::Precondition("separation needs depth >= 2".into()));
    }
    if trials == 0 {
        return Err(Error::Precondition("trials must be >= 1".into()));
    }
    let (d, n) = (x0.dim(), x0.len());
    let m = separation_points(d);
    let half_norms: Vec<f64> = x0.column_norms().iter().map(|c| 0.5 * c * c).collect();
    let sampler = OrbitSampler::new(x0);

    let rows = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_stream(seed, i as u64);
            let points = (0..m).map(|_| sampler.sample(&mut rng)).collect::<Result<Vec<_>>>()?;
            let net = Network::sample(arch, &mut rng);
            let values = points.iter().map(|p| net.forward(p)).collect::<Result<Vec<_>>>()?;
            let features = points.iter().map(|p| net.feature_map(p)).collect::<Result<Vec<_>>>()?;
            let separated = values.iter().any(|&a| a < 0.0) && values.iter().any(|&b| b > 0.0);
            let mut core1 = true;
            let mut gap = f64::INFINITY;
            for a in 0..m {
                for b in a + 1..m {
                    for (t, half) in half_norms.iter().enumerate() {
                        if points[a].column(t).dot(&points[b].column(t)) > *half {
                            core1 = false;
                        }
                    }
                    gap = gap.min(features[a].distance(&features[b])?);
                }
            }
            let max_norm = features.iter().map(PointCloud::norm).fold(0.0, f64::max);
            Ok(SeparationRow {
                trial: i,
                separated,
                core1,
                min_feature_gap: if m >= 2 { gap } else { 0.0 },
                max_feature_norm: max_norm,
            })
        })
        .collect::<Vec<Result<SeparationRow>>>()
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| e.in_trial(i)))
        .collect::<Result<Vec<_>>>()?;

    let gaps: Vec<f64> = rows.iter().map(|r| r.min_feature_gap).collect();
    Ok(SeparationRecord {
        m,
        trials,
        separation_rate: stats::frequency(rows.iter().map(|r| r.separated)).0,
        core1_rate: stats::frequency(rows.iter().map(|r| r.core1)).0,
        core1_bound: core1_bound(m, n, d),
        mean_min_feature_gap: stats::mean(&gaps),
        max_feature_norm: rows.iter().map(|r| r.max_feature_norm).fold(0.0, f64::max),
        rows,
    })
}
