//! The arc-cosine dual activation and the compositional kernel of a ReLU
//! convolutional network, compared against the inner product of feature maps.

use rayon::prelude::*;
use serde::Serialize;

use crate::convnet::{feature_map, LayerWeights, Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::rotgroup::{orbit_sample, PointCloud};
use crate::stats;
use crate::stream::{child_seed, derive_stream};

const DOMAIN_SLACK: f64 = 1e-12;
const COLUMN_NORM_TOL: f64 = 1e-8;

/// `(1/pi) (u (pi - arccos u) + sqrt(1 - u^2))`, the expected product of ReLUs
/// of two standard Gaussians with correlation `u`, times two.
pub fn dual_activation(u: f64) -> Result<f64> {
    if !u.is_finite() || u.abs() > 1.0 + DOMAIN_SLACK {
        return Err(Error::Domain(format!("dual activation needs |u| <= 1, got {u}")));
    }
    let u = u.clamp(-1.0, 1.0);
    let root = ((1.0 - u) * (1.0 + u)).sqrt();
    Ok((u * (std::f64::consts::PI - u.acos()) + root) / std::f64::consts::PI)
}

/// `sigma_hat` composed with itself `times` times, starting at `u`.
pub fn iterate_dual(u: f64, times: usize) -> Result<f64> {
    (0..times).try_fold(u, |acc, _| dual_activation(acc))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelEvaluation {
    /// `levels[v][t]` for `v = 0 .. l-1`.
    pub levels: Vec<Vec<f64>>,
    /// Mean of the deepest level over positions: the value matched by
    /// `<Psi(x), Psi(y)>` in expectation.
    pub value: f64,
}

impl KernelEvaluation {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

fn check_columns(x: &PointCloud) -> Result<()> {
    let expected = (x.dim() as f64).sqrt();
    for (column, norm) in x.column_norms().into_iter().enumerate() {
        if (norm - expected).abs() > COLUMN_NORM_TOL {
            return Err(Error::ColumnNorm {
                column,
                norm,
                expected,
            });
        }
    }
    Ok(())
}

/// Bottom-up evaluation of `k_{0,t} = <x_t, y_t>/d` and
/// `k_{v,t} = sigma_hat(mean of k_{v-1} over window t of layer v)`.
pub fn kernel_recursion(arch: &NetworkSpec, x: &PointCloud, y: &PointCloud) -> Result<KernelEvaluation> {
    let (d, n) = arch.input_shape();
    for (cloud, name) in [(x, "x"), (y, "y")] {
        if cloud.dim() != d || cloud.len() != n {
            return Err(Error::Shape(format!(
                "{name} is {}x{}, architecture expects {d}x{n}",
                cloud.dim(),
                cloud.len()
            )));
        }
        check_columns(cloud)?;
    }
    let depth = arch.depth();
    let mut levels = Vec::with_capacity(depth);
    let base: Vec<f64> = (0..n)
        .map(|t| {
            let (a, b) = (x.column(t), y.column(t));
            if a == b {
                1.0
            } else {
                (a.dot(&b) / d as f64).clamp(-1.0, 1.0)
            }
        })
        .collect();
    levels.push(base);
    for layer in &arch.layers()[..depth - 1] {
        let prev = levels.last().expect("non-empty");
        let w = layer.width as f64;
        let next = (0..layer.out_positions())
            .map(|t| {
                let start = t * layer.stride;
                let avg = prev[start..start + layer.width].iter().sum::<f64>() / w;
                dual_activation(avg)
            })
            .collect::<Result<Vec<f64>>>()?;
        levels.push(next);
    }
    let top = levels.last().expect("non-empty");
    let value = top.iter().sum::<f64>() / top.len() as f64;
    Ok(KernelEvaluation { levels, value })
}

/// `<Psi(x), Psi(y)>`.
pub fn empirical_kernel(spec: &NetworkSpec, weights: &[LayerWeights], x: &PointCloud, y: &PointCloud) -> Result<f64> {
    let fx = feature_map(spec, weights, x)?;
    let fy = feature_map(spec, weights, y)?;
    fx.dot(&fy)
}

/// Shape of the networks in a kernel deviation sweep; only the hidden channel
/// count varies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationSetup {
    pub d: usize,
    pub n: usize,
    pub width: usize,
    pub stride: usize,
    pub depth: usize,
}

impl DeviationSetup {
    pub fn arch(&self, channels: usize) -> Result<NetworkSpec> {
        NetworkSpec::standard(
            self.d,
            self.n,
            self.width,
            self.stride,
            channels,
            self.depth,
            crate::convnet::Activation::Relu,
            crate::convnet::InitKind::XavierGaussian,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationRow {
    pub channels: usize,
    pub trials: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

/// Per-trial deviations `|k(x, y) - <Psi(x), Psi(y)>|` for one channel count.
/// Trial `i` draws a point `x` with `sqrt(d)`-norm columns, a point `y` on its
/// orbit and a fresh network, all from stream `i` of the channel's seed.
pub fn kernel_deviations(setup: &DeviationSetup, channels: usize, trials: usize, seed: u64) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(Error::Precondition("trials must be >= 1".into()));
    }
    let arch = setup.arch(channels)?;
    let seed = child_seed(seed, channels as u64);
    let radius = (setup.d as f64).sqrt();
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_stream(seed, i as u64);
            let x = PointCloud::random_sphere(setup.d, setup.n, radius, &mut rng);
            let y = orbit_sample(&x, &mut rng)?;
            let net = Network::sample(&arch, &mut rng);
            let analytic = kernel_recursion(&arch, &x, &y)?.value;
            let empirical = empirical_kernel(&arch, net.weights(), &x, &y)?;
            Ok((analytic - empirical).abs())
        })
        .collect::<Vec<Result<f64>>>()
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| e.in_trial(i)))
        .collect()
}

pub fn kernel_deviation_experiment(
    setup: &DeviationSetup,
    channels: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<DeviationRow>> {
    if trials == 0 {
        return Err(Error::Precondition("trials must be >= 1".into()));
    }
    channels
        .iter()
        .map(|&c| {
            let devs = stats::sorted(&kernel_deviations(setup, c, trials, seed)?);
            Ok(DeviationRow {
                channels: c,
                trials,
                mean: stats::mean(&devs),
                p50: stats::quantile_sorted(&devs, 0.5),
                p95: stats::quantile_sorted(&devs, 0.95),
                max: *devs.last().expect("trials >= 1"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convnet::{Activation, InitKind};
    use crate::rotgroup::{act, haar_sample};
    use nalgebra::{DMatrix, DVector};
    use std::f64::consts::PI;

    fn standard(d: usize, n: usize, width: usize, stride: usize, depth: usize) -> NetworkSpec {
        NetworkSpec::standard(d, n, width, stride, 8, depth, Activation::Relu, InitKind::XavierGaussian).unwrap()
    }

    #[test]
    fn dual_activation_cases() {
        assert_eq!(dual_activation(1.0).unwrap(), 1.0);
        assert!(dual_activation(-1.0).unwrap().abs() < 1e-15);
        assert!((dual_activation(0.0).unwrap() - 1.0 / PI).abs() < 1e-15);
        // 50-digit evaluation of the closed form: 1/3 + sqrt(3)/(2 pi).
        #[allow(clippy::excessive_precision)]
        let half = 0.608_997_781_044_229_358_088_996_582_489_818_054_032_026_573_516_65;
        assert!((dual_activation(0.5).unwrap() - half).abs() < 1e-12);
        assert_eq!(dual_activation(1.0 + 5e-13).unwrap(), 1.0);
        assert!(dual_activation(1.0 + 1e-9).is_err());
        assert!(dual_activation(-1.5).is_err());
        assert!(dual_activation(f64::NAN).is_err());
    }

    #[test]
    fn dual_activation_is_monotone_into_unit_interval() {
        let grid: Vec<f64> = (0..=10_000).map(|i| -1.0 + 2.0 * i as f64 / 10_000.0).collect();
        let values: Vec<f64> = grid.iter().map(|&u| dual_activation(u).unwrap()).collect();
        for pair in values.windows(2) {
            assert!(pair[0] <= pair[1]);
        }
        assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn dual_activation_matches_gaussian_expectation() {
        // 2 E[relu(g) relu(h)] for unit Gaussians with correlation u.
        let mut rng = derive_stream(30, 0);
        let u: f64 = 0.3;
        let samples = 400_000;
        let total: f64 = (0..samples)
            .map(|_| {
                let v = crate::rotgroup::gaussian_vector(2, &mut rng);
                let g = v[0];
                let h = u * v[0] + (1.0 - u * u).sqrt() * v[1];
                2.0 * g.max(0.0) * h.max(0.0)
            })
            .sum();
        let mc = total / samples as f64;
        assert!((mc - dual_activation(u).unwrap()).abs() < 0.01, "mc {mc}");
    }

    #[test]
    fn diagonal_is_exactly_one() {
        let mut rng = derive_stream(31, 0);
        for (d, n, w, s, l) in [(8, 4, 2, 2, 2), (16, 5, 3, 1, 3), (5, 1, 1, 1, 2), (32, 6, 6, 1, 4)] {
            let arch = standard(d, n, w, s, l);
            let x = PointCloud::random_sphere(d, n, (d as f64).sqrt(), &mut rng);
            let k = kernel_recursion(&arch, &x, &x).unwrap();
            assert_eq!(k.value, 1.0);
            assert_eq!(k.depth(), l);
        }
    }

    #[test]
    fn orthogonal_columns_give_one_over_pi() {
        let d = 4;
        let r = (d as f64).sqrt();
        let x = PointCloud::from_matrix(DMatrix::from_columns(&[DVector::from_row_slice(&[r, 0.0, 0.0, 0.0]), DVector::from_row_slice(&[0.0, r, 0.0, 0.0])]));
        let y = PointCloud::from_matrix(DMatrix::from_columns(&[DVector::from_row_slice(&[0.0, 0.0, r, 0.0]), DVector::from_row_slice(&[0.0, 0.0, 0.0, r])]));
        let arch = standard(d, 2, 2, 1, 2);
        let k = kernel_recursion(&arch, &x, &y).unwrap();
        assert!((k.value - 1.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn half_correlated_columns_follow_iterates() {
        // Columns with <x_t, y_t> = d/2: every level v equals sigma_hat^v(1/2).
        let d = 6;
        let n = 5;
        let r = (d as f64).sqrt();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for t in 0..n {
            let mut a = DVector::zeros(d);
            let mut b = DVector::zeros(d);
            a[t % d] = r;
            b[t % d] = r * 0.5;
            b[(t + 1) % d] = r * 0.75f64.sqrt();
            xs.push(a);
            ys.push(b);
        }
        let x = PointCloud::from_columns(&xs).unwrap();
        let y = PointCloud::from_columns(&ys).unwrap();
        let arch = NetworkSpec::standard(d, n, 2, 1, 8, 3, Activation::Relu, InitKind::XavierGaussian).unwrap();
        let k = kernel_recursion(&arch, &x, &y).unwrap();
        for (v, level) in k.levels.iter().enumerate() {
            let expected = iterate_dual(0.5, v).unwrap();
            for &value in level {
                assert!((value - expected).abs() < 1e-14, "level {v}");
            }
        }
        assert!((k.value - 0.683_905_650_898_706).abs() < 1e-14);
    }

    #[test]
    fn levels_lie_in_range() {
        let mut rng = derive_stream(32, 0);
        let arch = standard(6, 7, 3, 2, 3);
        for _ in 0..50 {
            let x = PointCloud::random_sphere(6, 7, 6f64.sqrt(), &mut rng);
            let y = PointCloud::random_sphere(6, 7, 6f64.sqrt(), &mut rng);
            let k = kernel_recursion(&arch, &x, &y).unwrap();
            assert!(k.levels[0].iter().all(|v| (-1.0..=1.0).contains(v)));
            for level in &k.levels[1..] {
                assert!(level.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn rejects_wrong_column_norms() {
        let arch = standard(3, 2, 1, 1, 2);
        let mut rng = derive_stream(33, 0);
        let x = PointCloud::random_sphere(3, 2, 3f64.sqrt(), &mut rng);
        let mut m = x.matrix().clone();
        m.column_mut(1).scale_mut(1.1);
        let bad = PointCloud::from_matrix(m);
        let err = kernel_recursion(&arch, &x, &bad).unwrap_err().to_string();
        assert!(err.contains("column 1"), "{err}");
    }

    #[test]
    fn analytic_kernel_is_rotation_invariant() {
        let mut rng = derive_stream(34, 0);
        let arch = standard(10, 6, 2, 2, 3);
        for _ in 0..20 {
            let x = PointCloud::random_sphere(10, 6, 10f64.sqrt(), &mut rng);
            let y = PointCloud::random_sphere(10, 6, 10f64.sqrt(), &mut rng);
            let u = haar_sample(10, &mut rng).unwrap();
            let a = kernel_recursion(&arch, &x, &y).unwrap().value;
            let b = kernel_recursion(&arch, &act(&u, &x).unwrap(), &act(&u, &y).unwrap()).unwrap().value;
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn empirical_kernel_cases() {
        let mut rng = derive_stream(35, 0);
        let arch = standard(6, 3, 2, 1, 2);
        let x = PointCloud::random_sphere(6, 3, 6f64.sqrt(), &mut rng);
        let y = PointCloud::random_sphere(6, 3, 6f64.sqrt(), &mut rng);
        let zeros: Vec<LayerWeights> = arch
            .layers()
            .iter()
            .map(|l| LayerWeights::new(DMatrix::zeros(l.out_channels, l.fan_in()), l.init))
            .collect();
        assert_eq!(empirical_kernel(&arch, &zeros, &x, &y).unwrap(), 0.0);
        let net = Network::sample(&arch, &mut rng);
        let self_k = empirical_kernel(&arch, net.weights(), &x, &x).unwrap();
        assert!(self_k >= 0.0);
        assert!((self_k - net.feature_map(&x).unwrap().norm().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn empirical_kernel_tracks_analytic_at_width_512() {
        let setup = DeviationSetup {
            d: 64,
            n: 4,
            width: 2,
            stride: 1,
            depth: 2,
        };
        let devs = kernel_deviations(&setup, 512, 100, 36).unwrap();
        let close = devs.iter().filter(|&&e| e < 0.1).count();
        assert!(close >= 95, "{close} of 100 within 0.1");
    }

    #[test]
    fn deviation_experiment_contract() {
        let setup = DeviationSetup {
            d: 8,
            n: 3,
            width: 2,
            stride: 1,
            depth: 2,
        };
        assert!(kernel_deviation_experiment(&setup, &[16], 0, 1).is_err());
        let a = kernel_deviation_experiment(&setup, &[16, 64], 20, 1).unwrap();
        let b = kernel_deviation_experiment(&setup, &[16, 64], 20, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.p50 <= r.p95 && r.p95 <= r.max));
    }
}
