//! End-to-end acceptance checks at the stated tolerances. Each test prints one
//! `PASS`/`FAIL` line before asserting.

use nalgebra::DVector;
use rand::Rng;

use orbitadv::advsearch::{estimate_balance, theorem_trial, SearchConfig, TheoremKind};
use orbitadv::convnet::{Activation, InitKind, Network, NetworkSpec};
use orbitadv::harness::{self, parse_config};
use orbitadv::isolab::{self, IndicatorSet, ProbeConfig, TestFunction};
use orbitadv::kernelcalc::{dual_activation, kernel_deviation_experiment, kernel_recursion, DeviationSetup};
use orbitadv::rotgroup::{act, frobenius_distance, haar_sample, OrbitSampler, PointCloud};
use orbitadv::stats;
use orbitadv::stream::derive_stream;

fn report(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn sqrt_d_cloud(d: usize, n: usize, seed: u64) -> PointCloud {
    PointCloud::random_sphere(d, n, (d as f64).sqrt(), &mut derive_stream(seed, 0))
}

#[test]
fn exact_identities() {
    let one = dual_activation(1.0).unwrap();
    let minus_one = dual_activation(-1.0).unwrap();
    let zero = dual_activation(0.0).unwrap();
    let mut pass = one == 1.0 && minus_one.abs() <= 1e-12 && (zero - std::f64::consts::FRAC_1_PI).abs() <= 1e-12;
    let mut diagonals = Vec::new();
    for (d, n, w, depth) in [(16, 4, 2, 2), (64, 4, 2, 3), (33, 6, 3, 4), (8, 1, 1, 2)] {
        let arch = NetworkSpec::standard(d, n, w, 1, 16, depth, Activation::Relu, InitKind::XavierGaussian).unwrap();
        for seed in 0..5 {
            let x = sqrt_d_cloud(d, n, 100 + seed);
            let k = kernel_recursion(&arch, &x, &x).unwrap().value;
            pass &= k == 1.0;
            diagonals.push(k);
        }
    }
    report(
        "exact identities",
        pass,
        format!(
            "dual(1) = {one:?}, dual(-1) = {minus_one:e}, dual(0) - 1/pi = {:e}; diagonal values all 1: {}",
            zero - std::f64::consts::FRAC_1_PI,
            diagonals.iter().all(|&k| k == 1.0)
        ),
    );
}

#[test]
fn lipschitz_action_of_rotations() {
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut triples = 0;
    for d in [2, 8, 32] {
        for n in [1, 4, 16] {
            for i in 0..1000u64 {
                let mut rng = derive_stream(((d * 100 + n) as u64) << 20, i);
                let u = haar_sample(d, &mut rng).unwrap();
                let v = haar_sample(d, &mut rng).unwrap();
                let cols: Vec<DVector<f64>> = (0..n)
                    .map(|_| {
                        let r = 10f64.powf(rng.random_range(-2.0..2.0));
                        PointCloud::random_sphere(d, 1, r, &mut rng).column(0)
                    })
                    .collect();
                let x = PointCloud::from_columns(&cols).unwrap();
                let lhs = act(&u, &x).unwrap().distance(&act(&v, &x).unwrap()).unwrap();
                let rhs = frobenius_distance(&u, &v).unwrap() * x.spectral_norm();
                worst = worst.max(lhs - rhs);
                violations += (lhs > rhs + 1e-9) as usize;
                triples += 1;
            }
        }
    }
    report(
        "lipschitz action of rotations",
        violations == 0,
        format!("{violations} violations in {triples} triples; largest lhs - rhs {worst:e}"),
    );
}

#[test]
fn concentration_on_rotation_group() {
    let g = TestFunction::entry11();
    let mut pass = true;
    let mut lines = Vec::new();
    for d in [16, 34, 64] {
        for r in isolab::concentration_experiment(&g, d, &[0.25, 0.5, 1.0], 100_000, 3000 + d as u64).unwrap() {
            let ok = r.empirical_tail <= r.theoretical_bound + 3.0 * r.halfwidth;
            pass &= ok;
            lines.push(format!("d={} eps={}: {:.5} <= {:.5}", r.d, r.epsilon, r.empirical_tail, r.theoretical_bound));
        }
    }
    report("concentration on rotation group", pass, lines.join("; "));
}

#[test]
fn hemisphere_blowup() {
    let d = 34;
    let mut e1 = DVector::zeros(d);
    e1[0] = (d as f64).sqrt();
    let x0 = PointCloud::from_columns(&[e1]).unwrap();
    let radius = x0.spectral_norm();
    let eps: Vec<f64> = [0.75, 1.0, 1.5].iter().map(|s| s * radius).collect();
    let set = IndicatorSet::hemisphere();
    let out = isolab::blowup_experiment(&set, &x0, &eps, 10_000, 10_000, &ProbeConfig::default(), 4001).unwrap();
    let mut pass = true;
    let mut lines = Vec::new();
    for r in &out.records {
        let bound = isolab::isoperimetric_bound(d, r.epsilon, 0.5, radius);
        let agree = r.agreement.unwrap_or(0.0);
        pass &= r.blowup >= bound - 3.0 * r.sigma && agree >= 0.99;
        lines.push(format!(
            "eps={:.3}: certified {:.4} vs bound {bound:.4}, closed form {:.4}, agreement {agree:.4}",
            r.epsilon,
            r.blowup,
            r.exact_blowup.unwrap_or(f64::NAN)
        ));
    }
    report("hemisphere blowup", pass, lines.join("; "));
}

#[test]
fn kernel_concentration_in_width() {
    let setup = DeviationSetup {
        d: 64,
        n: 4,
        width: 2,
        stride: 1,
        depth: 2,
    };
    let rows = kernel_deviation_experiment(&setup, &[64, 128, 256, 512], 100, 5001).unwrap();
    let p95: Vec<f64> = rows.iter().map(|r| r.p95).collect();
    let nonincreasing = p95.windows(2).all(|w| w[1] <= w[0]);
    let last = *p95.last().unwrap();
    report(
        "kernel concentration in width",
        nonincreasing && last < 0.1,
        format!("p95 at 64, 128, 256, 512 channels: {p95:.4?}; nonincreasing: {nonincreasing}"),
    );
}

#[test]
fn odd_network_balance() {
    let (d, n, networks, samples) = (64, 4, 20, 10_000);
    let arch = NetworkSpec::standard(d, n, 2, 1, 64, 2, Activation::Tanh, InitKind::XavierGaussian).unwrap();
    let x0 = sqrt_d_cloud(d, n, 6001);
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for i in 0..networks {
        let mut rng = derive_stream(6002, i);
        let net = Network::sample(&arch, &mut rng);
        let r = estimate_balance(&net, &x0, samples, &mut rng).unwrap();
        let gap = (r.p_plus - r.p_minus).abs();
        pass &= gap <= 3.0 * r.confidence_halfwidth;
        worst = worst.max(gap / (3.0 * r.confidence_halfwidth));
    }
    report(
        "odd network balance",
        pass,
        format!("{networks} networks; largest |p+ - p-| / (3 x halfwidth) = {worst:.3}"),
    );
}

#[test]
fn odd_network_adversarial_success() {
    let (d, n, tau, networks) = (100, 4, 8.0, 200);
    let arch = NetworkSpec::standard(d, n, 2, 1, 32, 2, Activation::Tanh, InitKind::XavierGaussian).unwrap();
    let x0 = sqrt_d_cloud(d, n, 7001);
    let rec = theorem_trial(TheoremKind::Odd, &arch, &x0, &[tau], networks, &SearchConfig::default(), 7002).unwrap();
    let s = &rec.summaries[0];
    let floor = s.success_floor.unwrap();
    let halfwidth = stats::binomial_halfwidth_99(floor, networks);
    let eps = tau * x0.spectral_norm() / 98f64.sqrt();
    let within = rec.rows.iter().filter(|r| r.found).all(|r| r.achieved_distance <= eps);
    let pass = s.success_rate >= floor - 3.0 * halfwidth && within;
    report(
        "odd network adversarial success",
        pass,
        format!(
            "rate {:.4} vs floor {floor:.4} - 3 x {halfwidth:.4}; degenerate {:.4}; mean distance/eps {:.4}; all successes within eps: {within}",
            s.success_rate, s.degenerate_rate, s.mean_distance_ratio
        ),
    );
}

#[test]
fn relu_network_adversarial_success() {
    let (d, n, networks) = (128, 4, 100);
    let arch = NetworkSpec::standard(d, n, 2, 1, 256, 2, Activation::Relu, InitKind::XavierGaussian).unwrap();
    let x0 = sqrt_d_cloud(d, n, 8001);
    let search = SearchConfig {
        planes: 1024,
        ..SearchConfig::default()
    };
    let rec = theorem_trial(TheoremKind::Relu, &arch, &x0, &[6.0, 8.0, 10.0], networks, &search, 8002).unwrap();
    let rates: Vec<f64> = rec.summaries.iter().map(|s| s.success_rate).collect();
    let monotone = rates.windows(2).all(|w| w[0] <= w[1]);
    let pass = rates[2] >= 0.8 && monotone;
    report(
        "relu network adversarial success",
        pass,
        format!("rates at tau 6, 8, 10: {rates:?}; nondecreasing: {monotone}"),
    );
}

#[test]
fn relu_network_balance() {
    let (d, n, channels, networks, samples) = (128, 4, 256, 200, 10_000);
    let arch = NetworkSpec::standard(d, n, 2, 1, channels, 2, Activation::Relu, InitKind::XavierGaussian).unwrap();
    let x0 = sqrt_d_cloud(d, n, 9001);
    let target = 1.0 / (d as f64).ln();
    let mins: Vec<(f64, f64)> = (0..networks)
        .map(|i| {
            let mut rng = derive_stream(9002, i as u64);
            let net = Network::sample(&arch, &mut rng);
            let r = estimate_balance(&net, &x0, samples, &mut rng).unwrap();
            (r.min_side(), r.confidence_halfwidth)
        })
        .collect();
    let balanced = mins.iter().filter(|(m, h)| *m >= target - 3.0 * h).count();
    let frac = balanced as f64 / networks as f64;
    report(
        "relu network balance",
        frac >= 0.9,
        format!("{balanced}/{networks} networks with min side >= {target:.4} - 3 x halfwidth ({frac:.3})"),
    );
}

/// `E max` of `m` independent standard normals by quadrature.
fn expected_gaussian_max(m: usize) -> f64 {
    let (lo, hi, steps) = (-12.0, 12.0, 240_000);
    let h = (hi - lo) / steps as f64;
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let (mut cdf, mut total) = (0.0, 0.0);
    let mut prev = phi(lo);
    for k in 1..=steps {
        let x = lo + k as f64 * h;
        let cur = phi(x);
        cdf += 0.5 * h * (prev + cur);
        total += h * x * m as f64 * cur * cdf.min(1.0).powi(m as i32 - 1);
        prev = cur;
    }
    total
}

#[test]
fn auxiliary_tails() {
    let d = 64;
    let ts: Vec<f64> = [0.0, 0.125, 0.25, 0.375, 0.5].iter().map(|f| f * d as f64).collect();
    let tails = isolab::sphere_tail_check(d, &ts, 100_000, 10_001).unwrap();
    let tail_ok = tails.iter().all(|r| r.empirical <= r.bound + 3.0 * r.sigma);

    let arch = NetworkSpec::standard(d, 4, 2, 1, 64, 2, Activation::Relu, InitKind::XavierGaussian).unwrap();
    let x0 = sqrt_d_cloud(d, 4, 10_002);
    let mut rng = derive_stream(10_003, 0);
    let net = Network::sample(&arch, &mut rng);
    let sampler = OrbitSampler::new(&x0);
    let points: Vec<PointCloud> = (0..4).map(|_| sampler.sample(&mut rng).unwrap()).collect();
    let var = isolab::variance_check_last_layer(&net, &points, 10_000, 10_004).unwrap();
    let var_ok = var.variance <= 4.0 + 3.0 * var.std_error;

    let small = isolab::sudakov_check(&isolab::basis_points(16), 2f64.sqrt(), 20_000, 10_005).unwrap();
    let large = isolab::sudakov_check(&isolab::basis_points(64), 2f64.sqrt(), 20_000, 10_006).unwrap();
    let trend = large.estimate > small.estimate;
    let calibrated = [(&small, 16), (&large, 64)]
        .iter()
        .all(|(r, m)| (r.estimate - expected_gaussian_max(*m)).abs() <= 4.0 * r.std_error);

    report(
        "auxiliary tails",
        tail_ok && var_ok && trend && calibrated,
        format!(
            "sphere tails {:?} vs bounds {:?}; Var(Z) {:.4} (se {:.4}); expected max {:.4} then {:.4} (exact {:.4}, {:.4})",
            tails.iter().map(|r| r.empirical).collect::<Vec<_>>(),
            tails.iter().map(|r| (r.bound * 1e4).round() / 1e4).collect::<Vec<_>>(),
            var.variance,
            var.std_error,
            small.estimate,
            large.estimate,
            expected_gaussian_max(16),
            expected_gaussian_max(64)
        ),
    );
}

#[test]
fn byte_identical_reruns() {
    let configs = [
        "kind = \"balance\"\nd = 16\nnetworks = 6\nsamples = 500\narch.channels = 16\narch.activation = \"tanh\"\nseed = 11",
        "kind = \"theorem-trial\"\nd = 16\nnetworks = 6\narch.channels = 16\ntaus = [4, 8]\nsearch.planes = 16\nseed = 12",
        "kind = \"kernel-check\"\nd = 16\ntrials = 20\nkernel.channels = [16, 32]\nseed = 13",
        "kind = \"isoperimetry\"\nd = 10\nn = 1\ninput.kind = \"axis\"\nsamples = 300\niso.measure_samples = 300\nseed = 14",
        "kind = \"haar-test\"\nd = 12\nsamples = 300\nseed = 15",
    ];
    let mut pass = true;
    let mut lines = Vec::new();
    for text in configs {
        let mut cfg = parse_config(text).unwrap();
        let first = harness::run(&cfg).unwrap();
        cfg.workers = 4;
        let second = harness::run(&cfg).unwrap();
        let same = first.csv == second.csv && first.summary.estimates == second.summary.estimates;
        pass &= same;
        lines.push(format!("{}: {} bytes, identical {same}", cfg.kind, first.csv.len()));
    }
    report("byte identical reruns", pass, lines.join("; "));
}
