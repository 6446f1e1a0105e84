//! One driver per experiment kind, each turning a config into a table of
//! rows plus named estimates, bounds and checks.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentKind, InputKind};
use super::output::{config_hash, Outcome, RunRecord, Summary, Table};
use crate::advsearch::{estimate_balance, theorem_trial, TheoremKind};
use crate::convnet::Network;
use crate::error::{Error, Result};
use crate::isolab::{self, IndicatorSet, TestFunction};
use crate::kernelcalc::{dual_activation, kernel_deviation_experiment, kernel_recursion, DeviationSetup};
use crate::rotgroup::{act, frobenius_distance, haar_sample, OrbitSampler, PointCloud};
use crate::row;
use crate::stats::{self, CompensatedSum};
use crate::stream::{child_seed, derive_stream};

const INPUT_TAG: u64 = 0x1_0000;
const BALANCE_TAG: u64 = 0x2_0000;
const VARIANCE_TAG: u64 = 0x3_0000;
const LIPSCHITZ_TAG: u64 = 0x4_0000;

/// The base point `x0` described by the config.
pub fn base_point(cfg: &ExperimentConfig) -> PointCloud {
    let (d, n) = (cfg.d, cfg.n);
    let radius = (d as f64).sqrt();
    match cfg.input {
        InputKind::Sphere => PointCloud::random_sphere(d, n, radius, &mut derive_stream(child_seed(cfg.seed, INPUT_TAG), 0)),
        InputKind::Axis => {
            let cols: Vec<DVector<f64>> = (0..n)
                .map(|t| {
                    let mut e = DVector::zeros(d);
                    e[t % d] = radius;
                    e
                })
                .collect();
            PointCloud::from_columns(&cols).expect("columns share a dimension")
        }
    }
}

/// Validates the config and runs it on a pool of `workers` threads.
pub fn run(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Precondition(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let start = Instant::now();
    let outcome = pool.install(|| dispatch(cfg))?;
    let runtime_seconds = start.elapsed().as_secs_f64();
    let csv = outcome.table.as_ref().map(Table::to_csv).transpose()?.unwrap_or_default();
    Ok(RunRecord {
        config: cfg.clone(),
        csv,
        summary: Summary {
            experiment: cfg.kind.to_string(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            d: cfg.d,
            n: cfg.n,
            estimates: outcome.estimates,
            bounds: outcome.bounds,
            checks: outcome.checks,
            runtime_seconds,
        },
    })
}

fn dispatch(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.kind {
        ExperimentKind::HaarTest => haar_test(cfg),
        ExperimentKind::KernelCheck => kernel_check(cfg),
        ExperimentKind::Balance => balance(cfg),
        ExperimentKind::AdvSearch => adversarial(cfg, &[cfg.tau]),
        ExperimentKind::TheoremTrial => adversarial(cfg, &cfg.tau_sweep()),
        ExperimentKind::Isoperimetry => isoperimetry(cfg),
        ExperimentKind::Concentration => concentration(cfg),
        ExperimentKind::Separate => separate(cfg),
        ExperimentKind::Sudakov => sudakov(cfg),
        ExperimentKind::SphereTail => sphere_tail(cfg),
    }
}

fn haar_test(cfg: &ExperimentConfig) -> Result<Outcome> {
    let d = cfg.d;
    let lip_seed = child_seed(cfg.seed, LIPSCHITZ_TAG);
    let rows = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let u = haar_sample(d, &mut derive_stream(cfg.seed, i as u64))?;
            let mut rng = derive_stream(lip_seed, i as u64);
            let v = haar_sample(d, &mut rng)?;
            let x = PointCloud::random_sphere(d, cfg.n, 1.0 + 9.0 * rand::Rng::random::<f64>(&mut rng), &mut rng);
            let lhs = act(&u, &x)?.distance(&act(&v, &x)?)?;
            let rhs = frobenius_distance(&u, &v)? * x.spectral_norm();
            Ok((u.matrix()[(0, 0)], u.orthogonality_residual(), (u.determinant() - 1.0).abs(), rhs - lhs))
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e: Error| e.in_trial(i)))
        .collect::<Result<Vec<(f64, f64, f64, f64)>>>()?;

    let mut table = Table::new(&["sample", "u11", "orthogonality_residual", "determinant_error", "lipschitz_slack"]);
    for (i, r) in rows.iter().enumerate() {
        table.push(row![i, r.0, r.1, r.2, r.3]);
    }
    let u11: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let max_res = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let max_det = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let violations = rows.iter().filter(|r| r.3 < -1e-9).count();
    let mean = stats::mean(&u11);
    let mut out = Outcome::default();
    out.estimate("mean_u11", mean);
    out.bound("mean_u11", 0.0);
    out.estimate("var_u11", stats::variance(&u11));
    out.bound("var_u11", 1.0 / d as f64);
    out.estimate("max_orthogonality_residual", max_res);
    out.estimate("max_determinant_error", max_det);
    out.estimate("lipschitz_violations", violations as f64);
    out.check("orthogonality", max_res <= 1e-10);
    out.check("determinant", max_det <= 1e-8);
    out.check("lipschitz_action", violations == 0);
    out.check("mean_u11", mean.abs() <= 4.0 * (1.0 / (d as f64 * cfg.samples as f64)).sqrt());
    out.table = Some(table);
    Ok(out)
}

fn kernel_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    out.check("dual_at_one", dual_activation(1.0)? == 1.0);
    out.check("dual_at_minus_one", dual_activation(-1.0)?.abs() <= 1e-12);
    out.check("dual_at_zero", (dual_activation(0.0)? - std::f64::consts::FRAC_1_PI).abs() <= 1e-12);
    let x0 = base_point(cfg);
    let arch = DeviationSetup {
        d: cfg.d,
        n: cfg.n,
        width: cfg.arch.width,
        stride: cfg.arch.stride,
        depth: cfg.arch.depth.max(2),
    };
    let diag = kernel_recursion(&arch.arch(cfg.arch.channels)?, &x0, &x0)?.value;
    out.estimate("diagonal", diag);
    out.bound("diagonal", 1.0);
    out.check("diagonal_is_one", diag == 1.0);

    let rows = kernel_deviation_experiment(&arch, &cfg.kernel_channels, cfg.trials, cfg.seed)?;
    let mut table = Table::new(&["channels", "trials", "mean", "p50", "p95", "max"]);
    for r in &rows {
        table.push(row![r.channels, r.trials, r.mean, r.p50, r.p95, r.max]);
        out.estimate(format!("p95@channels={}", r.channels), r.p95);
    }
    let mut by_channels = rows.clone();
    by_channels.sort_by_key(|r| r.channels);
    out.check("p95_nonincreasing", by_channels.windows(2).all(|w| w[1].p95 <= w[0].p95));
    if let Some(last) = by_channels.last() {
        out.bound(format!("p95@channels={}", last.channels), 0.1);
        out.check("p95_widest_below_0.1", last.p95 < 0.1);
    }
    out.table = Some(table);
    Ok(out)
}

fn balance(cfg: &ExperimentConfig) -> Result<Outcome> {
    let arch = cfg.network()?;
    let x0 = base_point(cfg);
    let balance_seed = child_seed(cfg.seed, BALANCE_TAG);
    let reports = (0..cfg.networks)
        .into_par_iter()
        .map(|i| {
            let net = Network::sample(&arch, &mut derive_stream(cfg.seed, i as u64));
            estimate_balance(&net, &x0, cfg.samples, &mut derive_stream(balance_seed, i as u64)).map_err(|e| e.in_trial(i))
        })
        .collect::<Result<Vec<_>>>()?;

    let target = 1.0 / (cfg.d as f64).ln();
    let mut table = Table::new(&["network", "p_plus", "p_minus", "halfwidth", "min_side"]);
    let mut gap = CompensatedSum::new();
    let mut balanced = 0usize;
    let mut symmetric = true;
    for (i, r) in reports.iter().enumerate() {
        table.push(row![i, r.p_plus, r.p_minus, r.confidence_halfwidth, r.min_side()]);
        gap.add((r.p_plus - r.p_minus).abs());
        symmetric &= (r.p_plus - r.p_minus).abs() <= 3.0 * r.confidence_halfwidth;
        balanced += (r.min_side() >= target - 3.0 * r.confidence_halfwidth) as usize;
    }
    let mut out = Outcome::default();
    let frac = balanced as f64 / cfg.networks as f64;
    out.estimate("mean_abs_gap", gap.value() / cfg.networks as f64);
    out.estimate("balanced_fraction", frac);
    out.estimate("mean_min_side", stats::mean(&reports.iter().map(|r| r.min_side()).collect::<Vec<_>>()));
    if arch.all_odd() && cfg.d.is_multiple_of(2) {
        out.check("odd_symmetry", symmetric);
    }
    if arch.is_relu_xavier() {
        out.bound("balanced_fraction", 0.9);
        out.check("relu_balanced_fraction", frac >= 0.9);
    }
    out.table = Some(table);
    Ok(out)
}

fn adversarial(cfg: &ExperimentConfig, taus: &[f64]) -> Result<Outcome> {
    let arch = cfg.network()?;
    let kind = cfg.theorem_kind()?;
    let x0 = base_point(cfg);
    let rec = theorem_trial(kind, &arch, &x0, taus, cfg.networks, &cfg.search, cfg.seed)?;

    let mut table = Table::new(&[
        "network",
        "tau",
        "epsilon",
        "base_sign",
        "found",
        "achieved_distance",
        "distance_ratio",
        "phase",
        "evaluations",
    ]);
    for r in &rec.rows {
        table.push(row![
            r.network,
            r.tau,
            r.epsilon,
            r.base_sign,
            r.found,
            r.achieved_distance,
            r.achieved_distance / r.epsilon,
            r.phase.to_string(),
            r.evaluations
        ]);
    }
    let mut out = Outcome::default();
    for s in &rec.summaries {
        let key = |name: &str| format!("{name}@tau={:?}", s.tau);
        out.estimate(key("success_rate"), s.success_rate);
        out.estimate(key("degenerate_rate"), s.degenerate_rate);
        out.estimate(key("mean_distance_ratio"), s.mean_distance_ratio);
        out.estimate(key("epsilon"), s.epsilon);
        if let Some(floor) = s.success_floor {
            out.bound(key("success_rate"), floor);
            out.bound(key("success_floor"), floor);
            let halfwidth = stats::binomial_halfwidth_99(floor.clamp(0.0, 1.0), s.networks);
            out.check(key("success_above_floor"), s.success_rate >= floor - 3.0 * halfwidth);
        }
    }
    out.check(
        "successes_within_budget",
        rec.rows.iter().filter(|r| r.found).all(|r| r.achieved_distance <= r.epsilon),
    );
    let rates: Vec<f64> = rec.summaries.iter().map(|s| s.success_rate).collect();
    if rates.len() > 1 {
        out.check("nondecreasing_in_tau", rates.windows(2).all(|w| w[0] <= w[1]));
    }
    if kind == TheoremKind::Relu {
        let last = rec.summaries.last().expect("at least one tau");
        out.bound(format!("success_rate@tau={:?}", last.tau), 0.8);
        out.check("relu_success_at_largest_tau", last.success_rate >= 0.8);
    }
    out.table = Some(table);
    Ok(out)
}

fn isoperimetry(cfg: &ExperimentConfig) -> Result<Outcome> {
    let set = IndicatorSet::from_label(&cfg.iso.set)?;
    let x0 = base_point(cfg);
    let sp = x0.spectral_norm();
    let eps: Vec<f64> = cfg.iso.scales.iter().map(|s| s * sp).collect();
    let res = isolab::blowup_experiment(&set, &x0, &eps, cfg.iso.measure_samples, cfg.samples, &cfg.probe_config(), cfg.seed)?;

    let mut table = Table::new(&[
        "epsilon",
        "measure",
        "blowup",
        "exact_blowup",
        "agreement",
        "bound",
        "sigma",
        "samples",
    ]);
    let mut out = Outcome::default();
    for (r, certs) in res.records.iter().zip(&res.certificates) {
        table.push(row![
            r.epsilon,
            r.measure,
            r.blowup,
            r.exact_blowup.unwrap_or(f64::NAN),
            r.agreement.unwrap_or(f64::NAN),
            r.bound,
            r.sigma,
            r.blowup_samples
        ]);
        let key = |name: &str| format!("{name}@eps={:?}", r.epsilon);
        out.estimate(key("blowup"), r.blowup);
        out.bound(key("blowup"), r.bound);
        out.check(key("blowup_meets_bound"), r.blowup >= r.bound - 3.0 * r.sigma);
        if let (Some(exact), Some(agree)) = (r.exact_blowup, r.agreement) {
            out.estimate(key("exact_blowup"), exact);
            out.estimate(key("agreement"), agree);
            out.check(key("agreement_99"), agree >= 0.99);
        }
        let sound = certs
            .iter()
            .all(|c| set.contains(&c.witness) && c.witness.distance(&c.point).is_ok_and(|dist| dist <= r.epsilon + 1e-9));
        out.check(key("certificates_sound"), sound);
    }
    if let Some(first) = res.records.first() {
        out.estimate("measure", first.measure);
    }
    out.table = Some(table);
    Ok(out)
}

fn concentration(cfg: &ExperimentConfig) -> Result<Outcome> {
    let g = TestFunction::from_label(&cfg.conc.function)?;
    let dims = if cfg.conc.dims.is_empty() { vec![cfg.d] } else { cfg.conc.dims.clone() };
    let mut table = Table::new(&["d", "epsilon", "lipschitz", "empirical_tail", "bound", "halfwidth", "samples"]);
    let mut out = Outcome::default();
    for &d in &dims {
        let recs = isolab::concentration_experiment(&g, d, &cfg.conc.epsilons, cfg.samples, child_seed(cfg.seed, d as u64))?;
        for r in recs {
            table.push(row![r.d, r.epsilon, r.lipschitz, r.empirical_tail, r.theoretical_bound, r.halfwidth, r.samples]);
            let key = format!("tail@d={},eps={:?}", r.d, r.epsilon);
            out.estimate(key.clone(), r.empirical_tail);
            out.bound(key.clone(), r.theoretical_bound);
            out.check(key, r.empirical_tail <= r.theoretical_bound + 3.0 * r.halfwidth);
        }
    }
    out.table = Some(table);
    Ok(out)
}

fn separate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let arch = cfg.network()?;
    let x0 = base_point(cfg);
    let rec = crate::advsearch::separation_experiment(&arch, &x0, cfg.trials, cfg.seed)?;
    let mut table = Table::new(&["trial", "separated", "core1", "min_feature_gap", "max_feature_norm"]);
    for r in &rec.rows {
        table.push(row![r.trial, r.separated, r.core1, r.min_feature_gap, r.max_feature_norm]);
    }
    let mut out = Outcome::default();
    out.estimate("m", rec.m as f64);
    out.estimate("separation_rate", rec.separation_rate);
    out.estimate("core1_rate", rec.core1_rate);
    out.bound("core1_rate", rec.core1_bound);
    out.estimate("mean_min_feature_gap", rec.mean_min_feature_gap);
    out.estimate("max_feature_norm", rec.max_feature_norm);
    let sigma = stats::binomial_std_error(rec.core1_bound.clamp(0.0, 1.0), cfg.trials);
    out.check("core1_meets_bound", rec.core1_rate >= rec.core1_bound - 3.0 * sigma);

    let var_seed = child_seed(cfg.seed, VARIANCE_TAG);
    let net = Network::sample(&arch, &mut derive_stream(var_seed, 0));
    let sampler = OrbitSampler::new(&x0);
    let mut rng = derive_stream(var_seed, 1);
    let points = (0..cfg.variance_points)
        .map(|_| sampler.sample(&mut rng))
        .collect::<Result<Vec<_>>>()?;
    let var = isolab::variance_check_last_layer(&net, &points, cfg.samples, child_seed(var_seed, 2))?;
    out.estimate("variance_z", var.variance);
    out.bound("variance_z", var.bound);
    out.check("variance_z_at_most_4", var.variance <= var.bound + 3.0 * var.std_error);
    out.table = Some(table);
    Ok(out)
}

fn sudakov(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut ms = cfg.sudakov_m.clone();
    ms.sort_unstable();
    let mut table = Table::new(&["m", "alpha", "estimate", "std_error", "ratio"]);
    let mut out = Outcome::default();
    let mut estimates = Vec::new();
    for &m in &ms {
        let r = isolab::sudakov_check(&isolab::basis_points(m), 2f64.sqrt(), cfg.samples, child_seed(cfg.seed, m as u64))?;
        table.push(row![r.m, r.alpha, r.estimate, r.std_error, r.ratio.unwrap_or(f64::NAN)]);
        out.estimate(format!("expected_max@m={m}"), r.estimate);
        if let Some(ratio) = r.ratio {
            out.estimate(format!("ratio@m={m}"), ratio);
        }
        estimates.push(r.estimate);
    }
    out.check("increasing_in_m", estimates.windows(2).all(|w| w[0] < w[1]));
    out.table = Some(table);
    Ok(out)
}

fn sphere_tail(cfg: &ExperimentConfig) -> Result<Outcome> {
    let ts: Vec<f64> = cfg.tail_fractions.iter().map(|f| f * cfg.d as f64).collect();
    let recs = isolab::sphere_tail_check(cfg.d, &ts, cfg.samples, cfg.seed)?;
    let mut table = Table::new(&["d", "t", "empirical", "bound", "sigma", "samples"]);
    let mut out = Outcome::default();
    for r in &recs {
        table.push(row![r.d, r.t, r.empirical, r.bound, r.sigma, r.samples]);
        let key = format!("tail@t={:?}", r.t);
        out.estimate(key.clone(), r.empirical);
        out.bound(key.clone(), r.bound);
        out.check(key, r.empirical <= r.bound + 3.0 * r.sigma);
    }
    let mut sorted = recs.clone();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    out.check("nonincreasing_in_t", sorted.windows(2).all(|w| w[1].empirical <= w[0].empirical));
    out.table = Some(table);
    Ok(out)
}
