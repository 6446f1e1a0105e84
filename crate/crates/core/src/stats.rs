//! Small statistics toolkit shared by the experiments.
//!
//! Every reduction goes through [`CompensatedSum`] in a fixed order so that
//! results are bit-identical across worker counts.

/// Two-sided 99% standard normal quantile.
pub const Z99: f64 = 2.575_829_303_548_900_4;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn sum(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<CompensatedSum>().value()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: CompensatedSum = xs.iter().map(|x| (x - m) * (x - m)).collect();
    ss.value() / (xs.len() - 1) as f64
}

/// Standard error of the unbiased variance estimate, from the fourth central
/// moment: `sqrt((m4 - s^4 (n-3)/(n-1)) / n)`.
pub fn variance_std_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return f64::INFINITY;
    }
    let m = mean(xs);
    let m4: CompensatedSum = xs.iter().map(|x| (x - m).powi(4)).collect();
    let m4 = m4.value() / n as f64;
    let s2 = variance(xs);
    let nf = n as f64;
    ((m4 - s2 * s2 * (nf - 3.0) / (nf - 1.0)).max(0.0) / nf).sqrt()
}

/// One binomial standard error `sqrt(p(1-p)/n)`.
pub fn binomial_std_error(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    (p.clamp(0.0, 1.0) * (1.0 - p.clamp(0.0, 1.0)) / n as f64).sqrt()
}

/// Two-sided 99% normal-approximation halfwidth for a binomial proportion.
pub fn binomial_halfwidth_99(p: f64, n: usize) -> f64 {
    Z99 * binomial_std_error(p, n)
}

/// Fraction of `flags` that are true.
pub fn frequency(flags: impl IntoIterator<Item = bool>) -> (f64, usize) {
    let mut hits = 0usize;
    let mut total = 0usize;
    for f in flags {
        total += 1;
        hits += usize::from(f);
    }
    if total == 0 {
        (f64::NAN, 0)
    } else {
        (hits as f64 / total as f64, total)
    }
}

/// Linear-interpolation quantile of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let q = q.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted(a);
    let b = sorted(b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic critical value of the two-sample KS statistic at level `alpha`.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// True when the two samples are consistent with one distribution at `alpha`.
pub fn ks_same_distribution(a: &[f64], b: &[f64], alpha: f64) -> bool {
    ks_statistic(a, b) <= ks_critical(a.len(), b.len(), alpha)
}
