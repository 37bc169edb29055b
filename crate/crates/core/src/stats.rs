//! Small statistics toolbox: summary moments, Wilson intervals, bootstrap
//! confidence intervals, and least-squares line fits for decay rates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Sample mean and standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let idx = (p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx]
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    percentile(&v, 0.5)
}

/// Wilson 95% score interval for a binomial proportion.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WilsonInterval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub successes: u64,
    pub trials: u64,
}

pub fn wilson_95(successes: u64, trials: u64) -> WilsonInterval {
    let z = 1.959963984540054f64;
    if trials == 0 {
        return WilsonInterval { estimate: f64::NAN, lo: 0.0, hi: 1.0, successes, trials };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * ((p * (1.0 - p) + z2 / (4.0 * n)) / n).sqrt() / denom;
    WilsonInterval {
        estimate: p,
        lo: (center - half).max(0.0),
        hi: (center + half).min(1.0),
        successes,
        trials,
    }
}

/// Ordinary least squares `y ~ a + b x`; returns `(a, b)`.
pub fn ols_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}

/// Log-log slope of `err ~ C eps^p`, ignoring non-positive entries.
pub fn loglog_slope(eps: &[f64], err: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(err)
        .filter(|(e, r)| **e > 0.0 && **r > 0.0)
        .map(|(e, r)| (e.ln(), r.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    ols_line(&xs, &ys).1
}

/// Percentile bootstrap over per-sample rows: `statistic` maps a resampled
/// index set to a scalar. Returns (lo, hi) at 95%.
pub fn bootstrap_ci(
    n_samples: usize,
    replicates: usize,
    rng: &mut ChaCha8Rng,
    statistic: impl Fn(&[usize]) -> f64,
) -> (f64, f64) {
    assert!(n_samples > 0);
    let mut stats = Vec::with_capacity(replicates);
    let mut idx = vec![0usize; n_samples];
    for _ in 0..replicates {
        for i in idx.iter_mut() {
            *i = rng.gen_range(0..n_samples);
        }
        let s = statistic(&idx);
        if s.is_finite() {
            stats.push(s);
        }
    }
    if stats.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (percentile(&stats, 0.025), percentile(&stats, 0.975))
}
