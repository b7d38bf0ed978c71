//! Sample statistics and convergence diagnostics for Monte Carlo output.

use serde::{Deserialize, Serialize};

/// Welford streaming moments.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunningMoments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean assuming independent samples.
    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Mean and naive (independence-assuming) standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let mut m = RunningMoments::new();
    for &x in xs {
        m.push(x);
    }
    (m.mean(), m.stderr())
}

fn autocovariance(xs: &[f64], mean: f64, lag: usize) -> f64 {
    let n = xs.len();
    let mut s = 0.0;
    for t in 0..n - lag {
        s += (xs[t] - mean) * (xs[t + lag] - mean);
    }
    s / n as f64
}

/// Integrated autocorrelation time with a self-consistent window: the sum
/// `1/2 + sum_{t=1..W} rho_t` is truncated at the smallest `W >= 5 * tau(W)`.
///
/// Returns a value in sweeps-between-samples units, clamped below at `0.5`
/// (an i.i.d. series has `tau = 0.5` under this normalization convention
/// where the effective sample size is `n / (2 tau)`).
pub fn integrated_autocorr_time(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 8 {
        return 0.5;
    }
    let (mean, _) = mean_stderr(xs);
    let c0 = autocovariance(xs, mean, 0);
    if c0 <= 0.0 {
        return 0.5;
    }
    let mut tau = 0.5;
    let max_lag = n / 4;
    for w in 1..=max_lag {
        let rho = autocovariance(xs, mean, w) / c0;
        tau += rho;
        if (w as f64) >= 5.0 * tau.max(0.5) {
            break;
        }
    }
    tau.max(0.5)
}

/// Effective sample size `n / (2 tau)` for a single series.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let tau = integrated_autocorr_time(xs);
    xs.len() as f64 / (2.0 * tau)
}

/// Split-chain potential scale reduction factor.
///
/// Each chain is halved, and the classic between/within variance ratio is
/// computed over the resulting `2C` sequences. A value near 1 indicates the
/// chains sample the same distribution; the usual acceptance gate is
/// `r_hat < 1.1`. Chains that are all identical and constant return exactly 1.
pub fn split_r_hat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    let min_len = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    let half = min_len / 2;
    if half < 2 {
        return f64::INFINITY;
    }
    for c in chains {
        halves.push(&c[..half]);
        halves.push(&c[min_len - half..min_len]);
    }
    let m = halves.len() as f64;
    let n = half as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean_stderr(h).0).collect();
    let vars: Vec<f64> = halves
        .iter()
        .map(|h| {
            let mut rm = RunningMoments::new();
            for &x in h.iter() {
                rm.push(x);
            }
            rm.variance()
        })
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = vars.iter().sum::<f64>() / m;
    if w == 0.0 {
        // Constant chains: identical means converge trivially, distinct means
        // never mix.
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Wilson score interval for a binomial proportion at normal quantile `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Hoeffding confidence half-width for the mean of `n` independent samples
/// supported on an interval of width `range`, at confidence `1 - alpha`.
pub fn hoeffding_half_width(n: u64, range: f64, alpha: f64) -> f64 {
    assert!(n > 0 && range >= 0.0 && alpha > 0.0 && alpha < 1.0);
    range * ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// Quantile of a sorted slice by linear interpolation (type-7).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0);
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Median and interquartile range `(median, q1, q3)`.
pub fn median_iqr(xs: &[f64]) -> (f64, f64, f64) {
    assert!(!xs.is_empty());
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        quantile_sorted(&sorted, 0.5),
        quantile_sorted(&sorted, 0.25),
        quantile_sorted(&sorted, 0.75),
    )
}

/// Least-squares line fit returning `(slope, intercept)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// A Monte Carlo estimate with convergence diagnostics attached.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Estimate {
    /// Posterior-mean style point estimate, one entry per component.
    pub mean: Vec<f64>,
    /// Autocorrelation-adjusted standard error per component.
    pub stderr: Vec<f64>,
    /// Total retained samples across chains.
    pub n_samples: usize,
    /// Largest integrated autocorrelation time across components and chains.
    pub tau_int: f64,
    /// Largest split-chain scale reduction factor across components.
    pub r_hat: f64,
}

impl Estimate {
    /// Point estimate for single-component observables.
    pub fn scalar(&self) -> f64 {
        self.mean[0]
    }

    pub fn scalar_stderr(&self) -> f64 {
        self.stderr[0]
    }

    /// Euclidean norm of the mean vector.
    pub fn norm(&self) -> f64 {
        self.mean.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Conservative norm of the stderr vector.
    pub fn stderr_norm(&self) -> f64 {
        self.stderr.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn running_moments_match_direct() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.5];
        let mut rm = RunningMoments::new();
        for &x in &xs {
            rm.push(x);
        }
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((rm.mean() - mean).abs() < 1e-14);
        assert!((rm.variance() - var).abs() < 1e-13);
    }

    #[test]
    fn iid_series_has_small_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..4000).map(|_| rng.gen::<f64>() - 0.5).collect();
        let tau = integrated_autocorr_time(&xs);
        assert!(tau < 1.0, "tau = {tau}");
    }

    #[test]
    fn ar1_series_has_expected_tau() {
        // AR(1) with coefficient a has tau_int = 1/2 * (1+a)/(1-a).
        let a: f64 = 0.8;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x = 0.0;
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                x = a * x + rng.gen::<f64>() - 0.5;
                x
            })
            .collect();
        let tau = integrated_autocorr_time(&xs);
        let want = 0.5 * (1.0 + a) / (1.0 - a);
        assert!((tau - want).abs() < 0.2 * want, "tau = {tau}, want ~{want}");
    }

    #[test]
    fn r_hat_detects_disagreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c1: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>()).collect();
        let c2: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>()).collect();
        let close = split_r_hat(&[c1.clone(), c2]);
        assert!(close < 1.05, "r_hat = {close}");
        let shifted: Vec<f64> = c1.iter().map(|x| x + 5.0).collect();
        let far = split_r_hat(&[c1, shifted]);
        assert!(far > 1.5, "r_hat = {far}");
    }

    #[test]
    fn constant_identical_chains_converge() {
        let r = split_r_hat(&[vec![2.0; 100], vec![2.0; 100]]);
        assert_eq!(r, 1.0);
        let r2 = split_r_hat(&[vec![2.0; 100], vec![3.0; 100]]);
        assert!(r2.is_infinite());
    }

    #[test]
    fn wilson_interval_contains_mle() {
        let (lo, hi) = wilson_interval(7, 50, 1.96);
        let p = 7.0 / 50.0;
        assert!(lo < p && p < hi);
        assert!(lo >= 0.0 && hi <= 1.0);
        let (lo0, hi0) = wilson_interval(0, 50, 1.96);
        assert_eq!(lo0, 0.0);
        assert!(hi0 > 0.0 && hi0 < 0.2);
    }

    #[test]
    fn hoeffding_coverage_on_synthetic_data() {
        // Bounded i.i.d. samples: the 95% Hoeffding interval must cover the
        // true mean in (well over) 95% of repetitions.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut covered = 0;
        let reps = 400;
        for _ in 0..reps {
            let xs: Vec<f64> = (0..60).map(|_| rng.gen::<f64>()).collect();
            let (m, _) = mean_stderr(&xs);
            let hw = hoeffding_half_width(60, 1.0, 0.05);
            if (m - 0.5).abs() <= hw {
                covered += 1;
            }
        }
        assert!(covered as f64 >= 0.95 * reps as f64, "covered {covered}/{reps}");
    }

    #[test]
    fn median_iqr_on_known_data() {
        let xs = [5.0, 1.0, 3.0, 2.0, 4.0];
        let (med, q1, q3) = median_iqr(&xs);
        assert_eq!(med, 3.0);
        assert_eq!(q1, 2.0);
        assert_eq!(q3, 4.0);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [3.1, 5.1, 7.1, 9.1];
        let (slope, intercept) = linear_fit(&xs, &ys);
        assert!((slope - 2.0).abs() < 1e-12);
        assert!((intercept - 1.1).abs() < 1e-12);
    }
}
