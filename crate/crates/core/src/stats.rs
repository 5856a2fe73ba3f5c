//! Running mean/variance and confidence intervals.

/// Welford accumulator that also merges batches (Chan et al.).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / total as f64;
        self.m2 += other.m2 + delta * delta * (self.count as f64 * other.count as f64) / total as f64;
        self.count = total;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    /// Half-width of the normal-approximation 95% interval.
    pub fn ci95(&self) -> f64 {
        1.96 * self.std_error()
    }

    /// Half-width of the Student-t 95% interval, for few samples (seeds).
    pub fn t_ci95(&self) -> f64 {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        if self.count < 2 {
            return 0.0;
        }
        let t = StudentsT::new(0.0, 1.0, (self.count - 1) as f64)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(1.96);
        t * self.std_error()
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: u64,
}

impl Estimate {
    pub fn from_stats(stats: &RunningStats) -> Self {
        Estimate { mean: stats.mean(), std_error: stats.std_error(), samples: stats.count() }
    }

    pub fn ci95(&self) -> f64 {
        1.96 * self.std_error
    }

    /// True if `value` lies within `sigmas` standard errors of the mean.
    /// A zero-variance estimate only accepts values equal to the mean up to
    /// `1e-12`.
    pub fn brackets(&self, value: f64, sigmas: f64) -> bool {
        (self.mean - value).abs() <= sigmas * self.std_error + 1e-12
    }
}

/// Two-sided tail probability of a standard normal beyond `sigmas`.
pub fn normal_two_sided_tail(sigmas: f64) -> f64 {
    statrs::function::erf::erfc(sigmas / std::f64::consts::SQRT_2)
}

/// Whether `k` failures in `n` Bernoulli(`p`) trials is consistent with `p`
/// at the confidence of a `sigmas` normal deviation: an exact two-sided
/// binomial test whose rejection level is the normal tail beyond `sigmas`.
/// Unlike a plain z-score this stays valid when `n p` is small.
pub fn binomial_consistent(k: u64, n: u64, p: f64, sigmas: f64) -> bool {
    use statrs::distribution::{Binomial, DiscreteCDF};
    if n == 0 || k > n {
        return k == 0;
    }
    if p <= 0.0 {
        return k == 0;
    }
    if p >= 1.0 {
        return k == n;
    }
    let Ok(dist) = Binomial::new(p, n) else { return false };
    let lower = dist.cdf(k);
    let upper = if k == 0 { 1.0 } else { dist.sf(k - 1) };
    2.0 * lower.min(upper) >= normal_two_sided_tail(sigmas)
}

/// Signed deviation of `k` successes from `n p` in binomial standard errors.
pub fn binomial_z(k: u64, n: u64, p: f64) -> f64 {
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    let d = k as f64 - mean;
    if sd > 0.0 {
        d / sd
    } else if d.abs() < 1e-9 {
        0.0
    } else {
        d.signum() * f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_interval_widens_for_few_samples() {
        let s: RunningStats = [1.0, 2.0, 3.0, 4.0].into_iter().collect();
        // t(3, 0.975) = 3.182446...
        assert!((s.t_ci95() / s.std_error() - 3.182446305).abs() < 1e-6);
        assert_eq!(RunningStats::new().t_ci95(), 0.0);
    }

    #[test]
    fn binomial_test_matches_normal_in_bulk() {
        assert!((normal_two_sided_tail(4.0) - 6.334e-5).abs() < 1e-7);
        let n = 1_000_000;
        let p = 0.3;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        let mean = n as f64 * p;
        assert!(binomial_consistent((mean + 3.9 * sd) as u64, n, p, 4.0));
        assert!(!binomial_consistent((mean + 4.1 * sd) as u64, n, p, 4.0));
        assert!(!binomial_consistent((mean - 4.1 * sd) as u64, n, p, 4.0));
    }

    #[test]
    fn binomial_test_small_means() {
        // mean 0.1: two events is plausible, a z-score would say 6 sigma
        assert!(binomial_consistent(2, 100_000, 1e-6, 4.0));
        assert!(binomial_z(2, 100_000, 1e-6) > 4.0);
        assert!(!binomial_consistent(8, 100_000, 1e-6, 4.0));
        assert!(binomial_consistent(0, 1_000, 1e-3, 4.0));
        assert!(!binomial_consistent(0, 100_000, 1e-3, 4.0));
        assert!(!binomial_consistent(1, 10, 0.0, 4.0));
        assert!(binomial_consistent(10, 10, 1.0, 4.0));
    }

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let whole: RunningStats = xs.iter().copied().collect();
        let mut a: RunningStats = xs[..333].iter().copied().collect();
        let b: RunningStats = xs[333..].iter().copied().collect();
        a.merge(&b);
        assert_eq!(a.count(), whole.count());
        assert!((a.mean() - whole.mean()).abs() < 1e-12);
        assert!((a.variance() - whole.variance()).abs() < 1e-9);
    }

    #[test]
    fn constant_samples_have_zero_error() {
        let s: RunningStats = std::iter::repeat(0.25).take(10).collect();
        assert_eq!(s.std_error(), 0.0);
        assert!(Estimate::from_stats(&s).brackets(0.25, 4.0));
    }
}
