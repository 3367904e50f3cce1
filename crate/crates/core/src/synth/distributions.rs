//! Random variate helpers for the synthetic population.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Normal distribution restricted to `[lo, hi]`, sampled by inversion.
#[derive(Debug, Clone)]
pub struct TruncatedNormal {
    normal: Normal,
    cdf_lo: f64,
    cdf_hi: f64,
    lo: f64,
    hi: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Config(format!("empty truncation interval [{lo}, {hi}]")));
        }
        let normal = Normal::new(mean, sd)
            .map_err(|e| Error::Config(format!("bad normal parameters ({mean}, {sd}): {e}")))?;
        let cdf_lo = normal.cdf(lo);
        let cdf_hi = normal.cdf(hi);
        if !(cdf_hi > cdf_lo) {
            return Err(Error::Config(format!(
                "truncation interval [{lo}, {hi}] has no mass under N({mean}, {sd}^2)"
            )));
        }
        Ok(Self {
            normal,
            cdf_lo,
            cdf_hi,
            lo,
            hi,
        })
    }

    /// Quantile at `p` in `[0, 1]` of the truncated law.
    pub fn quantile(&self, p: f64) -> f64 {
        let q = self.cdf_lo + p * (self.cdf_hi - self.cdf_lo);
        self.normal.inverse_cdf(q).clamp(self.lo, self.hi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }

    /// `n` draws with one uniform per stratum `[i/n, (i+1)/n)`, returned in
    /// random order. Each value is marginally exact; the sample mean has far
    /// less Monte-Carlo noise than iid draws.
    pub fn sample_stratified<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let mut out: Vec<f64> = (0..n)
            .map(|i| {
                let p = (i as f64 + rng.random::<f64>()) / n as f64;
                self.quantile(p)
            })
            .collect();
        out.shuffle(rng);
        out
    }
}

/// Poisson count that is forced to zero with probability `zero_prob`, then
/// capped at `cap`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroInflatedPoisson {
    pub zero_prob: f64,
    pub poisson_mean: f64,
    pub cap: u32,
}

impl ZeroInflatedPoisson {
    pub fn validate(&self, name: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.zero_prob) {
            return Err(Error::Config(format!("{name}: zero probability must lie in [0, 1]")));
        }
        if !(self.poisson_mean.is_finite() && self.poisson_mean > 0.0) {
            return Err(Error::Config(format!("{name}: Poisson mean must be positive")));
        }
        Ok(())
    }

    pub fn mean_uncapped(&self) -> f64 {
        (1.0 - self.zero_prob) * self.poisson_mean
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if rng.random::<f64>() < self.zero_prob {
            return 0;
        }
        // Parameters are validated up front, so construction cannot fail.
        let draw: f64 = Poisson::new(self.poisson_mean)
            .expect("validated Poisson mean")
            .sample(rng);
        (draw as u64).min(u64::from(self.cap)) as u32
    }
}
