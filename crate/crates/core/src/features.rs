//! Pre-match covariates and their standardization.
//!
//! Feature order is fixed everywhere in the crate: the eight covariates in
//! [`COVARIATE_NAMES`] order, followed by a constant intercept slot.

use log::warn;

use crate::error::{Error, Result};

pub const N_COVARIATES: usize = 8;
/// Covariates plus the intercept slot.
pub const FEATURE_DIM: usize = N_COVARIATES + 1;

pub const COVARIATE_NAMES: [&str; N_COVARIATES] = [
    "skill_level",
    "avg_skill_diff_opponents",
    "avg_skill_diff_teammates",
    "has_party_teammates",
    "prop_party_teammates",
    "matches_in_session",
    "reports_against_24h",
    "reports_by_24h",
];

/// Published sample means of the covariates, in [`COVARIATE_NAMES`] order.
pub const TABLE_MEANS: [f64; N_COVARIATES] =
    [-43.994, 96.025, 103.586, 0.336, 0.104, 3.751, 0.0364, 0.0449];
/// Published sample standard deviations, same order.
pub const TABLE_SDS: [f64; N_COVARIATES] =
    [207.828, 76.750, 85.075, 0.472, 0.185, 5.840, 0.236, 0.914];

/// The eight pre-match features of one (player, match) observation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CovariateRecord {
    pub skill_level: f64,
    pub avg_skill_diff_opponents: f64,
    pub avg_skill_diff_teammates: f64,
    pub has_party_teammates: bool,
    pub prop_party_teammates: f64,
    pub matches_in_session: u32,
    pub reports_against_24h: u32,
    pub reports_by_24h: u32,
}

impl CovariateRecord {
    pub fn to_raw(&self) -> [f64; N_COVARIATES] {
        [
            self.skill_level,
            self.avg_skill_diff_opponents,
            self.avg_skill_diff_teammates,
            if self.has_party_teammates { 1.0 } else { 0.0 },
            self.prop_party_teammates,
            f64::from(self.matches_in_session),
            f64::from(self.reports_against_24h),
            f64::from(self.reports_by_24h),
        ]
    }

    /// Checks finiteness, ranges and the party gating rule.
    pub fn validate(&self) -> Result<()> {
        for (name, value) in COVARIATE_NAMES.iter().zip(self.to_raw()) {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    feature: name,
                    value,
                });
            }
        }
        if self.avg_skill_diff_opponents < 0.0 || self.avg_skill_diff_teammates < 0.0 {
            return Err(Error::InvalidRecord(
                "average skill differences must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.prop_party_teammates) {
            return Err(Error::InvalidRecord(format!(
                "prop_party_teammates {} outside [0, 1]",
                self.prop_party_teammates
            )));
        }
        if !self.has_party_teammates && self.prop_party_teammates != 0.0 {
            return Err(Error::InvalidRecord(
                "prop_party_teammates must be 0 without party teammates".into(),
            ));
        }
        Ok(())
    }
}

/// Per-covariate centering and scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureStats {
    mean: [f64; N_COVARIATES],
    sd: [f64; N_COVARIATES],
}

impl FeatureStats {
    pub fn new(mean: [f64; N_COVARIATES], sd: [f64; N_COVARIATES]) -> Result<Self> {
        for i in 0..N_COVARIATES {
            if !mean[i].is_finite() {
                return Err(Error::NonFinite {
                    feature: COVARIATE_NAMES[i],
                    value: mean[i],
                });
            }
            if !(sd[i].is_finite() && sd[i] > 0.0) {
                return Err(Error::Config(format!(
                    "standard deviation for `{}` must be positive and finite, got {}",
                    COVARIATE_NAMES[i], sd[i]
                )));
            }
        }
        Ok(Self { mean, sd })
    }

    /// Defaults taken from the published descriptive statistics.
    pub fn table_defaults() -> Self {
        Self {
            mean: TABLE_MEANS,
            sd: TABLE_SDS,
        }
    }

    /// Sample mean and (population) standard deviation of `records`.
    ///
    /// A feature with zero variance gets `sd = 1` and a warning, so it only
    /// shifts the intercept.
    pub fn from_records<'a, I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a CovariateRecord>,
    {
        let mut n = 0u64;
        let mut mean = [0.0; N_COVARIATES];
        let mut m2 = [0.0; N_COVARIATES];
        // Welford, so that large counts stay accurate.
        for record in records {
            let raw = record.to_raw();
            n += 1;
            for i in 0..N_COVARIATES {
                if !raw[i].is_finite() {
                    return Err(Error::NonFinite {
                        feature: COVARIATE_NAMES[i],
                        value: raw[i],
                    });
                }
                let delta = raw[i] - mean[i];
                mean[i] += delta / n as f64;
                m2[i] += delta * (raw[i] - mean[i]);
            }
        }
        if n == 0 {
            return Err(Error::Config(
                "cannot compute feature statistics from zero records".into(),
            ));
        }
        let mut sd = [1.0; N_COVARIATES];
        for i in 0..N_COVARIATES {
            let var = m2[i] / n as f64;
            if var > 0.0 && var.is_finite() {
                sd[i] = var.sqrt();
            } else {
                warn!(
                    "feature `{}` has zero variance; using sd = 1",
                    COVARIATE_NAMES[i]
                );
            }
        }
        Self::new(mean, sd)
    }

    pub fn mean(&self) -> &[f64; N_COVARIATES] {
        &self.mean
    }

    pub fn sd(&self) -> &[f64; N_COVARIATES] {
        &self.sd
    }
}

/// Maps a record onto the model's feature space: standardized covariates
/// followed by a constant 1.
pub fn standardize(record: &CovariateRecord, stats: &FeatureStats) -> Result<[f64; FEATURE_DIM]> {
    let raw = record.to_raw();
    let mut out = [1.0; FEATURE_DIM];
    for i in 0..N_COVARIATES {
        if !raw[i].is_finite() {
            return Err(Error::NonFinite {
                feature: COVARIATE_NAMES[i],
                value: raw[i],
            });
        }
        out[i] = (raw[i] - stats.mean[i]) / stats.sd[i];
    }
    Ok(out)
}
