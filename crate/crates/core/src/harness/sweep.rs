use std::collections::BTreeMap;
use std::str::FromStr;

use super::{calibrate_to_share, detection_rate, run_episode, Calibration, Parallelism, PolicyFamily, RunOptions};
use crate::error::{Error, Result};
use crate::features::FeatureStats;
use crate::synth::{generate_stream, DayBatch, GeneratorConfig};

/// Salt mixed into the replica seed to seed a policy's own draws.
const POLICY_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Produces the evaluation stream for a seed.
pub trait StreamFactory {
    fn stream(&self, seed: u64) -> Result<Vec<DayBatch>>;
    fn days(&self) -> u32;
    fn sigma_u(&self) -> f64;
}

/// Synthetic streams sharing one generator config and differing by seed.
#[derive(Debug, Clone)]
pub struct SyntheticFactory {
    pub config: GeneratorConfig,
}

impl StreamFactory for SyntheticFactory {
    fn stream(&self, seed: u64) -> Result<Vec<DayBatch>> {
        generate_stream(&GeneratorConfig {
            seed,
            ..self.config.clone()
        })
    }

    fn days(&self) -> u32 {
        self.config.days
    }

    fn sigma_u(&self) -> f64 {
        self.config.sigma_u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    LinUcb,
    ProbEtc,
    DetEtc,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::LinUcb => "linucb",
            PolicyKind::ProbEtc => "prob_etc",
            PolicyKind::DetEtc => "det_etc",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linucb" => Ok(PolicyKind::LinUcb),
            "prob_etc" => Ok(PolicyKind::ProbEtc),
            "det_etc" => Ok(PolicyKind::DetEtc),
            other => Err(Error::Config(format!(
                "unknown policy `{other}` (expected linucb, prob_etc or det_etc)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Strictly increasing, inside (0, 1).
    pub targets: Vec<f64>,
    pub exploration_factor: f64,
    /// Standardization for LinUCB; `None` estimates it from day 0.
    pub feature_stats: Option<FeatureStats>,
    /// Evaluation replicas.
    pub seeds: Vec<u64>,
    /// Stream used only for calibrating knobs. Must differ from `seeds`.
    pub calibration_seed: u64,
    pub tolerance: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            targets: (1..=9).map(|i| f64::from(i) / 10.0).collect(),
            exploration_factor: 1.0,
            feature_stats: Some(FeatureStats::table_defaults()),
            seeds: vec![1, 2, 3],
            calibration_seed: 1_000,
            tolerance: 0.005,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::Config("no target shares".into()));
        }
        if let Some(t) = self.targets.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Config(format!("target share {t} outside (0, 1)")));
        }
        if self.targets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("target shares must be strictly increasing".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no replica seeds".into()));
        }
        if self.seeds.contains(&self.calibration_seed) {
            return Err(Error::Config(format!(
                "calibration seed {} is also an evaluation seed",
                self.calibration_seed
            )));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("share tolerance must be non-negative".into()));
        }
        if !(self.exploration_factor.is_finite() && self.exploration_factor >= 0.0) {
            return Err(Error::Config("exploration factor must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn family(&self, kind: PolicyKind) -> PolicyFamily {
        match kind {
            PolicyKind::LinUcb => PolicyFamily::LinUcb {
                exploration_factor: self.exploration_factor,
                stats: self.feature_stats,
            },
            PolicyKind::ProbEtc => PolicyFamily::ProbEtc,
            PolicyKind::DetEtc => PolicyFamily::DetEtc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub policy: String,
    pub param: f64,
    /// `None` for single runs outside a sweep.
    pub target_share: Option<f64>,
    pub realized_share: f64,
    /// `None` when the episode had no toxic events.
    pub detection_rate: Option<f64>,
    pub seed: u64,
    /// `None` when the stream's generator is unknown.
    pub sigma_u: Option<f64>,
}

fn policy_options(seed: u64, parallelism: &Parallelism) -> RunOptions {
    RunOptions {
        policy_seed: seed ^ POLICY_SEED_SALT,
        parallelism: parallelism.clone(),
    }
}

/// Calibrates every (policy, target) pair on the calibration stream, then
/// evaluates each on every replica seed.
///
/// Rows come out ordered by policy, target, then seed. Only one stream is
/// held in memory at a time.
pub fn sweep(
    spec: &SweepSpec,
    policies: &[PolicyKind],
    factory: &dyn StreamFactory,
    parallelism: &Parallelism,
) -> Result<Vec<MetricsRow>> {
    spec.validate()?;
    if policies.is_empty() {
        return Err(Error::Config("no policies selected".into()));
    }
    let days = factory.days();

    let calibration_stream = factory.stream(spec.calibration_seed)?;
    let cal_opts = policy_options(spec.calibration_seed, parallelism);
    let mut knobs: Vec<(PolicyKind, f64, Calibration)> = Vec::new();
    for &kind in policies {
        let family = spec.family(kind);
        for &target in &spec.targets {
            let cal = calibrate_to_share(&family, target, spec.tolerance, &calibration_stream, days, &cal_opts)?;
            log::info!(
                "{} target {target}: knob {:e}, calibration share {:.6} after {} episodes",
                kind.name(),
                cal.param,
                cal.realized_share,
                cal.evaluations
            );
            knobs.push((kind, target, cal));
        }
    }
    drop(calibration_stream);

    let mut by_seed: Vec<Vec<MetricsRow>> = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let stream = factory.stream(seed)?;
        let opts = policy_options(seed, parallelism);
        let mut rows = Vec::with_capacity(knobs.len());
        for (kind, target, cal) in &knobs {
            let mut policy = spec.family(*kind).build(cal.param)?;
            let log = run_episode(policy.as_mut(), &stream, days, &opts)?;
            rows.push(MetricsRow {
                policy: kind.name().to_string(),
                param: cal.param,
                target_share: Some(*target),
                realized_share: log.share_monitored(),
                detection_rate: detection_rate(&log),
                seed,
                sigma_u: Some(factory.sigma_u()),
            });
        }
        by_seed.push(rows);
    }

    let mut out = Vec::with_capacity(knobs.len() * spec.seeds.len());
    for i in 0..knobs.len() {
        for rows in &by_seed {
            out.push(rows[i].clone());
        }
    }
    Ok(out)
}

/// One point of a detection-rate-versus-share curve, across replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub policy: String,
    pub target_share: f64,
    pub replicas: usize,
    pub mean_share: f64,
    pub mean_detection: Option<f64>,
    pub min_detection: Option<f64>,
    pub max_detection: Option<f64>,
}

/// Groups rows by (policy, target share). Rows without a target are ignored;
/// replicas without toxic events are left out of the detection statistics.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<CurvePoint> {
    let mut groups: BTreeMap<(String, u64), Vec<&MetricsRow>> = BTreeMap::new();
    let mut order: Vec<(String, u64)> = Vec::new();
    for r in rows {
        let Some(target) = r.target_share else { continue };
        let key = (r.policy.clone(), target.to_bits());
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let n = g.len();
            let dets: Vec<f64> = g.iter().filter_map(|r| r.detection_rate).collect();
            let mean_detection = (!dets.is_empty()).then(|| dets.iter().sum::<f64>() / dets.len() as f64);
            CurvePoint {
                policy: key.0,
                target_share: f64::from_bits(key.1),
                replicas: n,
                mean_share: g.iter().map(|r| r.realized_share).sum::<f64>() / n as f64,
                mean_detection,
                min_detection: dets.iter().copied().reduce(f64::min),
                max_detection: dets.iter().copied().reduce(f64::max),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factory() -> SyntheticFactory {
        SyntheticFactory {
            config: GeneratorConfig {
                n_players: 3_000,
                matches_per_day: 400,
                days: 4,
                beta0: -4.5,
                ..Default::default()
            },
        }
    }

    fn small_spec() -> SweepSpec {
        SweepSpec {
            targets: vec![0.3, 0.6],
            seeds: vec![11, 12],
            calibration_seed: 10,
            tolerance: 0.01,
            ..Default::default()
        }
    }

    #[test]
    fn row_count_and_order() {
        let rows = sweep(
            &small_spec(),
            &[PolicyKind::LinUcb, PolicyKind::ProbEtc],
            &factory(),
            &Parallelism::sequential(),
        )
        .unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2);
        assert_eq!(rows[0].policy, "linucb");
        assert_eq!((rows[0].seed, rows[1].seed), (11, 12));
        assert_eq!(rows[2].target_share, Some(0.6));
        assert_eq!(rows[4].policy, "prob_etc");
        for r in &rows {
            assert!((0.0..=1.0).contains(&r.realized_share));
            let d = r.detection_rate.unwrap();
            assert!((0.0..=1.0).contains(&d));
        }
        let pts = aggregate(&rows);
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[0].replicas, 2);
        assert!(pts[0].min_detection <= pts[0].mean_detection);
        assert!(pts[0].mean_detection <= pts[0].max_detection);
    }

    #[test]
    fn spec_validation() {
        let mut s = small_spec();
        s.targets = vec![0.5, 0.4];
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.targets = vec![0.0];
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.calibration_seed = 11;
        assert!(s.validate().is_err());
        assert!(sweep(&small_spec(), &[], &factory(), &Parallelism::sequential()).is_err());
    }

    #[test]
    fn policy_names_parse() {
        for k in [PolicyKind::LinUcb, PolicyKind::ProbEtc, PolicyKind::DetEtc] {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("ucb".parse::<PolicyKind>().is_err());
    }
}
