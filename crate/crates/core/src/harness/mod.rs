//! Day-batched policy evaluation.
//!
//! Each day, every observation is scored against the policy state frozen at
//! the previous day boundary. Labels are then revealed to the policy for the
//! monitored observations only, and the policy updates once before the next
//! day. Ground-truth toxicity of unmonitored observations is used solely for
//! the detection-rate denominator and never reaches the policy.

mod calibrate;
mod policies;
mod report;
mod sweep;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;

pub use calibrate::{calibrate_to_share, Calibration, PolicyFamily};
pub use policies::{DetEtcPolicy, FixedPolicy, LinUcbPolicy, ProbEtcPolicy};
pub use report::{improvement, improvement_table, ImprovementRow, REFERENCE_TABLE};
pub use sweep::{aggregate, sweep, CurvePoint, MetricsRow, PolicyKind, StreamFactory, SweepSpec, SyntheticFactory};

use crate::baselines::PlayerId;
use crate::error::{Error, Result};
use crate::features::CovariateRecord;
use crate::synth::DayBatch;

/// What a policy may see before deciding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Context {
    pub player_id: PlayerId,
    pub covariates: CovariateRecord,
}

/// A monitored observation together with its observed outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Revealed {
    pub player_id: PlayerId,
    pub covariates: CovariateRecord,
    pub toxic: bool,
}

pub trait MonitoringPolicy: Send + Sync {
    fn name(&self) -> &'static str;

    /// The scalar knob the policy is calibrated on (c, epsilon or m).
    fn param(&self) -> f64;

    /// Whether [`MonitoringPolicy::decide`] consumes its uniform draw.
    fn uses_draws(&self) -> bool {
        false
    }

    /// Sees the day's contexts before any decision. Labels are not available.
    fn begin_day(&mut self, _day: u32, _contexts: &[Context]) -> Result<()> {
        Ok(())
    }

    /// Decides one observation. Must not depend on other decisions of the
    /// same day; `draw` is uniform in `[0, 1)`.
    fn decide(&self, context: &Context, draw: f64) -> Result<bool>;

    /// Day-boundary update from the monitored observations of the day.
    fn end_of_day(&mut self, day: u32, revealed: &[Revealed]) -> Result<()>;

    /// Serializes the policy's learned state.
    fn write_checkpoint(&self, out: &mut dyn std::io::Write) -> Result<()>;
}

/// Scoring fan-out within a day. Results never depend on the worker count.
#[derive(Clone, Default)]
pub struct Parallelism {
    pool: Option<Arc<ThreadPool>>,
}

impl Parallelism {
    pub fn sequential() -> Self {
        Self { pool: None }
    }

    pub fn workers(n: usize) -> Result<Self> {
        if n <= 1 {
            return Ok(Self::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(Self {
            pool: Some(Arc::new(pool)),
        })
    }

    pub fn worker_count(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }
}

impl std::fmt::Debug for Parallelism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Parallelism({})", self.worker_count())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Seeds the per-day uniform draws handed to the policy.
    pub policy_seed: u64,
    pub parallelism: Parallelism,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DayCounts {
    pub day: u32,
    pub observations: u64,
    pub monitored: u64,
    pub toxic_total: u64,
    pub toxic_detected: u64,
}

impl DayCounts {
    fn add(&mut self, other: &DayCounts) {
        self.observations += other.observations;
        self.monitored += other.monitored;
        self.toxic_total += other.toxic_total;
        self.toxic_detected += other.toxic_detected;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EpisodeLog {
    pub days: Vec<DayCounts>,
}

impl EpisodeLog {
    /// Sum over all days; `day` is the last day covered.
    pub fn totals(&self) -> DayCounts {
        let mut t = DayCounts::default();
        for d in &self.days {
            t.add(d);
            t.day = d.day;
        }
        t
    }

    /// Running totals after each day.
    pub fn cumulative(&self) -> Vec<DayCounts> {
        let mut t = DayCounts::default();
        self.days
            .iter()
            .map(|d| {
                t.add(d);
                t.day = d.day;
                t
            })
            .collect()
    }

    pub fn share_monitored(&self) -> f64 {
        let t = self.totals();
        if t.observations == 0 {
            0.0
        } else {
            t.monitored as f64 / t.observations as f64
        }
    }
}

/// Detected over all toxic events; `None` when nothing toxic happened.
pub fn detection_rate(log: &EpisodeLog) -> Option<f64> {
    let t = log.totals();
    (t.toxic_total > 0).then(|| t.toxic_detected as f64 / t.toxic_total as f64)
}

/// Drives one policy through a stream one day at a time.
pub struct Episode<'p> {
    policy: &'p mut dyn MonitoringPolicy,
    options: RunOptions,
    log: EpisodeLog,
    next_day: u32,
}

impl<'p> Episode<'p> {
    pub fn new(policy: &'p mut dyn MonitoringPolicy, options: RunOptions) -> Self {
        Self {
            policy,
            options,
            log: EpisodeLog::default(),
            next_day: 0,
        }
    }

    /// Continues an interrupted episode from a day boundary.
    pub fn resume(
        policy: &'p mut dyn MonitoringPolicy,
        options: RunOptions,
        log: EpisodeLog,
    ) -> Result<Self> {
        for (i, d) in log.days.iter().enumerate() {
            if d.day as usize != i {
                return Err(Error::Stream(format!(
                    "episode log is not contiguous: row {i} is day {}",
                    d.day
                )));
            }
        }
        let next_day = log.days.len() as u32;
        Ok(Self {
            policy,
            options,
            log,
            next_day,
        })
    }

    pub fn next_day(&self) -> u32 {
        self.next_day
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn policy(&self) -> &dyn MonitoringPolicy {
        &*self.policy
    }

    /// Runs one day and returns the per-observation decisions.
    pub fn step(&mut self, batch: &DayBatch) -> Result<Vec<bool>> {
        let day = self.next_day;
        if batch.day != day {
            return Err(Error::Stream(format!(
                "expected day {day}, stream delivered day {}",
                batch.day
            )));
        }
        if let Some(e) = batch.events.iter().find(|e| e.day != day) {
            return Err(Error::Stream(format!(
                "event for day {} inside batch for day {day}",
                e.day
            )));
        }
        let contexts: Vec<Context> = batch
            .events
            .iter()
            .map(|e| Context {
                player_id: e.player_id,
                covariates: e.covariates,
            })
            .collect();
        self.policy.begin_day(day, &contexts)?;

        let draws: Vec<f64> = if self.policy.uses_draws() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.options.policy_seed);
            rng.set_stream(u64::from(day));
            (0..contexts.len()).map(|_| rng.random::<f64>()).collect()
        } else {
            vec![0.0; contexts.len()]
        };

        let policy: &dyn MonitoringPolicy = &*self.policy;
        let decide_all = || -> Result<Vec<bool>> {
            contexts
                .par_iter()
                .zip(draws.par_iter())
                .map(|(c, &d)| policy.decide(c, d))
                .collect()
        };
        let decisions = match &self.options.parallelism.pool {
            Some(pool) => pool.install(decide_all)?,
            None => contexts
                .iter()
                .zip(&draws)
                .map(|(c, &d)| policy.decide(c, d))
                .collect::<Result<Vec<bool>>>()?,
        };

        let mut counts = DayCounts {
            day,
            observations: batch.events.len() as u64,
            ..Default::default()
        };
        let mut revealed = Vec::new();
        for (event, &monitor) in batch.events.iter().zip(&decisions) {
            counts.toxic_total += u64::from(event.toxic);
            if monitor {
                counts.monitored += 1;
                counts.toxic_detected += u64::from(event.toxic);
                revealed.push(Revealed {
                    player_id: event.player_id,
                    covariates: event.covariates,
                    toxic: event.toxic,
                });
            }
        }
        self.policy.end_of_day(day, &revealed)?;
        self.log.days.push(counts);
        self.next_day += 1;
        Ok(decisions)
    }

    pub fn finish(self) -> EpisodeLog {
        self.log
    }
}

/// Runs a fresh policy over the first `days` days of `stream`.
pub fn run_episode(
    policy: &mut dyn MonitoringPolicy,
    stream: &[DayBatch],
    days: u32,
    options: &RunOptions,
) -> Result<EpisodeLog> {
    if stream.len() < days as usize {
        return Err(Error::Stream(format!(
            "stream covers {} days, episode needs {days}",
            stream.len()
        )));
    }
    let mut episode = Episode::new(policy, options.clone());
    for batch in &stream[..days as usize] {
        episode.step(batch)?;
    }
    Ok(episode.finish())
}
