use std::io::Write;

use super::{Context, MonitoringPolicy, Revealed};
use crate::baselines::{decide_det_etc, decide_prob_etc, EtcParams, PlayerLedger};
use crate::error::{Error, Result};
use crate::features::{standardize, FeatureStats, FEATURE_DIM};
use crate::linucb::{ModelCheckpoint, ModelState, UcbParams};

/// LinUCB over standardized covariates with an intercept.
///
/// Without preset feature statistics (replay mode) the policy estimates
/// them from the covariates of the first day it sees, before any decision,
/// and keeps them fixed afterwards.
#[derive(Debug, Clone)]
pub struct LinUcbPolicy {
    model: ModelState,
    stats: Option<FeatureStats>,
    params: UcbParams,
}

impl LinUcbPolicy {
    pub fn new(params: UcbParams, stats: Option<FeatureStats>) -> Self {
        Self {
            model: ModelState::new(FEATURE_DIM),
            stats,
            params,
        }
    }

    pub fn from_checkpoint(cp: ModelCheckpoint) -> Self {
        Self {
            model: cp.model,
            stats: Some(cp.stats),
            params: cp.params,
        }
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn stats(&self) -> Option<&FeatureStats> {
        self.stats.as_ref()
    }

    pub fn params(&self) -> UcbParams {
        self.params
    }

    fn stats_or_err(&self) -> Result<&FeatureStats> {
        self.stats
            .as_ref()
            .ok_or_else(|| Error::Contract("feature statistics not initialised".into()))
    }
}

impl MonitoringPolicy for LinUcbPolicy {
    fn name(&self) -> &'static str {
        "linucb"
    }

    fn param(&self) -> f64 {
        self.params.monitoring_cost()
    }

    fn begin_day(&mut self, _day: u32, contexts: &[Context]) -> Result<()> {
        if self.stats.is_none() && !contexts.is_empty() {
            self.stats = Some(FeatureStats::from_records(contexts.iter().map(|c| &c.covariates))?);
        }
        Ok(())
    }

    fn decide(&self, context: &Context, _draw: f64) -> Result<bool> {
        let x = standardize(&context.covariates, self.stats_or_err()?)?;
        Ok(self.model.ucb_score(&x, &self.params)?.monitor)
    }

    fn end_of_day(&mut self, _day: u32, revealed: &[Revealed]) -> Result<()> {
        if revealed.is_empty() {
            return Ok(());
        }
        let stats = *self.stats_or_err()?;
        let batch = revealed
            .iter()
            .map(|r| Ok((standardize(&r.covariates, &stats)?, u8::from(r.toxic))))
            .collect::<Result<Vec<_>>>()?;
        self.model.ingest_batch(&batch)
    }

    fn write_checkpoint(&self, out: &mut dyn Write) -> Result<()> {
        let cp = ModelCheckpoint {
            model: self.model.clone(),
            stats: *self.stats_or_err()?,
            params: self.params,
        };
        cp.write_to(out)
    }
}

fn ingest_ledger(ledger: &mut PlayerLedger, revealed: &[Revealed]) -> Result<()> {
    for r in revealed {
        ledger.update(r.player_id, true, r.toxic)?;
    }
    Ok(())
}

/// Probabilistic Explore-Then-Commit.
#[derive(Debug, Clone)]
pub struct ProbEtcPolicy {
    epsilon: f64,
    ledger: PlayerLedger,
}

impl ProbEtcPolicy {
    pub fn new(epsilon: f64) -> Result<Self> {
        Self::with_ledger(epsilon, PlayerLedger::new())
    }

    pub fn with_ledger(epsilon: f64, ledger: PlayerLedger) -> Result<Self> {
        EtcParams::probabilistic(epsilon)?;
        Ok(Self { epsilon, ledger })
    }

    pub fn ledger(&self) -> &PlayerLedger {
        &self.ledger
    }
}

impl MonitoringPolicy for ProbEtcPolicy {
    fn name(&self) -> &'static str {
        "prob_etc"
    }

    fn param(&self) -> f64 {
        self.epsilon
    }

    fn uses_draws(&self) -> bool {
        true
    }

    fn decide(&self, context: &Context, draw: f64) -> Result<bool> {
        Ok(decide_prob_etc(&self.ledger, context.player_id, self.epsilon, draw))
    }

    fn end_of_day(&mut self, _day: u32, revealed: &[Revealed]) -> Result<()> {
        ingest_ledger(&mut self.ledger, revealed)
    }

    fn write_checkpoint(&self, out: &mut dyn Write) -> Result<()> {
        self.ledger.write_to(out)
    }
}

/// Deterministic Explore-Then-Commit.
#[derive(Debug, Clone)]
pub struct DetEtcPolicy {
    exploration_matches: u64,
    ledger: PlayerLedger,
}

impl DetEtcPolicy {
    pub fn new(exploration_matches: u64) -> Self {
        Self::with_ledger(exploration_matches, PlayerLedger::new())
    }

    pub fn with_ledger(exploration_matches: u64, ledger: PlayerLedger) -> Self {
        Self {
            exploration_matches,
            ledger,
        }
    }

    pub fn ledger(&self) -> &PlayerLedger {
        &self.ledger
    }
}

impl MonitoringPolicy for DetEtcPolicy {
    fn name(&self) -> &'static str {
        "det_etc"
    }

    fn param(&self) -> f64 {
        self.exploration_matches as f64
    }

    fn decide(&self, context: &Context, _draw: f64) -> Result<bool> {
        Ok(decide_det_etc(&self.ledger, context.player_id, self.exploration_matches))
    }

    fn end_of_day(&mut self, _day: u32, revealed: &[Revealed]) -> Result<()> {
        ingest_ledger(&mut self.ledger, revealed)
    }

    fn write_checkpoint(&self, out: &mut dyn Write) -> Result<()> {
        self.ledger.write_to(out)
    }
}

/// Monitors everything or nothing. Useful as a bound and in tests.
#[derive(Debug, Clone, Copy)]
pub struct FixedPolicy {
    monitor: bool,
}

impl FixedPolicy {
    pub fn new(monitor: bool) -> Self {
        Self { monitor }
    }
}

impl MonitoringPolicy for FixedPolicy {
    fn name(&self) -> &'static str {
        if self.monitor {
            "all"
        } else {
            "none"
        }
    }

    fn param(&self) -> f64 {
        f64::from(u8::from(self.monitor))
    }

    fn decide(&self, _context: &Context, _draw: f64) -> Result<bool> {
        Ok(self.monitor)
    }

    fn end_of_day(&mut self, _day: u32, _revealed: &[Revealed]) -> Result<()> {
        Ok(())
    }

    fn write_checkpoint(&self, _out: &mut dyn Write) -> Result<()> {
        Ok(())
    }
}
