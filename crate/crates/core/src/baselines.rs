//! Explore-Then-Commit baselines that only look at each player's own
//! monitoring history.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub type PlayerId = u64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LedgerEntry {
    pub monitored_matches: u64,
    /// Ever observed toxic while monitored. Never reset.
    pub flagged: bool,
}

/// Per-player monitoring history. Unknown players read as a zeroed entry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlayerLedger {
    entries: HashMap<PlayerId, LedgerEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtcParams {
    /// Monitor each player for their first `exploration_matches` monitored
    /// matches, then only if flagged.
    Deterministic { exploration_matches: u64 },
    /// Monitor with probability `exploration_probability`, or always if flagged.
    Probabilistic { exploration_probability: f64 },
}

impl EtcParams {
    pub fn probabilistic(exploration_probability: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&exploration_probability) {
            return Err(Error::Config(format!(
                "exploration probability must lie in [0, 1], got {exploration_probability}"
            )));
        }
        Ok(Self::Probabilistic {
            exploration_probability,
        })
    }

    pub fn deterministic(exploration_matches: u64) -> Self {
        Self::Deterministic {
            exploration_matches,
        }
    }
}

impl PlayerLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(&self, player: PlayerId) -> LedgerEntry {
        self.entries.get(&player).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn flagged_count(&self) -> usize {
        self.entries.values().filter(|e| e.flagged).count()
    }

    /// Records the outcome of one match. Toxicity can only be observed on a
    /// monitored match.
    pub fn update(&mut self, player: PlayerId, monitored: bool, toxic_observed: bool) -> Result<()> {
        if toxic_observed && !monitored {
            return Err(Error::Contract(format!(
                "player {player}: toxicity reported for an unmonitored match"
            )));
        }
        if monitored {
            let e = self.entries.entry(player).or_default();
            e.monitored_matches += 1;
            e.flagged |= toxic_observed;
        }
        Ok(())
    }

    /// Rows sorted by player id: `player_id,monitored_matches,flagged`.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut ids: Vec<_> = self.entries.keys().copied().collect();
        ids.sort_unstable();
        writeln!(out, "player_id,monitored_matches,flagged")?;
        for id in ids {
            let e = self.entries[&id];
            writeln!(out, "{id},{},{}", e.monitored_matches, u8::from(e.flagged))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "player_id,monitored_matches,flagged" {
            return Err(Error::Checkpoint(format!("unexpected ledger header `{header}`")));
        }
        let mut entries = HashMap::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Checkpoint(format!("bad ledger row {}: `{line}`", i + 2));
            let mut parts = line.trim().split(',');
            let id: PlayerId = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let monitored_matches: u64 =
                parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let flagged = match parts.next() {
                Some("0") => false,
                Some("1") => true,
                _ => return Err(bad()),
            };
            if parts.next().is_some() {
                return Err(bad());
            }
            if entries
                .insert(
                    id,
                    LedgerEntry {
                        monitored_matches,
                        flagged,
                    },
                )
                .is_some()
            {
                return Err(Error::Checkpoint(format!("duplicate ledger row for player {id}")));
            }
        }
        Ok(Self { entries })
    }
}

/// Deterministic ETC: monitor while the exploration window is open, and
/// forever once the player has been caught.
pub fn decide_det_etc(ledger: &PlayerLedger, player: PlayerId, exploration_matches: u64) -> bool {
    let e = ledger.entry(player);
    e.monitored_matches < exploration_matches || e.flagged
}

/// Probabilistic ETC. `draw` is a uniform variate in `[0, 1)`.
pub fn decide_prob_etc(ledger: &PlayerLedger, player: PlayerId, epsilon: f64, draw: f64) -> bool {
    ledger.entry(player).flagged || draw < epsilon
}
