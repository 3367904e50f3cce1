//! Flat `key = value` text form of [`GeneratorConfig`].
//!
//! Blank lines and `#` comments are ignored. Keys missing from a file keep
//! their default value; unknown keys are an error.

use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::GeneratorConfig;
use crate::error::{Error, Result};
use crate::features::{COVARIATE_NAMES, N_COVARIATES};

impl GeneratorConfig {
    /// Canonical text with every field, one per line.
    pub fn to_text(&self) -> String {
        let m = &self.marginals;
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("n_players", self.n_players.to_string());
        put("days", self.days.to_string());
        put("matches_per_day", self.matches_per_day.to_string());
        put("players_per_match", self.players_per_match.to_string());
        put("seed", self.seed.to_string());
        put("beta0", format!("{:?}", self.beta0));
        put("sigma_u", format!("{:?}", self.sigma_u));
        for (name, b) in COVARIATE_NAMES.iter().zip(&self.beta) {
            put(&format!("beta_{name}"), format!("{b:?}"));
        }
        put("skill_mean", format!("{:?}", m.skill_mean));
        put("skill_sd", format!("{:?}", m.skill_sd));
        put("skill_min", format!("{:?}", m.skill_min));
        put("skill_max", format!("{:?}", m.skill_max));
        put("matchmaking_noise", format!("{:?}", m.matchmaking_noise));
        put("balanced_team_prob", format!("{:?}", m.balanced_team_prob));
        put("party_rate", format!("{:?}", m.party_rate));
        put("party_prop_alpha", format!("{:?}", m.party_prop_alpha));
        put("party_prop_beta", format!("{:?}", m.party_prop_beta));
        put("session_mean", format!("{:?}", m.session_mean));
        put("session_cap", m.session_cap.to_string());
        put("reports_against_zero_prob", format!("{:?}", m.reports_against.zero_prob));
        put("reports_against_poisson_mean", format!("{:?}", m.reports_against.poisson_mean));
        put("reports_against_cap", m.reports_against.cap.to_string());
        put("reports_by_zero_prob", format!("{:?}", m.reports_by.zero_prob));
        put("reports_by_poisson_mean", format!("{:?}", m.reports_by.poisson_mean));
        put("reports_by_cap", m.reports_by.cap.to_string());
        put("report_prob", format!("{:?}", m.report_prob));
        s
    }

    /// Parses a config file on top of the defaults and validates it.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = GeneratorConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        let m = &mut self.marginals;
        match key {
            "n_players" => self.n_players = parse(key, value)?,
            "days" => self.days = parse(key, value)?,
            "matches_per_day" => self.matches_per_day = parse(key, value)?,
            "players_per_match" => self.players_per_match = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "beta0" => self.beta0 = parse(key, value)?,
            "sigma_u" => self.sigma_u = parse(key, value)?,
            "skill_mean" => m.skill_mean = parse(key, value)?,
            "skill_sd" => m.skill_sd = parse(key, value)?,
            "skill_min" => m.skill_min = parse(key, value)?,
            "skill_max" => m.skill_max = parse(key, value)?,
            "matchmaking_noise" => m.matchmaking_noise = parse(key, value)?,
            "balanced_team_prob" => m.balanced_team_prob = parse(key, value)?,
            "party_rate" => m.party_rate = parse(key, value)?,
            "party_prop_alpha" => m.party_prop_alpha = parse(key, value)?,
            "party_prop_beta" => m.party_prop_beta = parse(key, value)?,
            "session_mean" => m.session_mean = parse(key, value)?,
            "session_cap" => m.session_cap = parse(key, value)?,
            "reports_against_zero_prob" => m.reports_against.zero_prob = parse(key, value)?,
            "reports_against_poisson_mean" => m.reports_against.poisson_mean = parse(key, value)?,
            "reports_against_cap" => m.reports_against.cap = parse(key, value)?,
            "reports_by_zero_prob" => m.reports_by.zero_prob = parse(key, value)?,
            "reports_by_poisson_mean" => m.reports_by.poisson_mean = parse(key, value)?,
            "reports_by_cap" => m.reports_by.cap = parse(key, value)?,
            "report_prob" => m.report_prob = parse(key, value)?,
            other => {
                let idx = other
                    .strip_prefix("beta_")
                    .and_then(|name| COVARIATE_NAMES.iter().position(|n| *n == name))
                    .filter(|&i| i < N_COVARIATES)
                    .ok_or_else(|| Error::Config(format!("unknown key `{other}`")))?;
                self.beta[idx] = parse(key, value)?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn config_hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
