//! Synthetic match stream.
//!
//! A fixed population plays `matches_per_day` matches a day. Covariate
//! marginals follow the published descriptive statistics, and each
//! (player, match) is toxic with probability
//! `sigmoid(beta0 + beta . x_raw + u_player)`.
//!
//! Structure kept on purpose:
//! - matches are formed by skill-based matchmaking, so skill differences come
//!   from the actual match composition;
//! - party proportion is only non-zero when the player has party teammates;
//! - a toxic event gets the offender reported (`reports_against`) and makes
//!   each teammate file a report (`reports_by`), each with probability
//!   `report_prob`, counted for the rest of the day and the following day;
//! - session counters carry across matches within a day.

mod calibrate;
mod config;
pub mod distributions;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Geometric, StandardNormal};

pub use calibrate::{calibrate_intercept, PILOT_MIN_EVENTS};
pub use distributions::{sigmoid, TruncatedNormal, ZeroInflatedPoisson};

use crate::baselines::PlayerId;
use crate::error::{Error, Result};
use crate::features::{CovariateRecord, N_COVARIATES};

/// Logistic coefficients on raw covariates, in feature order. The
/// teammate-skill coefficient is reported as -0.000 and carried as 0.
pub const DEFAULT_BETA: [f64; N_COVARIATES] = [0.001, -0.001, 0.0, 1.566, 0.697, -0.001, 0.251, 0.033];

/// Published base rate of toxic (player, match) observations.
pub const TARGET_TOXIC_RATE: f64 = 0.000372;

/// RNG stream ids derived from the configured seed.
const POPULATION_STREAM: u64 = 1;
const DAYS_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub skill_mean: f64,
    pub skill_sd: f64,
    pub skill_min: f64,
    pub skill_max: f64,
    /// Standard deviation of the queue-time jitter added to skill before
    /// players are sorted into matches.
    pub matchmaking_noise: f64,
    /// Probability that a match uses a snake draft by skill instead of a
    /// random team split.
    pub balanced_team_prob: f64,
    pub party_rate: f64,
    pub party_prop_alpha: f64,
    pub party_prop_beta: f64,
    pub session_mean: f64,
    pub session_cap: u32,
    pub reports_against: ZeroInflatedPoisson,
    pub reports_by: ZeroInflatedPoisson,
    pub report_prob: f64,
}

impl Default for Marginals {
    fn default() -> Self {
        Self {
            skill_mean: -43.994,
            skill_sd: 207.828,
            skill_min: -736.0,
            skill_max: 716.0,
            matchmaking_noise: 97.0,
            balanced_team_prob: 0.58,
            party_rate: 0.336,
            // Conditional Beta matched to the overall mean 0.104 and sd 0.185.
            party_prop_alpha: 1.420_114,
            party_prop_beta: 3.167_948,
            session_mean: 3.751,
            session_cap: 150,
            // Moment-matched to mean/sd (0.0364, 0.236) and (0.0449, 0.914),
            // with the active share trimmed for the report feedback.
            reports_against: ZeroInflatedPoisson {
                zero_prob: 0.935_895,
                poisson_mean: 0.566_510,
                cap: 153,
            },
            reports_by: ZeroInflatedPoisson {
                zero_prob: 0.997_518,
                poisson_mean: 17.650_602,
                cap: 304,
            },
            report_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_players: usize,
    pub days: u32,
    pub matches_per_day: usize,
    pub players_per_match: usize,
    pub marginals: Marginals,
    pub beta: [f64; N_COVARIATES],
    pub beta0: f64,
    pub sigma_u: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_players: 100_000,
            days: 30,
            matches_per_day: 9_700,
            players_per_match: 12,
            marginals: Marginals::default(),
            beta: DEFAULT_BETA,
            // Output of `calibrate_intercept(&default, TARGET_TOXIC_RATE)`.
            beta0: -9.279,
            sigma_u: 1.0,
            seed: 20_231_110,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.marginals;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_players == 0 || self.days == 0 || self.matches_per_day == 0 {
            return bad("n_players, days and matches_per_day must be positive".into());
        }
        if self.players_per_match < 2 || self.players_per_match % 2 != 0 {
            return bad(format!(
                "players_per_match must be an even number >= 2, got {}",
                self.players_per_match
            ));
        }
        if self.n_players < self.players_per_match {
            return bad(format!(
                "population of {} cannot fill a match of {}",
                self.n_players, self.players_per_match
            ));
        }
        if !(self.sigma_u.is_finite() && self.sigma_u >= 0.0) {
            return bad(format!("sigma_u must be finite and >= 0, got {}", self.sigma_u));
        }
        if !self.beta0.is_finite() || self.beta.iter().any(|b| !b.is_finite()) {
            return bad("logistic coefficients must be finite".into());
        }
        if !(m.skill_sd > 0.0 && m.skill_min < m.skill_max) {
            return bad("skill distribution needs sd > 0 and min < max".into());
        }
        if !(m.matchmaking_noise >= 0.0) {
            return bad("matchmaking_noise must be >= 0".into());
        }
        for (name, p) in [
            ("balanced_team_prob", m.balanced_team_prob),
            ("party_rate", m.party_rate),
            ("report_prob", m.report_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(m.party_prop_alpha > 0.0 && m.party_prop_beta > 0.0) {
            return bad("party proportion Beta parameters must be positive".into());
        }
        if !(m.session_mean.is_finite() && m.session_mean >= 0.0) {
            return bad("session_mean must be >= 0".into());
        }
        m.reports_against.validate("reports_against")?;
        m.reports_by.validate("reports_by")?;
        Ok(())
    }

    pub fn events_per_day(&self) -> usize {
        self.matches_per_day * self.players_per_match
    }

    /// Probability that a session ends after a match. Chosen so that the
    /// geometric start-of-day distribution of `matches_in_session` is
    /// stationary under the per-match transitions.
    pub fn session_end_prob(&self) -> f64 {
        1.0 / (1.0 + self.marginals.session_mean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayerProfile {
    pub id: PlayerId,
    /// Persistent log-odds shift of this player's toxicity.
    pub latent_intercept: f64,
    pub skill: f64,
    pub session_matches: u32,
    baseline_reports_against: u32,
    baseline_reports_by: u32,
    /// Feedback reports: filed during the previous day / today.
    feedback_against: [u32; 2],
    feedback_by: [u32; 2],
}

impl PlayerProfile {
    pub fn reports_against_24h(&self, cap: u32) -> u32 {
        (self.baseline_reports_against + self.feedback_against[0] + self.feedback_against[1]).min(cap)
    }

    pub fn reports_by_24h(&self, cap: u32) -> u32 {
        (self.baseline_reports_by + self.feedback_by[0] + self.feedback_by[1]).min(cap)
    }
}

/// One player in one match, with the ground-truth outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationEvent {
    pub day: u32,
    pub match_id: u64,
    pub player_id: PlayerId,
    pub covariates: CovariateRecord,
    pub toxic: bool,
}

/// All events of one day, in match order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DayBatch {
    pub day: u32,
    pub events: Vec<ObservationEvent>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws the population: stratified truncated-normal skills and normal
/// random intercepts. Deterministic in `config.seed`.
pub fn sample_population(config: &GeneratorConfig) -> Result<Vec<PlayerProfile>> {
    config.validate()?;
    let m = &config.marginals;
    let mut rng = rng_for(config.seed, POPULATION_STREAM);
    let skill = TruncatedNormal::new(m.skill_mean, m.skill_sd, m.skill_min, m.skill_max)?;
    let skills = skill.sample_stratified(config.n_players, &mut rng);
    let profiles = skills
        .into_iter()
        .enumerate()
        .map(|(i, skill)| {
            let z: f64 = rng.sample(StandardNormal);
            PlayerProfile {
                id: i as PlayerId,
                latent_intercept: config.sigma_u * z,
                skill,
                session_matches: 0,
                baseline_reports_against: 0,
                baseline_reports_by: 0,
                feedback_against: [0; 2],
                feedback_by: [0; 2],
            }
        })
        .collect();
    Ok(profiles)
}

/// `sigmoid(beta0 + beta . x + u)`.
pub fn toxicity_prob(x: &[f64; N_COVARIATES], u: f64, beta: &[f64; N_COVARIATES], beta0: f64) -> f64 {
    sigmoid(linear_predictor(x, u, beta, beta0))
}

pub(crate) fn linear_predictor(
    x: &[f64; N_COVARIATES],
    u: f64,
    beta: &[f64; N_COVARIATES],
    beta0: f64,
) -> f64 {
    beta0 + u + x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()
}

/// Bernoulli draw from the stream's generator.
pub fn sample_outcome<R: Rng + ?Sized>(prob: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < prob
}

/// Per-event hook used by the intercept calibration to see the linear
/// predictor without a second pass.
pub(crate) trait EventSink {
    fn event(&mut self, event: ObservationEvent, eta: f64);
}

impl EventSink for Vec<ObservationEvent> {
    fn event(&mut self, event: ObservationEvent, _eta: f64) {
        self.push(event);
    }
}

/// Generates one day. Population state (session and report counters) is
/// advanced in place.
pub fn sample_day<R: Rng + ?Sized>(
    config: &GeneratorConfig,
    population: &mut [PlayerProfile],
    day: u32,
    rng: &mut R,
) -> Result<Vec<ObservationEvent>> {
    let mut events = Vec::with_capacity(config.events_per_day());
    sample_day_into(config, population, day, rng, &mut events)?;
    Ok(events)
}

pub(crate) fn sample_day_into<R: Rng + ?Sized, S: EventSink>(
    config: &GeneratorConfig,
    population: &mut [PlayerProfile],
    day: u32,
    rng: &mut R,
    sink: &mut S,
) -> Result<()> {
    let ppm = config.players_per_match;
    if population.len() < ppm {
        return Err(Error::Config(format!(
            "population of {} cannot fill a match of {ppm}",
            population.len()
        )));
    }
    let m = &config.marginals;
    let n = population.len();
    let session_end = config.session_end_prob();
    let session_start = Geometric::new(session_end)
        .map_err(|e| Error::Config(format!("session distribution: {e}")))?;
    let party_prop = Beta::new(m.party_prop_alpha, m.party_prop_beta)
        .map_err(|e| Error::Config(format!("party proportion distribution: {e}")))?;

    for p in population.iter_mut() {
        p.feedback_against = [p.feedback_against[1], 0];
        p.feedback_by = [p.feedback_by[1], 0];
        p.baseline_reports_against = m.reports_against.sample(rng);
        p.baseline_reports_by = m.reports_by.sample(rng);
        p.session_matches = session_start.sample(rng).min(u64::from(m.session_cap)) as u32;
    }

    // Matchmaking: queue slots sorted by jittered skill, cut into matches.
    let slots = config.matches_per_day * ppm;
    let mut queue: Vec<(f64, u32)> = (0..slots)
        .map(|_| {
            let idx = rng.random_range(0..n);
            let jitter: f64 = rng.sample(StandardNormal);
            (population[idx].skill + m.matchmaking_noise * jitter, idx as u32)
        })
        .collect();
    queue.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut seats: Vec<u32> = queue.into_iter().map(|(_, idx)| idx).collect();
    for chunk in seats.chunks_mut(ppm) {
        dedupe_match(chunk, n, rng);
    }
    let mut order: Vec<usize> = (0..config.matches_per_day).collect();
    order.shuffle(rng);

    let mut on_team_a = vec![false; ppm];
    let mut toxic = vec![false; ppm];
    for (position, &slot) in order.iter().enumerate() {
        let members = &mut seats[slot * ppm..(slot + 1) * ppm];
        if rng.random_bool(m.balanced_team_prob) {
            members.sort_by(|&a, &b| {
                population[a as usize]
                    .skill
                    .total_cmp(&population[b as usize].skill)
                    .then(a.cmp(&b))
            });
            for (rank, flag) in on_team_a.iter_mut().enumerate() {
                *flag = rank % 4 == 0 || rank % 4 == 3;
            }
        } else {
            members.shuffle(rng);
            for (rank, flag) in on_team_a.iter_mut().enumerate() {
                *flag = rank < ppm / 2;
            }
        }
        let match_id = u64::from(day) * config.matches_per_day as u64 + position as u64;
        let team_size = ppm / 2;

        for i in 0..ppm {
            let me = &population[members[i] as usize];
            let (mut opp, mut mate) = (0.0, 0.0);
            for j in 0..ppm {
                if j == i {
                    continue;
                }
                let diff = (me.skill - population[members[j] as usize].skill).abs();
                if on_team_a[i] == on_team_a[j] {
                    mate += diff;
                } else {
                    opp += diff;
                }
            }
            let has_party = rng.random_bool(m.party_rate);
            let prop = if has_party {
                let v: f64 = party_prop.sample(rng);
                v.clamp(f64::MIN_POSITIVE, 1.0)
            } else {
                0.0
            };
            let covariates = CovariateRecord {
                skill_level: me.skill,
                avg_skill_diff_opponents: opp / team_size as f64,
                avg_skill_diff_teammates: if team_size > 1 {
                    mate / (team_size - 1) as f64
                } else {
                    0.0
                },
                has_party_teammates: has_party,
                prop_party_teammates: prop,
                matches_in_session: me.session_matches,
                reports_against_24h: me.reports_against_24h(m.reports_against.cap),
                reports_by_24h: me.reports_by_24h(m.reports_by.cap),
            };
            let eta = linear_predictor(
                &covariates.to_raw(),
                me.latent_intercept,
                &config.beta,
                config.beta0,
            );
            let is_toxic = sample_outcome(sigmoid(eta), rng);
            toxic[i] = is_toxic;
            sink.event(
                ObservationEvent {
                    day,
                    match_id,
                    player_id: me.id,
                    covariates,
                    toxic: is_toxic,
                },
                eta,
            );
        }

        for i in 0..ppm {
            if !toxic[i] {
                continue;
            }
            if rng.random_bool(m.report_prob) {
                population[members[i] as usize].feedback_against[1] += 1;
            }
            for j in 0..ppm {
                if j != i && on_team_a[j] == on_team_a[i] && rng.random_bool(m.report_prob) {
                    population[members[j] as usize].feedback_by[1] += 1;
                }
            }
        }
        for &idx in members.iter() {
            let p = &mut population[idx as usize];
            if rng.random_bool(session_end) {
                p.session_matches = 0;
            } else {
                p.session_matches = (p.session_matches + 1).min(m.session_cap);
            }
        }
    }
    Ok(())
}

/// Replaces repeated players inside one match with fresh random players.
fn dedupe_match<R: Rng + ?Sized>(members: &mut [u32], n: usize, rng: &mut R) {
    for i in 1..members.len() {
        while members[..i].contains(&members[i]) {
            members[i] = rng.random_range(0..n) as u32;
        }
    }
}

/// Day-by-day generator over a fixed population.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    config: GeneratorConfig,
    population: Vec<PlayerProfile>,
    rng: ChaCha8Rng,
    next_day: u32,
}

impl SyntheticStream {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        let population = sample_population(&config)?;
        let rng = rng_for(config.seed, DAYS_STREAM);
        Ok(Self {
            config,
            population,
            rng,
            next_day: 0,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn population(&self) -> &[PlayerProfile] {
        &self.population
    }

    /// Generates the next day regardless of `config.days`.
    pub fn generate_next(&mut self) -> DayBatch {
        let day = self.next_day;
        let events = sample_day(&self.config, &mut self.population, day, &mut self.rng)
            .expect("configuration validated at construction");
        self.next_day += 1;
        DayBatch { day, events }
    }

    pub(crate) fn generate_next_into<S: EventSink>(&mut self, sink: &mut S) {
        let day = self.next_day;
        sample_day_into(&self.config, &mut self.population, day, &mut self.rng, sink)
            .expect("configuration validated at construction");
        self.next_day += 1;
    }
}

impl Iterator for SyntheticStream {
    type Item = DayBatch;

    fn next(&mut self) -> Option<DayBatch> {
        (self.next_day < self.config.days).then(|| self.generate_next())
    }
}

/// Materializes the configured number of days.
pub fn generate_stream(config: &GeneratorConfig) -> Result<Vec<DayBatch>> {
    Ok(SyntheticStream::new(config.clone())?.collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GeneratorConfig {
        GeneratorConfig {
            n_players: 2_000,
            days: 3,
            matches_per_day: 300,
            ..Default::default()
        }
    }

    #[test]
    fn zero_sigma_gives_zero_intercepts() {
        let cfg = GeneratorConfig {
            sigma_u: 0.0,
            ..small_config()
        };
        let pop = sample_population(&cfg).unwrap();
        assert_eq!(pop.len(), 2_000);
        assert!(pop.iter().all(|p| p.latent_intercept == 0.0));
    }

    #[test]
    fn population_is_deterministic_and_in_range() {
        let cfg = small_config();
        let a = sample_population(&cfg).unwrap();
        let b = sample_population(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| (-736.0..=716.0).contains(&p.skill)));
        let c = sample_population(&GeneratorConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn population_skill_mean_is_accurate() {
        let cfg = GeneratorConfig {
            n_players: 1_000_000,
            ..Default::default()
        };
        let pop = sample_population(&cfg).unwrap();
        let mean = pop.iter().map(|p| p.skill).sum::<f64>() / pop.len() as f64;
        assert!((mean + 43.994).abs() < 1.0, "{mean}");
    }

    #[test]
    fn stream_is_deterministic() {
        let a = generate_stream(&small_config()).unwrap();
        let b = generate_stream(&small_config()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|d| d.events.len() == 300 * 12));
    }

    #[test]
    fn events_satisfy_record_invariants() {
        let stream = generate_stream(&small_config()).unwrap();
        for batch in &stream {
            let mut last_match = None;
            for e in &batch.events {
                e.covariates.validate().unwrap();
                assert_eq!(e.day, batch.day);
                assert!(e.covariates.avg_skill_diff_opponents >= 0.0);
                assert!(e.covariates.avg_skill_diff_teammates >= 0.0);
                if let Some(prev) = last_match {
                    assert!(e.match_id >= prev);
                }
                last_match = Some(e.match_id);
            }
        }
    }

    #[test]
    fn matches_have_distinct_players() {
        let stream = generate_stream(&GeneratorConfig {
            n_players: 30,
            matches_per_day: 200,
            days: 1,
            ..Default::default()
        })
        .unwrap();
        for m in stream[0].events.chunks(12) {
            let mut ids: Vec<_> = m.iter().map(|e| e.player_id).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), 12);
        }
    }

    #[test]
    fn undersized_population_rejected() {
        let cfg = GeneratorConfig {
            n_players: 11,
            ..small_config()
        };
        assert!(matches!(SyntheticStream::new(cfg), Err(Error::Config(_))));
        let mut pop = sample_population(&small_config()).unwrap();
        pop.truncate(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_day(&small_config(), &mut pop, 0, &mut rng).is_err());
    }

    #[test]
    fn toxicity_prob_at_origin_is_sigmoid_of_intercept() {
        let p = toxicity_prob(&[0.0; 8], 0.0, &DEFAULT_BETA, -3.0);
        assert_eq!(p, sigmoid(-3.0));
    }

    fn odds(p: f64) -> f64 {
        p / (1.0 - p)
    }

    #[test]
    fn party_presence_odds_ratio() {
        let mut x = [50.0, 80.0, 90.0, 0.0, 0.0, 2.0, 0.0, 1.0];
        let p0 = toxicity_prob(&x, 0.3, &DEFAULT_BETA, -8.0);
        x[3] = 1.0;
        let p1 = toxicity_prob(&x, 0.3, &DEFAULT_BETA, -8.0);
        assert!((odds(p1) / odds(p0) - 4.787).abs() < 1e-3);
    }

    #[test]
    fn report_against_odds_ratio() {
        let mut x = [0.0, 80.0, 90.0, 1.0, 0.4, 2.0, 1.0, 0.0];
        let p0 = toxicity_prob(&x, -0.2, &DEFAULT_BETA, -8.0);
        x[6] = 2.0;
        let p1 = toxicity_prob(&x, -0.2, &DEFAULT_BETA, -8.0);
        assert!((odds(p1) / odds(p0) - 1.285).abs() < 1e-3);
    }

    #[test]
    fn outcome_extremes_and_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert!((0..1000).all(|_| !sample_outcome(0.0, &mut rng)));
        assert!((0..1000).all(|_| sample_outcome(1.0, &mut rng)));
        let n = 1_000_000;
        let hits = (0..n).filter(|_| sample_outcome(0.3, &mut rng)).count();
        assert!((hits as f64 / n as f64 - 0.3).abs() < 0.0014);
    }
}
