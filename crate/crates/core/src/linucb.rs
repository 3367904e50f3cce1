//! LinUCB monitoring model.
//!
//! The model keeps the ridge sufficient statistics `G = X'X + I` and `r = X'y`
//! over all monitored observations seen so far. Scoring an observation with
//! features `x` gives
//!
//! ```text
//! mean  = x' theta_hat,        theta_hat = G^{-1} r
//! se    = sqrt(x' G^{-1} x)
//! ucb   = mean + delta * se
//! ```
//!
//! and the observation is monitored iff `ucb > c`. The factorization of `G`
//! is refreshed once per batch update and shared read-only by all scoring
//! calls until the next update.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use log::warn;

use crate::error::{Error, Result};
use crate::features::{FeatureStats, FEATURE_DIM, N_COVARIATES};
use crate::linalg::{dot, mat_vec, norm, Cholesky};

/// Relative residual accepted for the cached ridge solution.
pub const RIDGE_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcbParams {
    exploration_factor: f64,
    monitoring_cost: f64,
}

impl UcbParams {
    pub fn new(exploration_factor: f64, monitoring_cost: f64) -> Result<Self> {
        if !(exploration_factor.is_finite() && exploration_factor >= 0.0) {
            return Err(Error::Config(format!(
                "exploration factor must be finite and >= 0, got {exploration_factor}"
            )));
        }
        if !(monitoring_cost > 0.0 && monitoring_cost < 1.0) {
            return Err(Error::Config(format!(
                "monitoring cost must lie in (0, 1), got {monitoring_cost}"
            )));
        }
        Ok(Self {
            exploration_factor,
            monitoring_cost,
        })
    }

    pub fn exploration_factor(&self) -> f64 {
        self.exploration_factor
    }

    pub fn monitoring_cost(&self) -> f64 {
        self.monitoring_cost
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub monitor: bool,
    pub mean_score: f64,
    pub standard_error: f64,
    pub ucb_score: f64,
}

/// Ridge sufficient statistics plus the cached solution and factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    dim: usize,
    gram: Vec<f64>,
    response: Vec<f64>,
    theta_hat: Vec<f64>,
    observation_count: u64,
    factor: Cholesky,
}

impl ModelState {
    /// Fresh model: `G = I`, `r = 0`, `theta_hat = 0`.
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "model dimension must be positive");
        let mut gram = vec![0.0; dim * dim];
        for i in 0..dim {
            gram[i * dim + i] = 1.0;
        }
        Self {
            dim,
            gram,
            response: vec![0.0; dim],
            theta_hat: vec![0.0; dim],
            observation_count: 0,
            factor: Cholesky::identity(dim),
        }
    }

    /// Rebuilds a model from stored sufficient statistics and refits it.
    pub fn from_parts(
        dim: usize,
        gram: Vec<f64>,
        response: Vec<f64>,
        observation_count: u64,
    ) -> Result<Self> {
        if gram.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: gram.len(),
            });
        }
        if response.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: response.len(),
            });
        }
        let mut state = Self {
            dim,
            gram,
            response,
            theta_hat: vec![0.0; dim],
            observation_count,
            factor: Cholesky::identity(dim),
        };
        state.ridge_fit()?;
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn theta_hat(&self) -> &[f64] {
        &self.theta_hat
    }

    pub fn observation_count(&self) -> u64 {
        self.observation_count
    }

    /// Solves `G theta = r` through a Cholesky factorization, caches both the
    /// factor and the solution, and returns the solution.
    pub fn ridge_fit(&mut self) -> Result<&[f64]> {
        if let Some(bad) = self
            .gram
            .iter()
            .chain(&self.response)
            .find(|v| !v.is_finite())
        {
            return Err(Error::Solver(format!(
                "non-finite entry {bad} in sufficient statistics"
            )));
        }
        let factor = Cholesky::factor(&self.gram, self.dim)?;
        let mut theta = factor.solve(&self.response);
        let mut residual = self.relative_residual(&theta);
        // Iterative refinement for the rare badly scaled case.
        let mut rounds = 0;
        while residual > RIDGE_RESIDUAL_TOL && rounds < 3 {
            let gt = mat_vec(&self.gram, self.dim, &theta);
            let diff: Vec<f64> = self.response.iter().zip(&gt).map(|(r, g)| r - g).collect();
            let correction = factor.solve(&diff);
            for (t, c) in theta.iter_mut().zip(&correction) {
                *t += c;
            }
            residual = self.relative_residual(&theta);
            rounds += 1;
        }
        if residual > RIDGE_RESIDUAL_TOL {
            warn!("ridge solution relative residual {residual:e} exceeds {RIDGE_RESIDUAL_TOL:e}");
        }
        self.factor = factor;
        self.theta_hat = theta;
        Ok(&self.theta_hat)
    }

    /// `||G theta - r|| / max(||r||, 1)`.
    pub fn relative_residual(&self, theta: &[f64]) -> f64 {
        let gt = mat_vec(&self.gram, self.dim, theta);
        let diff: Vec<f64> = gt.iter().zip(&self.response).map(|(g, r)| g - r).collect();
        norm(&diff) / norm(&self.response).max(1.0)
    }

    /// Scores one feature vector against the cached fit.
    pub fn ucb_score(&self, x: &[f64], params: &UcbParams) -> Result<Decision> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite feature value {v}")));
        }
        let mean_score = dot(x, &self.theta_hat);
        let standard_error = self.factor.inverse_quadratic_form(x).max(0.0).sqrt();
        let ucb_score = mean_score + params.exploration_factor * standard_error;
        Ok(Decision {
            monitor: ucb_score > params.monitoring_cost,
            mean_score,
            standard_error,
            ucb_score,
        })
    }

    /// Adds a batch of monitored observations and refits.
    ///
    /// The batch is validated in full before any statistic changes, and is
    /// accumulated in the given order.
    pub fn ingest_batch<X: AsRef<[f64]>>(&mut self, batch: &[(X, u8)]) -> Result<()> {
        for (x, label) in batch {
            let x = x.as_ref();
            if x.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: x.len(),
                });
            }
            if *label > 1 {
                return Err(Error::InvalidLabel(*label));
            }
            if let Some(v) = x.iter().find(|v| !v.is_finite()) {
                return Err(Error::Contract(format!("non-finite feature value {v}")));
            }
        }
        if batch.is_empty() {
            return Ok(());
        }
        let d = self.dim;
        for (x, label) in batch {
            let x = x.as_ref();
            for i in 0..d {
                let xi = x[i];
                for j in i..d {
                    self.gram[i * d + j] += xi * x[j];
                }
                if *label == 1 {
                    self.response[i] += xi;
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                self.gram[i * d + j] = self.gram[j * d + i];
            }
        }
        self.observation_count += batch.len() as u64;
        self.ridge_fit()?;
        Ok(())
    }
}

/// Everything needed to resume scoring: statistics, standardization and
/// decision parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: ModelState,
    pub stats: FeatureStats,
    pub params: UcbParams,
}

const MODEL_MAGIC: &str = "toxwatch-model 1";

impl ModelCheckpoint {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        writeln!(s, "{MODEL_MAGIC}").unwrap();
        writeln!(s, "dim {}", m.dim).unwrap();
        writeln!(s, "observation_count {}", m.observation_count).unwrap();
        for i in 0..m.dim {
            writeln!(s, "gram {}", join(&m.gram[i * m.dim..(i + 1) * m.dim])).unwrap();
        }
        writeln!(s, "response {}", join(&m.response)).unwrap();
        writeln!(s, "feature_mean {}", join(self.stats.mean())).unwrap();
        writeln!(s, "feature_sd {}", join(self.stats.sd())).unwrap();
        writeln!(s, "exploration_factor {:?}", self.params.exploration_factor).unwrap();
        writeln!(s, "monitoring_cost {:?}", self.params.monitoring_cost).unwrap();
        s
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let magic = lines.next().transpose()?.unwrap_or_default();
        if magic.trim() != MODEL_MAGIC {
            return Err(Error::Checkpoint(format!("unexpected header `{magic}`")));
        }
        let mut dim = None;
        let mut count = None;
        let mut gram = Vec::new();
        let mut response = None;
        let mut mean = None;
        let mut sd = None;
        let mut delta = None;
        let mut cost = None;
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "dim" => dim = Some(parse_scalar::<usize>(key, rest)?),
                "observation_count" => count = Some(parse_scalar::<u64>(key, rest)?),
                "gram" => gram.extend(parse_floats(key, rest)?),
                "response" => response = Some(parse_floats(key, rest)?),
                "feature_mean" => mean = Some(parse_fixed::<N_COVARIATES>(key, rest)?),
                "feature_sd" => sd = Some(parse_fixed::<N_COVARIATES>(key, rest)?),
                "exploration_factor" => delta = Some(parse_scalar::<f64>(key, rest)?),
                "monitoring_cost" => cost = Some(parse_scalar::<f64>(key, rest)?),
                other => return Err(Error::Checkpoint(format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Checkpoint(format!("missing `{k}`"));
        let dim = dim.ok_or_else(|| missing("dim"))?;
        if dim != FEATURE_DIM {
            return Err(Error::Checkpoint(format!(
                "checkpoint dim {dim} does not match feature dimension {FEATURE_DIM}"
            )));
        }
        let model = ModelState::from_parts(
            dim,
            gram,
            response.ok_or_else(|| missing("response"))?,
            count.ok_or_else(|| missing("observation_count"))?,
        )?;
        let stats = FeatureStats::new(
            mean.ok_or_else(|| missing("feature_mean"))?,
            sd.ok_or_else(|| missing("feature_sd"))?,
        )?;
        let params = UcbParams::new(
            delta.ok_or_else(|| missing("exploration_factor"))?,
            cost.ok_or_else(|| missing("monitoring_cost"))?,
        )?;
        Ok(Self {
            model,
            stats,
            params,
        })
    }
}

fn parse_scalar<T: std::str::FromStr>(key: &str, text: &str) -> Result<T> {
    text.trim()
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad value `{text}` for `{key}`")))
}

fn parse_floats(key: &str, text: &str) -> Result<Vec<f64>> {
    text.split_whitespace().map(|t| parse_scalar(key, t)).collect()
}

fn parse_fixed<const N: usize>(key: &str, text: &str) -> Result<[f64; N]> {
    let v = parse_floats(key, text)?;
    v.try_into()
        .map_err(|v: Vec<f64>| Error::Checkpoint(format!("`{key}` needs {N} values, got {}", v.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn empty_model_fits_zero() {
        let mut m = ModelState::new(9);
        assert_eq!(m.ridge_fit().unwrap(), &[0.0; 9]);
        assert_eq!(m.observation_count(), 0);
    }

    #[test]
    fn single_basis_observation_is_shrunk_by_half() {
        let mut m = ModelState::new(9);
        m.ingest_batch(&[(e(9, 0), 1)]).unwrap();
        let theta = m.theta_hat();
        assert!((theta[0] - 0.5).abs() < 1e-15);
        assert!(theta[1..].iter().all(|&t| t == 0.0));
    }

    #[test]
    fn fresh_model_unit_vector_scores_one() {
        let m = ModelState::new(9);
        let params = UcbParams::new(1.0, 0.5).unwrap();
        let x: Vec<f64> = (0..9).map(|_| 1.0 / 3.0).collect();
        let d = m.ucb_score(&x, &params).unwrap();
        assert_eq!(d.mean_score, 0.0);
        assert!((d.standard_error - 1.0).abs() < 1e-15);
        assert!((d.ucb_score - 1.0).abs() < 1e-15);
        assert!(d.monitor);
    }

    #[test]
    fn zero_exploration_scores_mean_only() {
        let mut m = ModelState::new(3);
        m.ingest_batch(&[(vec![1.0, 2.0, 1.0], 1), (vec![0.5, -1.0, 1.0], 0)])
            .unwrap();
        let params = UcbParams::new(0.0, 0.1).unwrap();
        let d = m.ucb_score(&[0.3, 0.2, 1.0], &params).unwrap();
        assert_eq!(d.ucb_score, d.mean_score);
    }

    #[test]
    fn hand_computed_score_after_one_update() {
        let mut m = ModelState::new(9);
        m.ingest_batch(&[(e(9, 0), 1)]).unwrap();
        let d = m
            .ucb_score(&e(9, 0), &UcbParams::new(1.0, 0.5).unwrap())
            .unwrap();
        assert!((d.mean_score - 0.5).abs() < 1e-15);
        assert!((d.standard_error - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((d.ucb_score - 1.207_106_781_186_547_5).abs() < 1e-12);
    }

    #[test]
    fn tie_at_cost_is_not_monitored() {
        let m = ModelState::new(1);
        // ucb = 0.5 * 1 = 0.5 == c
        let d = m.ucb_score(&[1.0], &UcbParams::new(0.5, 0.5).unwrap()).unwrap();
        assert_eq!(d.ucb_score, 0.5);
        assert!(!d.monitor);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = ModelState::new(9);
        let err = m
            .ucb_score(&[1.0; 8], &UcbParams::new(1.0, 0.5).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 9, found: 8 }));
    }

    #[test]
    fn empty_batch_is_a_no_op() {
        let mut m = ModelState::new(4);
        m.ingest_batch(&[(vec![1.0, 0.0, 2.0, 1.0], 1)]).unwrap();
        let before = m.clone();
        m.ingest_batch::<Vec<f64>>(&[]).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn bad_batch_is_rejected_atomically() {
        let mut m = ModelState::new(2);
        let before = m.clone();
        let err = m
            .ingest_batch(&[(vec![1.0, 0.0], 1), (vec![0.0, 1.0], 2)])
            .unwrap_err();
        assert!(matches!(err, Error::InvalidLabel(2)));
        assert_eq!(m, before);
        let err = m
            .ingest_batch(&[(vec![1.0, 0.0], 1), (vec![0.0, 1.0, 3.0], 0)])
            .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        assert_eq!(m, before);
    }

    #[test]
    fn batch_equals_singletons_exactly() {
        let rows: Vec<(Vec<f64>, u8)> = (0..25)
            .map(|i| {
                let t = i as f64;
                (vec![t.sin(), (0.3 * t).cos(), 1.0], (i % 3 == 0) as u8)
            })
            .collect();
        let mut one = ModelState::new(3);
        one.ingest_batch(&rows).unwrap();
        let mut many = ModelState::new(3);
        for row in &rows {
            many.ingest_batch(std::slice::from_ref(row)).unwrap();
        }
        for (a, b) in one.gram().iter().zip(many.gram()) {
            assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in one.response().iter().zip(many.response()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn params_validated() {
        assert!(UcbParams::new(-0.1, 0.5).is_err());
        assert!(UcbParams::new(1.0, 0.0).is_err());
        assert!(UcbParams::new(1.0, 1.0).is_err());
        assert!(UcbParams::new(0.0, 0.999).is_ok());
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut model = ModelState::new(FEATURE_DIM);
        let rows: Vec<(Vec<f64>, u8)> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.37;
                let mut x: Vec<f64> = (0..FEATURE_DIM).map(|k| (t * (k + 1) as f64).sin() / 3.0).collect();
                x[FEATURE_DIM - 1] = 1.0;
                (x, (i % 7 == 0) as u8)
            })
            .collect();
        model.ingest_batch(&rows).unwrap();
        let ckpt = ModelCheckpoint {
            model,
            stats: FeatureStats::table_defaults(),
            params: UcbParams::new(1.0, 0.012_345_678_901_234_5).unwrap(),
        };
        let text = ckpt.to_text();
        let back = ModelCheckpoint::read_from(text.as_bytes()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(ModelCheckpoint::read_from("nope\n".as_bytes()).is_err());
        let text = format!("{MODEL_MAGIC}\ndim 9\n");
        assert!(matches!(
            ModelCheckpoint::read_from(text.as_bytes()),
            Err(Error::Checkpoint(_))
        ));
    }
}
