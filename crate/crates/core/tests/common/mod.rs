//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use toxwatch::harness::{Episode, EpisodeLog, MonitoringPolicy, RunOptions};
use toxwatch::synth::DayBatch;

/// `(X'X + I)^-1 X'y` by explicit dense inversion.
pub fn ridge_oracle(rows: &[Vec<f64>], labels: &[u8], dim: usize) -> Vec<f64> {
    let x = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    let y = DVector::from_iterator(labels.len(), labels.iter().map(|&l| f64::from(l)));
    let g = x.transpose() * &x + DMatrix::identity(dim, dim);
    let inv = g.try_inverse().expect("ridge gram is positive definite");
    (inv * x.transpose() * y).iter().copied().collect()
}

/// Gram matrix `X'X + I`, row-major.
pub fn gram_oracle(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let x = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    let g = x.transpose() * &x + DMatrix::identity(dim, dim);
    let mut out = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            out.push(g[(i, j)]);
        }
    }
    out
}

/// `sqrt(x' G^-1 x)` with an explicit inverse.
pub fn se_oracle(gram: &[f64], dim: usize, x: &[f64]) -> f64 {
    let g = DMatrix::from_row_slice(dim, dim, gram);
    let inv = g.try_inverse().expect("invertible");
    let v = DVector::from_column_slice(x);
    (v.transpose() * inv * &v)[(0, 0)].sqrt()
}

pub struct LogitFit {
    /// Intercept first, then one coefficient per column.
    pub coef: Vec<f64>,
    pub std_err: Vec<f64>,
    pub iterations: usize,
}

/// Unpenalised logistic regression with intercept by iteratively
/// reweighted least squares. `row(i, buf)` fills the covariates of row `i`.
pub fn logistic_irls(
    n: usize,
    p: usize,
    mut row: impl FnMut(usize, &mut [f64]),
    label: impl Fn(usize) -> bool,
    start_intercept: f64,
) -> LogitFit {
    let k = p + 1;
    let mut beta = DVector::<f64>::zeros(k);
    beta[0] = start_intercept;
    let mut buf = vec![0.0; k];
    let mut info = DMatrix::<f64>::zeros(k, k);
    for it in 1..=50 {
        info.fill(0.0);
        let mut score = DVector::<f64>::zeros(k);
        // Accumulate the upper triangle only; symmetrised below.
        let mut upper = vec![0.0; k * k];
        for i in 0..n {
            buf[0] = 1.0;
            row(i, &mut buf[1..]);
            let eta: f64 = (0..k).map(|j| buf[j] * beta[j]).sum();
            let mu = 1.0 / (1.0 + (-eta).exp());
            let w = mu * (1.0 - mu);
            let resid = f64::from(u8::from(label(i))) - mu;
            for a in 0..k {
                let wa = w * buf[a];
                score[a] += resid * buf[a];
                for b in a..k {
                    upper[a * k + b] += wa * buf[b];
                }
            }
        }
        for a in 0..k {
            for b in a..k {
                info[(a, b)] = upper[a * k + b];
                info[(b, a)] = upper[a * k + b];
            }
        }
        let chol = info.clone().cholesky().expect("Fisher information is positive definite");
        let step = chol.solve(&score);
        beta += &step;
        let rel = step.amax() / beta.amax().max(1.0);
        if rel < 1e-10 {
            let cov = chol.inverse();
            return LogitFit {
                coef: beta.iter().copied().collect(),
                std_err: (0..k).map(|j| cov[(j, j)].sqrt()).collect(),
                iterations: it,
            };
        }
    }
    panic!("IRLS did not converge");
}

/// Runs a policy day by day and keeps every decision.
pub fn run_with_decisions(
    policy: &mut dyn MonitoringPolicy,
    stream: &[DayBatch],
    options: &RunOptions,
) -> (Vec<Vec<bool>>, EpisodeLog) {
    let mut ep = Episode::new(policy, options.clone());
    let decisions = stream.iter().map(|b| ep.step(b).unwrap()).collect();
    (decisions, ep.finish())
}

/// Flips the label of every observation the policy did not monitor.
pub fn poison_unmonitored(stream: &[DayBatch], decisions: &[Vec<bool>]) -> Vec<DayBatch> {
    stream
        .iter()
        .zip(decisions)
        .map(|(b, d)| {
            let mut b = b.clone();
            for (e, &m) in b.events.iter_mut().zip(d) {
                if !m {
                    e.toxic = !e.toxic;
                }
            }
            b
        })
        .collect()
}

/// Outcome of running a policy on a stream and on its poisoned twin.
pub struct SentinelOutcome {
    pub decisions_equal: bool,
    pub monitored_accounting_equal: bool,
    pub poisoned_labels: u64,
}

pub fn sentinel_check(
    mut make: impl FnMut() -> Box<dyn MonitoringPolicy>,
    stream: &[DayBatch],
    options: &RunOptions,
) -> SentinelOutcome {
    let (clean_dec, clean_log) = run_with_decisions(make().as_mut(), stream, options);
    let poisoned = poison_unmonitored(stream, &clean_dec);
    let (dirty_dec, dirty_log) = run_with_decisions(make().as_mut(), &poisoned, options);
    let accounting = |l: &EpisodeLog| -> Vec<(u64, u64, u64)> {
        l.days.iter().map(|d| (d.observations, d.monitored, d.toxic_detected)).collect()
    };
    SentinelOutcome {
        decisions_equal: clean_dec == dirty_dec,
        monitored_accounting_equal: accounting(&clean_log) == accounting(&dirty_log),
        poisoned_labels: clean_dec.iter().flatten().filter(|m| !**m).count() as u64,
    }
}
