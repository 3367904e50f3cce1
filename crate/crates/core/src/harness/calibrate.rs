use super::{run_episode, DetEtcPolicy, LinUcbPolicy, MonitoringPolicy, ProbEtcPolicy, RunOptions};
use crate::error::{Error, Result};
use crate::features::FeatureStats;
use crate::linucb::UcbParams;
use crate::synth::DayBatch;

const MAX_ITERATIONS: usize = 60;
/// Search interval for the LinUCB monitoring cost, bisected in log space.
const COST_RANGE: (f64, f64) = (1e-9, 1.0 - 1e-9);
const MAX_EXPLORATION_MATCHES: u64 = 1 << 20;

/// A policy with one free scalar knob.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyFamily {
    /// Knob is the monitoring cost c; the exploration factor stays fixed.
    LinUcb {
        exploration_factor: f64,
        stats: Option<FeatureStats>,
    },
    /// Knob is the exploration probability.
    ProbEtc,
    /// Knob is the number of exploration matches.
    DetEtc,
}

impl PolicyFamily {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyFamily::LinUcb { .. } => "linucb",
            PolicyFamily::ProbEtc => "prob_etc",
            PolicyFamily::DetEtc => "det_etc",
        }
    }

    /// A fresh policy with the knob set to `param`.
    pub fn build(&self, param: f64) -> Result<Box<dyn MonitoringPolicy>> {
        Ok(match *self {
            PolicyFamily::LinUcb {
                exploration_factor,
                stats,
            } => Box::new(LinUcbPolicy::new(UcbParams::new(exploration_factor, param)?, stats)),
            PolicyFamily::ProbEtc => Box::new(ProbEtcPolicy::new(param)?),
            PolicyFamily::DetEtc => {
                if !(param >= 0.0 && param.fract() == 0.0) {
                    return Err(Error::Config(format!(
                        "exploration matches must be a non-negative integer, got {param}"
                    )));
                }
                Box::new(DetEtcPolicy::new(param as u64))
            }
        })
    }

    /// Monitored share of one episode at knob value `param`.
    pub fn share(&self, param: f64, stream: &[DayBatch], days: u32, options: &RunOptions) -> Result<f64> {
        let mut policy = self.build(param)?;
        Ok(run_episode(policy.as_mut(), stream, days, options)?.share_monitored())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub param: f64,
    pub realized_share: f64,
    pub evaluations: usize,
    /// False when the closest value found is still outside the tolerance.
    pub within_tolerance: bool,
}

struct Search<'a> {
    family: &'a PolicyFamily,
    stream: &'a [DayBatch],
    days: u32,
    options: &'a RunOptions,
    target: f64,
    tolerance: f64,
    evaluations: usize,
    best: Option<(f64, f64)>,
}

impl Search<'_> {
    fn eval(&mut self, param: f64) -> Result<f64> {
        let share = self.family.share(param, self.stream, self.days, self.options)?;
        self.evaluations += 1;
        log::debug!("{} param {param:e} -> share {share:.6}", self.family.name());
        let better = match self.best {
            None => true,
            Some((_, s)) => (share - self.target).abs() < (s - self.target).abs(),
        };
        if better {
            self.best = Some((param, share));
        }
        Ok(share)
    }

    fn hit(&self, share: f64) -> bool {
        (share - self.target).abs() <= self.tolerance
    }

    fn finish(self) -> Calibration {
        let (param, realized_share) = self.best.expect("at least one evaluation");
        let within_tolerance = (realized_share - self.target).abs() <= self.tolerance;
        if !within_tolerance && !matches!(self.family, PolicyFamily::DetEtc) {
            log::warn!(
                "{}: closest share {realized_share:.6} misses target {} by more than {}",
                self.family.name(),
                self.target,
                self.tolerance
            );
        }
        Calibration {
            param,
            realized_share,
            evaluations: self.evaluations,
            within_tolerance,
        }
    }

    fn bracket_error(&self, lo: (f64, f64), hi: (f64, f64)) -> Error {
        Error::Calibration(format!(
            "{}: target share {} not bracketed; knob {:e} gives share {:.6}, knob {:e} gives share {:.6}",
            self.family.name(),
            self.target,
            lo.0,
            lo.1,
            hi.0,
            hi.1
        ))
    }
}

/// Finds the knob value whose episode share on `stream` is closest to
/// `target`, stopping once it is within `tolerance`.
///
/// Share is non-increasing in the LinUCB cost and non-decreasing in the
/// ETC knobs. Deterministic ETC has discrete shares, so the closest integer
/// is returned even when no integer lands inside the tolerance.
pub fn calibrate_to_share(
    family: &PolicyFamily,
    target: f64,
    tolerance: f64,
    stream: &[DayBatch],
    days: u32,
    options: &RunOptions,
) -> Result<Calibration> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Calibration(format!("target share must lie in [0, 1], got {target}")));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::Calibration(format!("tolerance must be non-negative, got {tolerance}")));
    }
    let mut s = Search {
        family,
        stream,
        days,
        options,
        target,
        tolerance,
        evaluations: 0,
        best: None,
    };
    match family {
        PolicyFamily::LinUcb { .. } => {
            // Large cost -> small share.
            let (lo, hi) = COST_RANGE;
            let share_lo = s.eval(lo)?;
            if s.hit(share_lo) {
                return Ok(s.finish());
            }
            let share_hi = s.eval(hi)?;
            if s.hit(share_hi) {
                return Ok(s.finish());
            }
            if !(share_hi < target && target < share_lo) {
                return Err(s.bracket_error((lo, share_lo), (hi, share_hi)));
            }
            let (mut a, mut b) = (lo.ln(), hi.ln());
            for _ in 0..MAX_ITERATIONS {
                let mid = 0.5 * (a + b);
                let share = s.eval(mid.exp())?;
                if s.hit(share) {
                    break;
                }
                if share > target {
                    a = mid;
                } else {
                    b = mid;
                }
            }
        }
        PolicyFamily::ProbEtc => {
            let share_lo = s.eval(0.0)?;
            if s.hit(share_lo) {
                return Ok(s.finish());
            }
            let share_hi = s.eval(1.0)?;
            if s.hit(share_hi) {
                return Ok(s.finish());
            }
            if !(share_lo < target && target < share_hi) {
                return Err(s.bracket_error((0.0, share_lo), (1.0, share_hi)));
            }
            let (mut a, mut b) = (0.0, 1.0);
            for _ in 0..MAX_ITERATIONS {
                let mid = 0.5 * (a + b);
                let share = s.eval(mid)?;
                if s.hit(share) {
                    break;
                }
                if share < target {
                    a = mid;
                } else {
                    b = mid;
                }
            }
        }
        PolicyFamily::DetEtc => {
            let share_zero = s.eval(0.0)?;
            if share_zero >= target {
                return Ok(s.finish());
            }
            // Grow until the share reaches the target, then bisect on integers
            // for the smallest m that does.
            let mut lo = 0u64;
            let mut hi = 1u64;
            loop {
                let share = s.eval(hi as f64)?;
                if share >= target {
                    break;
                }
                if hi >= MAX_EXPLORATION_MATCHES {
                    return Err(s.bracket_error((0.0, share_zero), (hi as f64, share)));
                }
                lo = hi;
                hi *= 2;
            }
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if s.eval(mid as f64)? >= target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        }
    }
    Ok(s.finish())
}
