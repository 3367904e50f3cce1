use super::{EventSink, GeneratorConfig, ObservationEvent, SyntheticStream};
use crate::error::{Error, Result};
use crate::synth::sigmoid;

/// Minimum size of the pilot stream used for intercept calibration.
pub const PILOT_MIN_EVENTS: usize = 1_000_000;

const PILOT_SEED_SALT: u64 = 0x5DEE_CE66_D1CE_4E5B;
const BRACKET: (f64, f64) = (-60.0, 60.0);
const ROUNDS: usize = 2;

/// Collects `eta - beta0` for every pilot event.
struct Offsets {
    beta0: f64,
    values: Vec<f64>,
}

impl EventSink for Offsets {
    fn event(&mut self, _event: ObservationEvent, eta: f64) {
        self.values.push(eta - self.beta0);
    }
}

fn mean_prob(beta0: f64, offsets: &[f64]) -> f64 {
    offsets.iter().map(|o| sigmoid(beta0 + o)).sum::<f64>() / offsets.len() as f64
}

/// Finds the logistic intercept whose expected toxic rate over a pilot
/// stream (at least [`PILOT_MIN_EVENTS`] events, seeded apart from the
/// configured seed) equals `target_rate`.
///
/// Because reports feed back from toxic events into covariates, the pilot is
/// regenerated once with the first estimate and the intercept re-solved.
pub fn calibrate_intercept(config: &GeneratorConfig, target_rate: f64) -> Result<f64> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::Calibration(format!(
            "target rate must lie in (0, 1), got {target_rate}"
        )));
    }
    config.validate()?;
    let per_day = config.events_per_day();
    let pilot_days = PILOT_MIN_EVENTS.div_ceil(per_day);
    let mut beta0 = config.beta0;
    for _ in 0..ROUNDS {
        let pilot = GeneratorConfig {
            beta0,
            seed: config.seed ^ PILOT_SEED_SALT,
            ..config.clone()
        };
        let mut stream = SyntheticStream::new(pilot)?;
        let mut offsets = Offsets {
            beta0,
            values: Vec::with_capacity(pilot_days * per_day),
        };
        for _ in 0..pilot_days {
            stream.generate_next_into(&mut offsets);
        }
        beta0 = bisect(&offsets.values, target_rate)?;
    }
    Ok(beta0)
}

fn bisect(offsets: &[f64], target: f64) -> Result<f64> {
    let (mut lo, mut hi) = BRACKET;
    let (f_lo, f_hi) = (mean_prob(lo, offsets), mean_prob(hi, offsets));
    if !(f_lo < target && target < f_hi) {
        return Err(Error::Calibration(format!(
            "target rate {target} not bracketed: mean probability is {f_lo:e} at beta0 = {lo} \
             and {f_hi:e} at beta0 = {hi}"
        )));
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid, offsets) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
