//! Noise-multiplier calibration: starting from a large σ, step down by `r`
//! while the accountant's ε stays within the target; on overshoot keep the
//! last admissible σ and shrink the step by a constant factor.

use crate::accountant::PrivacyAccountant;
use crate::error::{AccountingError, Result};
use crate::mechanism::MechanismSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Starting noise multiplier.
    pub sigma_start: f64,
    /// Initial decrement.
    pub initial_step: f64,
    /// Step divisor applied on overshoot.
    pub shrink: f64,
    /// Stop once the step falls below this value.
    pub min_step: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { sigma_start: 10.0, initial_step: 0.5, shrink: 10.0, min_step: 1e-4 }
    }
}

/// Calibrated noise multiplier and the ε it achieves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub sigma: f64,
    pub epsilon: f64,
    /// Step size at termination; `σ − shrink·final_step` overshoots the target.
    pub final_step: f64,
    pub evaluations: usize,
}

/// Runs the step-down loop against an arbitrary `ε(σ)` evaluator. Evaluation
/// errors at a candidate σ count as overshoot; an error at the starting σ is
/// returned.
pub fn calibrate_with<F>(mut epsilon_of_sigma: F, epsilon_target: f64, options: &CalibrationOptions) -> Result<Calibration>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(epsilon_target > 0.0) {
        return Err(AccountingError::InvalidArgument(format!("epsilon target {epsilon_target} must be positive")));
    }
    let mut sigma = options.sigma_start;
    let mut epsilon = epsilon_of_sigma(sigma)?;
    let mut evaluations = 1;
    if epsilon > epsilon_target {
        return Err(AccountingError::TargetUnreachable {
            target: epsilon_target,
            sigma_start: sigma,
            epsilon_at_start: epsilon,
        });
    }
    let mut step = options.initial_step;
    while step >= options.min_step {
        let candidate = sigma - step;
        let accepted = if candidate > 0.0 {
            evaluations += 1;
            match epsilon_of_sigma(candidate) {
                Ok(e) if e <= epsilon_target => Some(e),
                _ => None,
            }
        } else {
            None
        };
        match accepted {
            Some(e) => {
                sigma = candidate;
                epsilon = e;
            }
            None => step /= options.shrink,
        }
    }
    Ok(Calibration { sigma, epsilon, final_step: step, evaluations })
}

/// Smallest σ (to the loop's resolution) whose `m`-fold composition meets
/// `(epsilon_target, delta)` under `accountant`.
pub fn calibrate_sigma<A: PrivacyAccountant + ?Sized>(
    accountant: &A,
    epsilon_target: f64,
    delta: f64,
    q: f64,
    m: u64,
    options: &CalibrationOptions,
) -> Result<Calibration> {
    calibrate_with(
        |sigma| {
            let spec = MechanismSpec::unit(q, sigma)?;
            Ok(accountant.epsilon(&spec, m, delta)?.epsilon)
        },
        epsilon_target,
        options,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edgeworth::EdgeworthAccountant;
    use crate::rdp::RdpAccountant;

    #[test]
    fn finds_threshold_of_monotone_evaluator() {
        // ε(σ) = 2/σ, target 4 → threshold σ* = 0.5
        let c = calibrate_with(|s| Ok(2.0 / s), 4.0, &CalibrationOptions::default()).unwrap();
        assert!(c.epsilon <= 4.0);
        assert!(c.sigma >= 0.5 && c.sigma - 0.5 < 5e-4 + 1e-12, "{}", c.sigma);
        assert!(2.0 / (c.sigma - 10.0 * c.final_step) > 4.0);
        assert!(c.final_step < 1e-4);
    }

    #[test]
    fn unreachable_target() {
        let err = calibrate_with(|s| Ok(100.0 / s), 1.0, &CalibrationOptions::default()).unwrap_err();
        assert!(matches!(err, AccountingError::TargetUnreachable { .. }));
    }

    #[test]
    fn evaluator_failures_count_as_overshoot() {
        let c = calibrate_with(
            |s| if s < 1.0 { Err(AccountingError::NoFiniteEpsilon { delta: 1e-5, cap: 1e4 }) } else { Ok(0.1) },
            1.0,
            &CalibrationOptions::default(),
        )
        .unwrap();
        assert!((c.sigma - 1.0).abs() < 1e-9);
    }

    #[test]
    fn edgeworth_needs_less_noise_than_rdp() {
        let q = 2000.0 / 393_000.0;
        let opts = CalibrationOptions::default();
        let ew = calibrate_sigma(&EdgeworthAccountant::default(), 8.0, 1e-6, q, 2000, &opts).unwrap();
        let rdp = calibrate_sigma(&RdpAccountant::default(), 8.0, 1e-6, q, 2000, &opts).unwrap();
        assert!(ew.epsilon <= 8.0 && rdp.epsilon <= 8.0);
        assert!(ew.sigma < rdp.sigma, "{} vs {}", ew.sigma, rdp.sigma);
    }
}
