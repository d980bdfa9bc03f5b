//! Shared accountant vocabulary.

use crate::error::Result;
use crate::mechanism::MechanismSpec;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Edgeworth,
    Rdp,
    Prv,
    MonteCarlo,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Edgeworth => "EW",
            Method::Rdp => "RDP",
            Method::Prv => "PRV",
            Method::MonteCarlo => "MC",
        })
    }
}

/// An `(ε, δ)` guarantee for `m` compositions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantResult {
    pub epsilon: f64,
    pub delta: f64,
    pub method: Method,
    pub m: u64,
    /// Uniform bound on the error of `delta`, when the method provides one.
    pub error_envelope: Option<f64>,
}

/// An accountant for `m`-fold composition of one subsampled Gaussian step.
pub trait PrivacyAccountant: Send + Sync {
    fn method(&self) -> Method;

    /// `δ(ε)` after `m` compositions.
    fn delta(&self, spec: &MechanismSpec, m: u64, epsilon: f64) -> Result<AccountantResult>;

    /// Smallest `ε` (within the accountant's tolerance) with `δ(ε) ≤ delta`.
    fn epsilon(&self, spec: &MechanismSpec, m: u64, delta: f64) -> Result<AccountantResult>;
}

impl<A: PrivacyAccountant + ?Sized> PrivacyAccountant for &A {
    fn method(&self) -> Method {
        (**self).method()
    }

    fn delta(&self, spec: &MechanismSpec, m: u64, epsilon: f64) -> Result<AccountantResult> {
        (**self).delta(spec, m, epsilon)
    }

    fn epsilon(&self, spec: &MechanismSpec, m: u64, delta: f64) -> Result<AccountantResult> {
        (**self).epsilon(spec, m, delta)
    }
}

impl<A: PrivacyAccountant + ?Sized> PrivacyAccountant for Box<A> {
    fn method(&self) -> Method {
        (**self).method()
    }

    fn delta(&self, spec: &MechanismSpec, m: u64, epsilon: f64) -> Result<AccountantResult> {
        (**self).delta(spec, m, epsilon)
    }

    fn epsilon(&self, spec: &MechanismSpec, m: u64, delta: f64) -> Result<AccountantResult> {
        (**self).epsilon(spec, m, delta)
    }
}

/// Bisection tolerance on ε used by every accountant.
pub const EPSILON_TOLERANCE: f64 = 1e-6;

/// Largest ε the inversion will try before giving up.
pub const EPSILON_CAP: f64 = 1e4;

/// Inverts a nonincreasing-on-the-bracket `δ(ε)`: doubles `ε_hi` from 1 until
/// `δ(ε_hi) ≤ target`, then bisects until the bracket is narrower than
/// [`EPSILON_TOLERANCE`]. With `rel_tol`, bisection continues until
/// `target − δ(ε_hi) ≤ rel_tol·target` as well (for smooth `δ`). Returns the
/// upper end of the final bracket, so `δ(ε) ≤ target` holds at the returned
/// value. `None` when the cap is reached.
pub(crate) fn invert_delta<F>(mut delta_at: F, target: f64, rel_tol: Option<f64>) -> Result<Option<f64>>
where
    F: FnMut(f64) -> Result<f64>,
{
    if delta_at(0.0)? <= target {
        return Ok(Some(0.0));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while delta_at(hi)? > target {
        lo = hi;
        hi *= 2.0;
        if hi > EPSILON_CAP {
            return Ok(None);
        }
    }
    let mut delta_hi = delta_at(hi)?;
    let close_enough = |d: f64| rel_tol.is_none_or(|tol| target - d <= tol * target);
    while hi - lo > EPSILON_TOLERANCE || (!close_enough(delta_hi) && hi - lo > 1e-14 * hi) {
        let mid = 0.5 * (lo + hi);
        let d = delta_at(mid)?;
        if d > target {
            lo = mid;
        } else {
            hi = mid;
            delta_hi = d;
        }
    }
    Ok(Some(hi))
}
