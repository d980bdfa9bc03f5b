//! Rényi-DP accountant for the Poisson-subsampled Gaussian mechanism
//! (integer orders) with the classic `ε = RDP(α) + log(1/δ)/(α − 1)`
//! conversion.

use crate::accountant::{AccountantResult, Method, PrivacyAccountant};
use crate::error::{AccountingError, Result};
use crate::mechanism::MechanismSpec;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// `{2, …, 64} ∪ {128, 256}`.
pub fn default_orders() -> Vec<u32> {
    (2..=64).chain([128, 256]).collect()
}

/// RDP values of one mechanism step at each order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<u32>,
    pub values: Vec<f64>,
}

impl RdpCurve {
    pub fn new(q: f64, sigma: f64, orders: &[u32]) -> Result<Self> {
        let values = orders.iter().map(|&a| rdp_sampled_gaussian(q, sigma, a)).collect::<Result<Vec<_>>>()?;
        Ok(Self { orders: orders.to_vec(), values })
    }
}

fn ln_binomial(n: u32, k: u32) -> f64 {
    ln_gamma(f64::from(n) + 1.0) - ln_gamma(f64::from(k) + 1.0) - ln_gamma(f64::from(n - k) + 1.0)
}

/// Order-`alpha` RDP of one subsampled Gaussian step:
/// `(1/(α−1))·log Σ_{j=0..α} C(α,j)(1−q)^{α−j} q^j exp(j(j−1)/(2σ²))`.
pub fn rdp_sampled_gaussian(q: f64, sigma: f64, alpha: u32) -> Result<f64> {
    if alpha < 2 {
        return Err(AccountingError::InvalidArgument(format!("RDP order {alpha} must be at least 2")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(AccountingError::InvalidArgument(format!("sampling rate q={q} must lie in (0, 1]")));
    }
    if !(sigma > 0.0) {
        return Err(AccountingError::InvalidArgument(format!("sigma={sigma} must be positive")));
    }
    let a = f64::from(alpha);
    let s2 = sigma * sigma;
    if q == 1.0 {
        return Ok(a / (2.0 * s2));
    }
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let terms: Vec<f64> = (0..=alpha)
        .map(|j| {
            let jf = f64::from(j);
            ln_binomial(alpha, j) + (a - jf) * l1q + jf * lq + jf * (jf - 1.0) / (2.0 * s2)
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(AccountingError::OrderTooLarge { alpha });
    }
    let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    let value = lse / (a - 1.0);
    if !value.is_finite() {
        return Err(AccountingError::OrderTooLarge { alpha });
    }
    // The sum is ≥ 1 analytically; rounding can leave a tiny negative.
    Ok(value.max(0.0))
}

/// RDP accountant result with the optimal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpEpsilon {
    pub result: AccountantResult,
    pub best_order: u32,
}

/// `ε = min_α [m·RDP(α) + log(1/δ)/(α − 1)]`.
pub fn rdp_epsilon(q: f64, sigma: f64, m: u64, delta: f64, orders: &[u32]) -> Result<RdpEpsilon> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(AccountingError::InvalidArgument(format!("delta={delta} must lie in (0, 1)")));
    }
    if orders.is_empty() {
        return Err(AccountingError::InvalidArgument("no RDP orders supplied".into()));
    }
    let result = |epsilon| AccountantResult { epsilon, delta, method: Method::Rdp, m, error_envelope: None };
    if q == 0.0 {
        return Ok(RdpEpsilon { result: result(0.0), best_order: orders[0] });
    }
    let log_inv_delta = -delta.ln();
    let mut best: Option<(f64, u32)> = None;
    for &alpha in orders {
        let rdp = match rdp_sampled_gaussian(q, sigma, alpha) {
            Ok(v) => v,
            Err(AccountingError::OrderTooLarge { .. }) => continue,
            Err(e) => return Err(e),
        };
        let eps = m as f64 * rdp + log_inv_delta / (f64::from(alpha) - 1.0);
        if best.is_none_or(|(b, _)| eps < b) {
            best = Some((eps, alpha));
        }
    }
    let (eps, alpha) = best.ok_or(AccountingError::OrderTooLarge { alpha: orders[orders.len() - 1] })?;
    Ok(RdpEpsilon { result: result(eps.max(0.0)), best_order: alpha })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpAccountant {
    pub orders: Vec<u32>,
}

impl Default for RdpAccountant {
    fn default() -> Self {
        Self { orders: default_orders() }
    }
}

impl PrivacyAccountant for RdpAccountant {
    fn method(&self) -> Method {
        Method::Rdp
    }

    /// `δ(ε) = min_α exp((α − 1)(m·RDP(α) − ε))`, the inverse of the same
    /// conversion.
    fn delta(&self, spec: &MechanismSpec, m: u64, epsilon: f64) -> Result<AccountantResult> {
        let mut best = 1.0f64;
        if !spec.is_trivial() {
            for &alpha in &self.orders {
                let rdp = match rdp_sampled_gaussian(spec.q(), spec.sigma(), alpha) {
                    Ok(v) => v,
                    Err(AccountingError::OrderTooLarge { .. }) => continue,
                    Err(e) => return Err(e),
                };
                let log_delta = (f64::from(alpha) - 1.0) * (m as f64 * rdp - epsilon);
                best = best.min(log_delta.exp());
            }
        } else {
            best = 0.0;
        }
        Ok(AccountantResult { epsilon, delta: best, method: Method::Rdp, m, error_envelope: None })
    }

    fn epsilon(&self, spec: &MechanismSpec, m: u64, delta: f64) -> Result<AccountantResult> {
        Ok(rdp_epsilon(spec.q(), spec.sigma(), m, delta, &self.orders)?.result)
    }
}
