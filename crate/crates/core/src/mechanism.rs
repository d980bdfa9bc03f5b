//! Privacy-loss log-likelihood ratios (PLLRs) of the Poisson-subsampled
//! Gaussian mechanism.
//!
//! The dominating pair is `P = N(0, σ²)` against the mixture
//! `Q = (1 − q)·N(0, σ²) + q·N(1, σ²)` (remove adjacency, unit sensitivity).
//! For an output `t` the log-ratio is
//! `log dQ/dP (t) = log((1 − q) + q·exp((2t − 1)/(2σ²)))`, strictly
//! increasing in `t`, so every distributional question about the PLLR reduces
//! to a one-dimensional Gaussian computation through [`pllr_inverse`].

use crate::error::{AccountingError, Result};
use crate::normal;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// One DP-SGD step: Poisson sampling rate, noise multiplier and clipping norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    q: f64,
    sigma: f64,
    clip_norm: f64,
    counts: Option<(u64, u64)>,
}

impl MechanismSpec {
    pub fn new(q: f64, sigma: f64, clip_norm: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(AccountingError::InvalidMechanism(format!("sampling rate q={q} outside [0, 1]")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(AccountingError::InvalidMechanism(format!("noise multiplier sigma={sigma} must be positive")));
        }
        if !(clip_norm > 0.0 && clip_norm.is_finite()) {
            return Err(AccountingError::InvalidMechanism(format!("clipping norm C={clip_norm} must be positive")));
        }
        Ok(Self { q, sigma, clip_norm, counts: None })
    }

    /// Unit clipping norm; the accountants never look at `C`.
    pub fn unit(q: f64, sigma: f64) -> Result<Self> {
        Self::new(q, sigma, 1.0)
    }

    /// Builds the spec from an expected batch size `B` and dataset size `N`,
    /// with `q = B / N`.
    pub fn from_counts(batch_size: u64, dataset_size: u64, sigma: f64, clip_norm: f64) -> Result<Self> {
        if dataset_size == 0 || batch_size > dataset_size {
            return Err(AccountingError::InvalidMechanism(format!(
                "batch size {batch_size} must be at most the dataset size {dataset_size} (and N > 0)"
            )));
        }
        let mut spec = Self::new(batch_size as f64 / dataset_size as f64, sigma, clip_norm)?;
        spec.counts = Some((batch_size, dataset_size));
        Ok(spec)
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn clip_norm(&self) -> f64 {
        self.clip_norm
    }

    /// `(B, N)` when built through [`MechanismSpec::from_counts`].
    pub fn counts(&self) -> Option<(u64, u64)> {
        self.counts
    }

    /// Same mechanism with a different noise multiplier.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        let mut out = Self::new(self.q, sigma, self.clip_norm)?;
        out.counts = self.counts;
        Ok(out)
    }

    /// Infimum of the log-ratio support, `log(1 − q)` (−∞ when `q = 1`).
    pub fn support_lower(&self) -> f64 {
        (-self.q).ln_1p()
    }

    /// The mechanism leaks nothing when no record is ever sampled.
    pub fn is_trivial(&self) -> bool {
        self.q == 0.0
    }
}

/// Which side of the dominating pair generated the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Output drawn from `P`; the PLLR is called `X`.
    UnderP,
    /// Output drawn from `Q`; the PLLR is called `Y`.
    UnderQ,
}

impl Hypothesis {
    pub const BOTH: [Hypothesis; 2] = [Hypothesis::UnderP, Hypothesis::UnderQ];
}

/// A single PLLR draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PllrSample {
    pub value: f64,
    pub hypothesis: Hypothesis,
}

/// `log dQ/dP` evaluated at the mechanism output `t`.
pub fn pllr_log_ratio(t: f64, spec: &MechanismSpec) -> f64 {
    let q = spec.q;
    if q == 0.0 {
        return 0.0;
    }
    let exponent = (2.0 * t - 1.0) / (2.0 * spec.sigma * spec.sigma);
    if q == 1.0 {
        return exponent;
    }
    log_add_exp((-q).ln_1p(), q.ln() + exponent)
}

/// Output `t` at which the log-ratio equals `x`.
pub fn pllr_inverse(x: f64, spec: &MechanismSpec) -> Result<f64> {
    let q = spec.q;
    let lower = spec.support_lower();
    if q == 0.0 || x <= lower || x.is_nan() {
        return Err(AccountingError::Domain { x, lower });
    }
    let s2 = spec.sigma * spec.sigma;
    Ok(s2 * log_mixture_excess(x, q) + 0.5)
}

/// `log((eˣ − (1 − q)) / q)` without cancellation near the support boundary
/// or overflow for large `x`.
fn log_mixture_excess(x: f64, q: f64) -> f64 {
    if q == 1.0 {
        return x;
    }
    let log_keep = (-q).ln_1p();
    let excess = if x > 1.0 {
        // eˣ − (1 − q) = eˣ·(1 − (1 − q)e^{−x})
        x + (-(1.0 - q) * (-x).exp()).ln_1p()
    } else {
        // (1 − q)·(e^{x − log(1 − q)} − 1)
        log_keep + (x - log_keep).exp_m1().ln()
    };
    excess - q.ln()
}

/// Exact single-step CDF of the PLLR under either hypothesis.
pub fn pllr_cdf(x: f64, spec: &MechanismSpec, hypothesis: Hypothesis) -> f64 {
    if spec.q == 0.0 {
        return if x >= 0.0 { 1.0 } else { 0.0 };
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    let Ok(t) = pllr_inverse(x, spec) else {
        return 0.0;
    };
    let s = spec.sigma;
    match hypothesis {
        Hypothesis::UnderP => normal::cdf(t / s),
        Hypothesis::UnderQ => (1.0 - spec.q) * normal::cdf(t / s) + spec.q * normal::cdf((t - 1.0) / s),
    }
}

/// Exact single-step survival function `1 − pllr_cdf`, evaluated directly so
/// upper-tail probabilities keep their relative precision.
pub fn pllr_sf(x: f64, spec: &MechanismSpec, hypothesis: Hypothesis) -> f64 {
    if spec.q == 0.0 {
        return if x >= 0.0 { 0.0 } else { 1.0 };
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    let Ok(t) = pllr_inverse(x, spec) else {
        return 1.0;
    };
    let s = spec.sigma;
    match hypothesis {
        Hypothesis::UnderP => normal::sf(t / s),
        Hypothesis::UnderQ => (1.0 - spec.q) * normal::sf(t / s) + spec.q * normal::sf((t - 1.0) / s),
    }
}

/// Seeded PLLR sampler. Owns its generator; not meant to be shared across
/// threads.
#[derive(Debug, Clone)]
pub struct PllrSampler {
    spec: MechanismSpec,
    hypothesis: Hypothesis,
    rng: ChaCha8Rng,
}

impl PllrSampler {
    pub fn new(spec: MechanismSpec, hypothesis: Hypothesis, seed: u64) -> Self {
        Self::with_rng(spec, hypothesis, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(spec: MechanismSpec, hypothesis: Hypothesis, rng: ChaCha8Rng) -> Self {
        Self { spec, hypothesis, rng }
    }

    /// Draws one mechanism output and returns its log-ratio.
    #[inline]
    pub fn next_value(&mut self) -> f64 {
        draw_pllr(&self.spec, self.hypothesis, &mut self.rng)
    }

    pub fn next_sample(&mut self) -> PllrSample {
        PllrSample { value: self.next_value(), hypothesis: self.hypothesis }
    }
}

#[inline]
pub(crate) fn draw_pllr<R: Rng + ?Sized>(spec: &MechanismSpec, hypothesis: Hypothesis, rng: &mut R) -> f64 {
    if spec.q == 0.0 {
        return 0.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    let mut t = spec.sigma * z;
    if hypothesis == Hypothesis::UnderQ && (spec.q == 1.0 || rng.random::<f64>() < spec.q) {
        t += 1.0;
    }
    pllr_log_ratio(t, spec)
}

/// One PLLR draw from a fresh generator seeded with `seed`.
pub fn sample_pllr(spec: &MechanismSpec, hypothesis: Hypothesis, seed: u64) -> PllrSample {
    PllrSampler::new(*spec, hypothesis, seed).next_sample()
}

/// Exact `δ(ε)` of a single unsubsampled Gaussian mechanism with unit
/// sensitivity: `Φ(1/(2σ) − εσ) − e^ε·Φ(−1/(2σ) − εσ)`, clamped to `[0, 1]`.
pub fn analytic_gaussian_delta(sigma: f64, epsilon: f64) -> f64 {
    let a = 1.0 / (2.0 * sigma);
    let b = epsilon * sigma;
    let second = if epsilon.exp().is_finite() { epsilon.exp() * normal::cdf(-a - b) } else { 0.0 };
    (normal::cdf(a - b) - second).clamp(0.0, 1.0)
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}
