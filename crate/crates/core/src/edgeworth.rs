//! Edgeworth accountant.
//!
//! The CDFs of the composed PLLR sums `Σ Xᵢ` (under `P`) and `Σ Yᵢ` (under
//! `Q`) are approximated by an Edgeworth series built from quadrature
//! cumulants, then plugged into
//! `δ(ε) = 1 − F_Y(ε) − e^ε·(1 − F_X(ε))`.
//! Both tails are evaluated in survival form so the `e^ε`-weighted term keeps
//! its precision at small δ.

use crate::accountant::{invert_delta, AccountantResult, Method, PrivacyAccountant, EPSILON_CAP};
use crate::cumulants::{compose_cumulants, single_step_cumulants, CumulantVector};
use crate::error::{AccountingError, Result};
use crate::mechanism::{Hypothesis, MechanismSpec};
use crate::normal;
use serde::{Deserialize, Serialize};

/// Berry–Esseen constant for iid sums.
pub const BERRY_ESSEEN_C0: f64 = 0.56;

/// Relative agreement between the target δ and δ at the returned ε.
pub const ROUND_TRIP_TOLERANCE: f64 = 1e-8;

/// Default expansion order (skewness and kurtosis corrections).
pub const DEFAULT_ORDER: usize = 2;

fn series_correction(z: f64, cv: &CumulantVector, order: usize) -> f64 {
    if order == 0 {
        return 0.0;
    }
    let k2 = cv.variance();
    let l3 = cv.kappa(3).unwrap_or(0.0) / k2.powf(1.5);
    let z2 = z * z;
    let mut c = (l3 / 6.0) * (z2 - 1.0);
    if order >= 2 {
        let l4 = cv.kappa(4).unwrap_or(0.0) / (k2 * k2);
        let z3 = z2 * z;
        let z5 = z3 * z2;
        c += (l4 / 24.0) * (z3 - 3.0 * z) + (l3 * l3 / 72.0) * (z5 - 10.0 * z3 + 15.0 * z);
    }
    normal::pdf(z) * c
}

fn check_order(cv: &CumulantVector, order: usize) -> Result<()> {
    if order > 2 {
        return Err(AccountingError::InvalidArgument(format!("Edgeworth order {order} not supported (0..=2)")));
    }
    if cv.cumulants().len() < order + 2 {
        return Err(AccountingError::InvalidArgument(format!(
            "order {order} needs {} cumulants, got {}",
            order + 2,
            cv.cumulants().len()
        )));
    }
    Ok(())
}

/// Order-`k` Edgeworth approximation of the CDF at `x`, clamped to `[0, 1]`.
pub fn edgeworth_cdf(x: f64, cv: &CumulantVector, order: usize) -> Result<f64> {
    check_order(cv, order)?;
    let z = (x - cv.mean()) / cv.variance().sqrt();
    Ok((normal::cdf(z) - series_correction(z, cv, order)).clamp(0.0, 1.0))
}

/// `1 − edgeworth_cdf(x)` computed without cancellation, clamped to `[0, 1]`.
pub fn edgeworth_sf(x: f64, cv: &CumulantVector, order: usize) -> Result<f64> {
    check_order(cv, order)?;
    let z = (x - cv.mean()) / cv.variance().sqrt();
    Ok((normal::sf(z) + series_correction(z, cv, order)).clamp(0.0, 1.0))
}

/// Uniform bound `C₀·ρ/(s³√m)` on `|F_m − Φ|` for the standardised sum, where
/// `ρ` and `s²` are the single-step absolute third central moment and
/// variance.
pub fn berry_esseen_envelope(cv: &CumulantVector) -> f64 {
    let m = cv.steps() as f64;
    let rho = cv.abs_third_central() / m;
    let s = (cv.variance() / m).sqrt();
    BERRY_ESSEEN_C0 * rho / (s.powi(3) * m.sqrt())
}

/// Composed cumulants of both PLLR sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedPllr {
    pub under_p: CumulantVector,
    pub under_q: CumulantVector,
}

impl ComposedPllr {
    pub fn new(spec: &MechanismSpec, m: u64, order: usize) -> Result<Self> {
        let compose = |hyp| -> Result<CumulantVector> {
            let single = single_step_cumulants(spec, hyp, order + 2)?;
            compose_cumulants(&single, m)
        };
        Ok(Self { under_p: compose(Hypothesis::UnderP)?, under_q: compose(Hypothesis::UnderQ)? })
    }

    /// Raw primal–dual `δ(ε)` before clamping.
    fn raw_delta(&self, epsilon: f64, order: usize) -> Result<f64> {
        let tail_y = edgeworth_sf(epsilon, &self.under_q, order)?;
        let tail_x = edgeworth_sf(epsilon, &self.under_p, order)?;
        let weighted = if tail_x == 0.0 { 0.0 } else { epsilon.exp() * tail_x };
        Ok(tail_y - weighted)
    }

    pub fn delta(&self, epsilon: f64, order: usize) -> Result<f64> {
        Ok(self.raw_delta(epsilon, order)?.clamp(0.0, 1.0))
    }

    /// Bound on the δ error induced by the CDF envelopes of both sums.
    pub fn delta_envelope(&self, epsilon: f64) -> f64 {
        berry_esseen_envelope(&self.under_q) + epsilon.exp() * berry_esseen_envelope(&self.under_p)
    }
}

/// Edgeworth accountant configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeworthAccountant {
    pub order: usize,
    /// Attach the Berry–Esseen δ envelope to results.
    pub berry_esseen: bool,
}

impl Default for EdgeworthAccountant {
    fn default() -> Self {
        Self { order: DEFAULT_ORDER, berry_esseen: true }
    }
}

impl EdgeworthAccountant {
    pub fn with_order(order: usize) -> Self {
        Self { order, ..Self::default() }
    }

    fn trivial(m: u64, epsilon: f64) -> AccountantResult {
        AccountantResult { epsilon, delta: 0.0, method: Method::Edgeworth, m, error_envelope: None }
    }
}

/// `δ(ε)` for `m` compositions with an order-`order` expansion.
pub fn delta_of_epsilon_ew(spec: &MechanismSpec, m: u64, epsilon: f64, order: usize) -> Result<AccountantResult> {
    EdgeworthAccountant::with_order(order).delta(spec, m, epsilon)
}

/// Smallest ε (to 1e−6) with `δ(ε) ≤ delta`.
pub fn epsilon_of_delta_ew(spec: &MechanismSpec, m: u64, delta: f64, order: usize) -> Result<AccountantResult> {
    EdgeworthAccountant::with_order(order).epsilon(spec, m, delta)
}

impl PrivacyAccountant for EdgeworthAccountant {
    fn method(&self) -> Method {
        Method::Edgeworth
    }

    fn delta(&self, spec: &MechanismSpec, m: u64, epsilon: f64) -> Result<AccountantResult> {
        if !(epsilon >= 0.0) {
            return Err(AccountingError::InvalidArgument(format!("epsilon={epsilon} must be nonnegative")));
        }
        if spec.is_trivial() {
            return Ok(Self::trivial(m, epsilon));
        }
        let composed = ComposedPllr::new(spec, m, self.order)?;
        Ok(AccountantResult {
            epsilon,
            delta: composed.delta(epsilon, self.order)?,
            method: Method::Edgeworth,
            m,
            error_envelope: self.berry_esseen.then(|| composed.delta_envelope(epsilon)),
        })
    }

    fn epsilon(&self, spec: &MechanismSpec, m: u64, delta: f64) -> Result<AccountantResult> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(AccountingError::InvalidArgument(format!("delta={delta} must lie in (0, 1)")));
        }
        if spec.is_trivial() {
            return Ok(AccountantResult { delta, ..Self::trivial(m, 0.0) });
        }
        let composed = ComposedPllr::new(spec, m, self.order)?;
        let epsilon = invert_delta(|e| composed.delta(e, self.order), delta, Some(ROUND_TRIP_TOLERANCE))?
            .ok_or(AccountingError::NoFiniteEpsilon { delta, cap: EPSILON_CAP })?;
        Ok(AccountantResult {
            epsilon,
            delta: composed.delta(epsilon, self.order)?,
            method: Method::Edgeworth,
            m,
            error_envelope: self.berry_esseen.then(|| composed.delta_envelope(epsilon)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::{analytic_gaussian_delta, pllr_cdf};

    fn spec(q: f64, sigma: f64) -> MechanismSpec {
        MechanismSpec::unit(q, sigma).unwrap()
    }

    fn synthetic(k: [f64; 4]) -> CumulantVector {
        CumulantVector::new(k.to_vec(), 1.0, 1).unwrap()
    }

    #[test]
    fn vanishing_higher_cumulants_reduce_to_normal() {
        let cv = synthetic([0.3, 2.0, 0.0, 0.0]);
        for order in 0..=2 {
            for &x in &[-2.0, 0.3, 1.0, 4.0] {
                let z = (x - 0.3) / 2f64.sqrt();
                assert!((edgeworth_cdf(x, &cv, order).unwrap() - normal::cdf(z)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn first_order_at_the_mean() {
        let k2: f64 = 1.7;
        let k3 = 0.4;
        let cv = synthetic([1.0, k2, k3, 0.0]);
        let l3 = k3 / k2.powf(1.5);
        let expected = 0.5 + l3 * normal::pdf(0.0) / 6.0;
        assert!((edgeworth_cdf(1.0, &cv, 1).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn order_zero_is_the_clt_approximation() {
        let s = spec(0.05, 0.9);
        let composed = ComposedPllr::new(&s, 50, 0).unwrap();
        let cv = &composed.under_q;
        let z = (1.0 - cv.mean()) / cv.variance().sqrt();
        assert_eq!(edgeworth_cdf(1.0, cv, 0).unwrap(), normal::cdf(z).clamp(0.0, 1.0));
    }

    #[test]
    fn rejects_unsupported_order() {
        let cv = synthetic([0.0, 1.0, 0.0, 0.0]);
        assert!(edgeworth_cdf(0.0, &cv, 3).is_err());
        let short = CumulantVector::new(vec![0.0, 1.0, 0.0], 1.0, 1).unwrap();
        assert!(edgeworth_cdf(0.0, &short, 2).is_err());
    }

    #[test]
    fn gaussian_case_is_exact() {
        for &sigma in &[0.5, 1.0, 2.0] {
            for &eps in &[0.0, 0.5, 1.0, 2.0] {
                for order in 0..=2 {
                    let r = delta_of_epsilon_ew(&spec(1.0, sigma), 1, eps, order).unwrap();
                    let exact = analytic_gaussian_delta(sigma, eps);
                    assert!((r.delta - exact).abs() < 1e-6, "σ={sigma} ε={eps} k={order}: {} vs {exact}", r.delta);
                }
            }
        }
        let r = delta_of_epsilon_ew(&spec(1.0, 1.0), 1, 0.0, 2).unwrap();
        assert!((r.delta - 0.38292).abs() < 1e-5);
    }

    #[test]
    fn trivial_mechanism_has_zero_delta() {
        for eps in [0.0, 0.5, 3.0] {
            assert_eq!(delta_of_epsilon_ew(&spec(0.0, 1.0), 100, eps, 2).unwrap().delta, 0.0);
        }
        assert_eq!(epsilon_of_delta_ew(&spec(0.0, 1.0), 100, 1e-5, 2).unwrap().epsilon, 0.0);
    }

    #[test]
    fn far_tail_is_small_and_nonincreasing() {
        let s = spec(0.01, 0.8);
        let composed = ComposedPllr::new(&s, 1000, 2).unwrap();
        let cv = &composed.under_q;
        let start = cv.mean() + 10.0 * cv.variance().sqrt();
        let mut prev = f64::INFINITY;
        for i in 0..20 {
            let eps = start + 0.5 * i as f64;
            let d = composed.delta(eps, 2).unwrap();
            assert!(d <= 1e-6, "ε={eps}: δ={d}");
            assert!(d <= prev);
            prev = d;
        }
    }

    #[test]
    fn inversion_reference_and_round_trip() {
        let r = epsilon_of_delta_ew(&spec(1.0, 1.0), 1, 0.38292, 2).unwrap();
        assert!(r.epsilon.abs() < 1e-4, "{}", r.epsilon);

        let s = spec(0.01, 0.8);
        for &delta in &[1e-5, 1e-6] {
            let r = epsilon_of_delta_ew(&s, 1000, delta, 2).unwrap();
            let back = delta_of_epsilon_ew(&s, 1000, r.epsilon, 2).unwrap().delta;
            assert!(back <= delta);
            assert!((back - delta).abs() <= 1e-8 * delta, "δ={delta}: back {back}");
            let before = delta_of_epsilon_ew(&s, 1000, r.epsilon - 1e-6, 2).unwrap().delta;
            assert!(before + 1e-12 >= delta);
        }
    }

    #[test]
    fn more_noise_means_smaller_epsilon() {
        let mut prev = f64::INFINITY;
        for &sigma in &[0.6, 0.7, 0.8, 1.0, 1.5] {
            let eps = epsilon_of_delta_ew(&spec(0.01, sigma), 1000, 1e-5, 2).unwrap().epsilon;
            assert!(eps < prev, "σ={sigma}: {eps} !< {prev}");
            prev = eps;
        }
    }

    #[test]
    fn unreachable_delta_reports_no_finite_epsilon() {
        // q = 1, σ tiny: δ stays near 1 far beyond the cap.
        let err = epsilon_of_delta_ew(&spec(1.0, 1e-3), 1, 1e-6, 2).unwrap_err();
        assert!(matches!(err, AccountingError::NoFiniteEpsilon { .. }));
    }

    #[test]
    fn envelope_scaling_and_gaussian_value() {
        let single = single_step_cumulants(&spec(1.0, 1.0), Hypothesis::UnderP, 4).unwrap();
        for m in [1u64, 10, 250] {
            let a = berry_esseen_envelope(&compose_cumulants(&single, m).unwrap());
            let b = berry_esseen_envelope(&compose_cumulants(&single, 4 * m).unwrap());
            assert!((a / b - 2.0).abs() < 1e-6);
            let expected = BERRY_ESSEEN_C0 * normal::abs_third_moment() / (m as f64).sqrt();
            assert!((a - expected).abs() < 1e-9, "m={m}: {a} vs {expected}");
        }
    }

    /// Density of the exact single-step PLLR on a uniform grid, then numerical
    /// self-convolution; used as an independent oracle for small `m`.
    fn convolved_cdf(s: &MechanismSpec, hyp: Hypothesis, m: usize, grid: &[f64]) -> Vec<f64> {
        let h = 1e-3;
        let lo = s.support_lower().max(-12.0);
        let n = 24_000;
        let mut pmf: Vec<f64> = (0..n)
            .map(|i| {
                let a = lo + h * i as f64;
                pllr_cdf(a + h, s, hyp) - pllr_cdf(a, s, hyp)
            })
            .collect();
        let mut origin = lo + 0.5 * h;
        let single = pmf.clone();
        for _ in 1..m {
            let mut next = vec![0.0; pmf.len() + single.len() - 1];
            for (i, &a) in pmf.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (j, &b) in single.iter().enumerate() {
                    next[i + j] += a * b;
                }
            }
            pmf = next;
            origin += lo + 0.5 * h;
        }
        // cumulative mass through point k is attributed to the cell's upper
        // edge and interpolated linearly in between
        let mut cumulative = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for p in &pmf {
            acc += p;
            cumulative.push(acc);
        }
        grid.iter()
            .map(|&x| {
                let u = (x - origin - 0.5 * h) / h;
                if u < 0.0 {
                    return 0.0;
                }
                let k = u.floor() as usize;
                let frac = u - k as f64;
                let a = cumulative[k.min(cumulative.len() - 1)];
                let b = cumulative[(k + 1).min(cumulative.len() - 1)];
                a + frac * (b - a)
            })
            .collect()
    }

    #[test]
    fn composed_cumulants_match_direct_convolution() {
        // A mildly skewed mechanism; the m = 2 Edgeworth CDF is compared with a
        // brute-force convolution of the exact single-step law.
        let s = spec(0.9, 1.5);
        let composed = ComposedPllr::new(&s, 2, 2).unwrap();
        let cv = &composed.under_q;
        let sd = cv.variance().sqrt();
        let grid: Vec<f64> = [-1.5, -0.5, 0.0, 0.5, 1.5].iter().map(|z| cv.mean() + z * sd).collect();
        let oracle = convolved_cdf(&s, Hypothesis::UnderQ, 2, &grid);
        for (x, o) in grid.iter().zip(&oracle) {
            let approx = edgeworth_cdf(*x, cv, 2).unwrap();
            assert!((approx - o).abs() < 1e-3, "x={x}: edgeworth {approx} vs convolution {o}");
        }
    }

    #[test]
    fn envelope_covers_small_m_convolution() {
        let s = spec(0.01, 1.0);
        let env1000 = berry_esseen_envelope(&ComposedPllr::new(&s, 1000, 2).unwrap().under_q);
        assert!(env1000 > 0.0);
        let composed = ComposedPllr::new(&s, 4, 0).unwrap();
        let cv = &composed.under_p;
        let env = berry_esseen_envelope(cv);
        let sd = cv.variance().sqrt();
        let grid: Vec<f64> = (-4..=4).map(|z| cv.mean() + z as f64 * sd).collect();
        let oracle = convolved_cdf(&s, Hypothesis::UnderP, 4, &grid);
        for (x, o) in grid.iter().zip(&oracle) {
            let approx = edgeworth_cdf(*x, cv, 0).unwrap();
            assert!((approx - o).abs() <= env, "x={x}: |{approx} − {o}| > {env}");
        }
    }

    #[test]
    fn abs_third_central_by_independent_quadrature() {
        let s = spec(0.2, 0.9);
        let cv = single_step_cumulants(&s, Hypothesis::UnderP, 4).unwrap();
        // brute-force: fine midpoint rule on the output variable
        let (a, b, n) = (-9.0, 9.0, 400_000);
        let h = (b - a) / n as f64;
        let brute: f64 = (0..n)
            .map(|i| {
                let t = a + h * (i as f64 + 0.5);
                let x = crate::mechanism::pllr_log_ratio(t, &s);
                (x - cv.mean()).abs().powi(3) * normal::pdf(t / 0.9) / 0.9 * h
            })
            .sum();
        assert!((brute - cv.abs_third_central()).abs() < 1e-8, "{brute} vs {}", cv.abs_third_central());
    }
}
