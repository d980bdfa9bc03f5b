//! Moments and cumulants of the single-step PLLR, and their composition.

use crate::error::{AccountingError, Result};
use crate::mechanism::{pllr_inverse, pllr_log_ratio, Hypothesis, MechanismSpec};
use crate::quadrature::{normal_expectation_piecewise, GaussHermite, HERMITE_SCHEDULE};
use serde::{Deserialize, Serialize};

/// Relative stability required between successive node counts.
pub const MOMENT_TOLERANCE: f64 = 1e-10;

/// Cumulants `κ₁..κ_J` of a PLLR (single step or `steps`-fold sum), with the
/// absolute third central moment of the single step for Berry–Esseen bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulantVector {
    cumulants: Vec<f64>,
    abs_third_central: f64,
    steps: u64,
}

impl CumulantVector {
    pub fn new(cumulants: Vec<f64>, abs_third_central: f64, steps: u64) -> Result<Self> {
        if cumulants.len() < 2 {
            return Err(AccountingError::InvalidArgument("at least two cumulants are required".into()));
        }
        if !(cumulants[1] > 0.0) {
            return Err(AccountingError::DegenerateDistribution { variance: cumulants[1] });
        }
        if steps == 0 {
            return Err(AccountingError::InvalidArgument("cumulant vector needs at least one step".into()));
        }
        Ok(Self { cumulants, abs_third_central, steps })
    }

    /// `κ_j` (1-based), if stored.
    pub fn kappa(&self, j: usize) -> Option<f64> {
        j.checked_sub(1).and_then(|i| self.cumulants.get(i).copied())
    }

    pub fn cumulants(&self) -> &[f64] {
        &self.cumulants
    }

    pub fn mean(&self) -> f64 {
        self.cumulants[0]
    }

    pub fn variance(&self) -> f64 {
        self.cumulants[1]
    }

    /// `E|X − κ₁|³` summed over steps (`steps ×` the single-step value).
    pub fn abs_third_central(&self) -> f64 {
        self.abs_third_central
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Highest Edgeworth order this vector supports (`J − 2`).
    pub fn max_edgeworth_order(&self) -> usize {
        self.cumulants.len() - 2
    }
}

fn hermite_pass(spec: &MechanismSpec, hypothesis: Hypothesis, max_order: usize, nodes: usize) -> Vec<f64> {
    let rule = GaussHermite::cached(nodes);
    let sigma = spec.sigma();
    let powers = |mean: f64| -> Vec<f64> {
        let mut acc = vec![0.0; max_order];
        for (&z, &w) in rule.nodes().iter().zip(rule.weights()) {
            if w == 0.0 {
                continue;
            }
            let x = pllr_log_ratio(mean + sigma * z, spec);
            let mut p = w;
            for slot in acc.iter_mut() {
                p *= x;
                *slot += p;
            }
        }
        acc
    };
    let under_p = powers(0.0);
    match hypothesis {
        Hypothesis::UnderP => under_p,
        Hypothesis::UnderQ => {
            let q = spec.q();
            let shifted = powers(1.0);
            under_p.iter().zip(&shifted).map(|(a, b)| (1.0 - q) * a + q * b).collect()
        }
    }
}

/// Raw moments `E[X^j]`, `j = 1..=max_order`, by Gauss–Hermite quadrature with
/// node doubling until successive passes agree to [`MOMENT_TOLERANCE`].
pub fn compute_moments(spec: &MechanismSpec, hypothesis: Hypothesis, max_order: usize) -> Result<Vec<f64>> {
    if max_order < 2 {
        return Err(AccountingError::InvalidArgument(format!("max_order={max_order} must be at least 2")));
    }
    if spec.is_trivial() {
        return Ok(vec![0.0; max_order]);
    }
    let mut previous = hermite_pass(spec, hypothesis, max_order, HERMITE_SCHEDULE[0]);
    let mut unstable_order = 1;
    for &nodes in &HERMITE_SCHEDULE[1..] {
        let current = hermite_pass(spec, hypothesis, max_order, nodes);
        let unstable = current
            .iter()
            .zip(&previous)
            .position(|(c, p)| (c - p).abs() > MOMENT_TOLERANCE * c.abs().max(f64::MIN_POSITIVE));
        match unstable {
            None => return Ok(current),
            Some(i) => unstable_order = i + 1,
        }
        previous = current;
    }
    Err(AccountingError::QuadratureFailure { order: unstable_order, max_nodes: HERMITE_SCHEDULE[HERMITE_SCHEDULE.len() - 1] })
}

/// Converts raw moments `m₁..m_n` to cumulants `κ₁..κ_n` with the standard
/// recursion `κ_n = m_n − Σ_{j=1}^{n−1} C(n−1, j−1) κ_j m_{n−j}`.
pub fn raw_to_cumulants(moments: &[f64]) -> Vec<f64> {
    let n = moments.len();
    let mut kappa = vec![0.0; n];
    for order in 1..=n {
        let mut value = moments[order - 1];
        let mut binom = 1.0; // C(order-1, j-1), starting at j = 1
        for j in 1..order {
            value -= binom * kappa[j - 1] * moments[order - j - 1];
            binom = binom * (order - j) as f64 / j as f64;
        }
        kappa[order - 1] = value;
    }
    kappa
}

/// `E|X − centre|³` by piecewise quadrature split at the kink.
pub fn abs_third_central_moment(spec: &MechanismSpec, hypothesis: Hypothesis, centre: f64) -> f64 {
    if spec.is_trivial() {
        return centre.abs().powi(3);
    }
    let kink = pllr_inverse(centre, spec).ok();
    let breaks: Vec<f64> = kink.into_iter().collect();
    let f = |t: f64| (pllr_log_ratio(t, spec) - centre).abs().powi(3);
    let sigma = spec.sigma();
    let under_p = normal_expectation_piecewise(0.0, sigma, &breaks, f);
    match hypothesis {
        Hypothesis::UnderP => under_p,
        Hypothesis::UnderQ => {
            let q = spec.q();
            (1.0 - q) * under_p + q * normal_expectation_piecewise(1.0, sigma, &breaks, f)
        }
    }
}

/// Single-step cumulant vector: raw moments → cumulants, plus the absolute
/// third central moment.
pub fn moments_to_cumulants(spec: &MechanismSpec, hypothesis: Hypothesis, moments: &[f64]) -> Result<CumulantVector> {
    if moments.len() < 2 {
        return Err(AccountingError::InvalidArgument("at least two moments are required".into()));
    }
    let kappa = raw_to_cumulants(moments);
    if !(kappa[1] > 0.0) {
        return Err(AccountingError::DegenerateDistribution { variance: kappa[1] });
    }
    let rho = abs_third_central_moment(spec, hypothesis, kappa[0]);
    CumulantVector::new(kappa, rho, 1)
}

/// Single-step cumulants up to order `max_order`.
pub fn single_step_cumulants(spec: &MechanismSpec, hypothesis: Hypothesis, max_order: usize) -> Result<CumulantVector> {
    let moments = compute_moments(spec, hypothesis, max_order)?;
    moments_to_cumulants(spec, hypothesis, &moments)
}

/// Cumulants of the sum of `m` iid copies: every entry scales by `m`.
pub fn compose_cumulants(cv: &CumulantVector, m: u64) -> Result<CumulantVector> {
    if cv.steps != 1 {
        return Err(AccountingError::InvalidArgument(format!(
            "composition expects a single-step vector, got {} steps",
            cv.steps
        )));
    }
    if m == 0 {
        return Err(AccountingError::InvalidArgument("composition count must be at least 1".into()));
    }
    let mf = m as f64;
    Ok(CumulantVector {
        cumulants: cv.cumulants.iter().map(|k| k * mf).collect(),
        abs_third_central: cv.abs_third_central * mf,
        steps: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::PllrSampler;

    fn spec(q: f64, sigma: f64) -> MechanismSpec {
        MechanismSpec::unit(q, sigma).unwrap()
    }

    #[test]
    fn gaussian_pllr_moments() {
        let m = compute_moments(&spec(1.0, 1.0), Hypothesis::UnderP, 4).unwrap();
        assert!((m[0] + 0.5).abs() < 1e-14);
        assert!((m[1] - 1.25).abs() < 1e-14);
        let k = raw_to_cumulants(&m);
        assert!(k[2].abs() < 1e-8 && k[3].abs() < 1e-8, "{k:?}");
    }

    #[test]
    fn trivial_mechanism_has_zero_moments_and_degenerate_cumulants() {
        let s = spec(0.0, 1.0);
        let m = compute_moments(&s, Hypothesis::UnderQ, 4).unwrap();
        assert!(m.iter().all(|&v| v == 0.0));
        assert!(matches!(
            moments_to_cumulants(&s, Hypothesis::UnderQ, &m),
            Err(AccountingError::DegenerateDistribution { .. })
        ));
    }

    #[test]
    fn rejects_low_order_requests() {
        assert!(compute_moments(&spec(0.1, 1.0), Hypothesis::UnderP, 1).is_err());
    }

    #[test]
    fn normalisation_with_the_moment_rule() {
        let s = spec(0.01, 1.0);
        let rule = GaussHermite::cached(1024);
        let mgf = rule.expect(0.0, 1.0, |t| pllr_log_ratio(t, &s).exp());
        assert!((mgf - 1.0).abs() < 1e-8);
    }

    #[test]
    fn cumulant_recursion_matches_closed_forms() {
        let m = [0.3, 1.1, -0.4, 2.7, 1.9, 8.0];
        let k = raw_to_cumulants(&m);
        let (m1, m2, m3, m4) = (m[0], m[1], m[2], m[3]);
        assert!((k[1] - (m2 - m1 * m1)).abs() < 1e-14);
        assert!((k[2] - (m3 - 3.0 * m1 * m2 + 2.0 * m1.powi(3))).abs() < 1e-14);
        let k4 = m4 - 4.0 * m1 * m3 - 3.0 * m2 * m2 + 12.0 * m1 * m1 * m2 - 6.0 * m1.powi(4);
        assert!((k[3] - k4).abs() < 1e-13);
    }

    #[test]
    fn abs_third_moment_dominates_third_cumulant() {
        for &q in &[0.01, 0.1, 0.5, 1.0] {
            for hyp in Hypothesis::BOTH {
                let cv = single_step_cumulants(&spec(q, 0.8), hyp, 4).unwrap();
                assert!(cv.abs_third_central() >= cv.kappa(3).unwrap().abs());
            }
        }
        let cv = single_step_cumulants(&spec(1.0, 2.0), Hypothesis::UnderQ, 4).unwrap();
        let s = cv.variance().sqrt();
        assert!((cv.abs_third_central() / s.powi(3) - crate::normal::abs_third_moment()).abs() < 1e-10);
    }

    #[test]
    fn composition_scales_every_entry() {
        let cv = single_step_cumulants(&spec(0.05, 0.9), Hypothesis::UnderQ, 4).unwrap();
        assert_eq!(compose_cumulants(&cv, 1).unwrap().cumulants(), cv.cumulants());
        let c = compose_cumulants(&cv, 7).unwrap();
        assert_eq!(c.steps(), 7);
        assert_eq!(c.variance(), cv.variance() * 7.0);
        // summing seven copies entrywise gives the same floats as scaling
        for (j, &k) in cv.cumulants().iter().enumerate() {
            let summed = (0..7).fold(0.0, |acc, _| acc + k);
            assert!((c.cumulants()[j] - summed).abs() <= 4.0 * f64::EPSILON * summed.abs());
        }
        assert!(compose_cumulants(&c, 2).is_err());
        assert!(compose_cumulants(&cv, 0).is_err());
    }

    /// Cumulants from 10⁷ samples agree with the quadrature values within three
    /// batch-means standard errors.
    #[test]
    fn cumulants_match_monte_carlo() {
        let s = spec(0.1, 1.0);
        for hyp in Hypothesis::BOTH {
            let cv = single_step_cumulants(&s, hyp, 4).unwrap();
            let mut sampler = PllrSampler::new(s, hyp, 99);
            let batches = 100;
            let per = 100_000;
            let mut estimates = vec![Vec::with_capacity(batches); 4];
            for _ in 0..batches {
                let mut raw = [0.0f64; 4];
                for _ in 0..per {
                    let x = sampler.next_value();
                    let mut p = 1.0;
                    for r in raw.iter_mut() {
                        p *= x;
                        *r += p;
                    }
                }
                let moments: Vec<f64> = raw.iter().map(|r| r / per as f64).collect();
                for (slot, k) in estimates.iter_mut().zip(raw_to_cumulants(&moments)) {
                    slot.push(k);
                }
            }
            for (j, est) in estimates.iter().enumerate() {
                let mean = est.iter().sum::<f64>() / batches as f64;
                let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
                let se = (var / batches as f64).sqrt();
                let exact = cv.cumulants()[j];
                assert!((mean - exact).abs() < 3.0 * se, "{hyp:?} κ{}: mc {mean} ± {se} vs {exact}", j + 1);
            }
        }
    }
}
