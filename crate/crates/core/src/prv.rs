//! Discretised privacy-loss accountant: each single-step PLLR law is put on a
//! uniform grid from exact CDF differences and composed by FFT.
//!
//! Per-step cells carry exact masses; the cell representatives are shifted by
//! a sub-cell amount so the grid mean equals the exact mean. Composition works
//! on a circular domain centred at the composed mean, sized so both the
//! single-step support and ±`sd_multiplier` composed standard deviations fit.

use crate::accountant::{invert_delta, AccountantResult, Method, PrivacyAccountant, EPSILON_CAP};
use crate::cumulants::single_step_cumulants;
use crate::error::{AccountingError, Result};
use crate::mechanism::{pllr_cdf, pllr_log_ratio, pllr_sf, Hypothesis, MechanismSpec};
use realfft::num_complex::Complex;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

/// Maximum tolerated truncated mass per step.
pub const MAX_TRUNCATED_MASS: f64 = 1e-10;

/// Maximum tolerated composed mass near either edge of the circular domain.
pub const MAX_EDGE_MASS: f64 = 1e-9;

/// Standard deviations of the mixture component used to place the upper
/// single-step bound.
const TAIL_Z: f64 = 7.5;

/// Ratio between the half-window and the largest span it must contain.
const WINDOW_SLACK: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrvGridConfig {
    /// Grid spacing `h`.
    pub spacing: f64,
    /// Composed standard deviations covered on each side of the composed mean.
    pub sd_multiplier: f64,
    /// Number of compositions the domain must accommodate.
    pub compositions: u64,
    /// Upper limit on the grid length.
    pub max_len: usize,
}

impl Default for PrvGridConfig {
    fn default() -> Self {
        Self { spacing: 5e-5, sd_multiplier: 12.0, compositions: 1, max_len: 1 << 24 }
    }
}

impl PrvGridConfig {
    pub fn for_compositions(m: u64) -> Self {
        Self { compositions: m, ..Self::default() }
    }
}

/// Probability mass function on the points `origin + i·spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrvGrid {
    pub hypothesis: Hypothesis,
    pub spacing: f64,
    pub origin: f64,
    /// Truncation bounds of the single-step law (continuous units).
    pub lower: f64,
    pub upper: f64,
    pub pmf: Vec<f64>,
    pub truncated_mass: f64,
    pub steps: u64,
}

impl PrvGrid {
    pub fn len(&self) -> usize {
        self.pmf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pmf.is_empty()
    }

    pub fn value(&self, i: usize) -> f64 {
        self.origin + self.spacing * i as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.pmf.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        let total = self.total_mass();
        self.pmf.iter().enumerate().map(|(i, p)| p * self.value(i)).sum::<f64>() / total
    }

    /// First index whose point lies strictly above `x`.
    fn first_above(&self, x: f64) -> usize {
        let k = ((x - self.origin) / self.spacing).floor() + 1.0;
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.pmf.len())
        }
    }

    /// `P(value > x)` on the grid.
    pub fn tail(&self, x: f64) -> f64 {
        self.pmf[self.first_above(x)..].iter().rev().sum()
    }
}

/// Single-step support bounds shared by both hypotheses.
fn support_bounds(spec: &MechanismSpec) -> Result<(f64, f64)> {
    let sigma = spec.sigma();
    let cq = single_step_cumulants(spec, Hypothesis::UnderQ, 2)?;
    let upper = (cq.mean() + 12.0 * cq.variance().sqrt()).max(pllr_log_ratio(1.0 + TAIL_Z * sigma, spec));
    let lower = if spec.q() < 1.0 {
        spec.support_lower()
    } else {
        let cp = single_step_cumulants(spec, Hypothesis::UnderP, 2)?;
        (cp.mean() - 12.0 * cp.variance().sqrt()).min(pllr_log_ratio(-TAIL_Z * sigma, spec))
    };
    Ok((lower, upper))
}

/// Discretises the single-step PLLR under `hypothesis` on a power-of-two grid
/// wide enough for `config.compositions` compositions.
pub fn prv_discretize(spec: &MechanismSpec, hypothesis: Hypothesis, config: &PrvGridConfig) -> Result<PrvGrid> {
    if spec.is_trivial() {
        return Err(AccountingError::InvalidMechanism("q = 0 has a point-mass privacy loss".into()));
    }
    if !(config.spacing > 0.0) || config.compositions == 0 {
        return Err(AccountingError::InvalidArgument("grid spacing and composition count must be positive".into()));
    }
    let h = config.spacing;
    let (lower, upper) = support_bounds(spec)?;
    let cv = single_step_cumulants(spec, hypothesis, 2)?;
    let mean = cv.mean();
    let composed_sd = (config.compositions as f64 * cv.variance()).sqrt();
    let half_window =
        WINDOW_SLACK * (config.sd_multiplier * composed_sd).max(upper - mean).max(mean - lower);
    let len = ((2.0 * half_window / h).ceil() as usize).max(2).next_power_of_two();
    if len > config.max_len {
        return Err(AccountingError::InvalidArgument(format!(
            "grid of length {len} exceeds the configured maximum {}",
            config.max_len
        )));
    }

    let cells = ((upper - lower) / h).ceil() as usize;
    let edges: Vec<(f64, f64)> = (0..=cells)
        .map(|j| {
            let e = lower + h * j as f64;
            (pllr_cdf(e, spec, hypothesis), pllr_sf(e, spec, hypothesis))
        })
        .collect();
    let masses: Vec<f64> = edges
        .windows(2)
        .map(|w| {
            let ((fa, sa), (fb, sb)) = (w[0], w[1]);
            let m = if sa < 0.5 { sa - sb } else { fb - fa };
            m.max(0.0)
        })
        .collect();
    let truncated_mass = edges[0].0 + edges[cells].1;
    if truncated_mass > MAX_TRUNCATED_MASS {
        return Err(AccountingError::BoundsTooTight { truncated_mass });
    }

    let kept: f64 = masses.iter().sum();
    let grid_mean = masses.iter().enumerate().map(|(j, p)| p * (lower + h * (j as f64 + 0.5))).sum::<f64>() / kept;
    let shift = mean - grid_mean;

    let centre = len / 2;
    let mean_cell = ((mean - lower) / h).round() as usize;
    let first = centre
        .checked_sub(mean_cell)
        .ok_or_else(|| AccountingError::InvalidArgument("support does not fit the grid".into()))?;
    if first + cells > len {
        return Err(AccountingError::InvalidArgument("support does not fit the grid".into()));
    }
    let mut pmf = vec![0.0; len];
    pmf[first..first + cells].copy_from_slice(&masses);
    Ok(PrvGrid {
        hypothesis,
        spacing: h,
        origin: lower + 0.5 * h + shift - h * first as f64,
        lower,
        upper,
        pmf,
        truncated_mass,
        steps: 1,
    })
}

/// `m`-fold self-convolution by FFT exponentiation on the circular domain
/// centred at the grid midpoint.
pub fn prv_compose(grid: &PrvGrid, m: u64) -> Result<PrvGrid> {
    if m == 0 {
        return Err(AccountingError::InvalidArgument("composition count must be at least 1".into()));
    }
    let exponent = u32::try_from(m).map_err(|_| AccountingError::InvalidArgument(format!("m={m} too large")))?;
    let n = grid.len();
    let centre = n / 2;
    let mut planner = RealFftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);

    // circular layout: offset (i − centre) stored at (i − centre) mod n
    let mut buffer: Vec<f64> = (0..n).map(|k| grid.pmf[(k + centre) % n]).collect();
    let mut spectrum: Vec<Complex<f64>> = forward.make_output_vec();
    forward
        .process(&mut buffer, &mut spectrum)
        .map_err(|e| AccountingError::InvalidArgument(format!("FFT failed: {e}")))?;
    for c in spectrum.iter_mut() {
        *c = c.powu(exponent);
    }
    inverse
        .process(&mut spectrum, &mut buffer)
        .map_err(|e| AccountingError::InvalidArgument(format!("inverse FFT failed: {e}")))?;
    let scale = 1.0 / n as f64;
    let pmf: Vec<f64> = (0..n).map(|i| (buffer[(i + n - centre) % n] * scale).max(0.0)).collect();

    let edge = (n / 16).max(1);
    let edge_mass: f64 = pmf[..edge].iter().chain(&pmf[n - edge..]).sum();
    if m > 1 && edge_mass > MAX_EDGE_MASS {
        return Err(AccountingError::WraparoundDetected { edge_mass });
    }
    let mf = m as f64;
    Ok(PrvGrid {
        hypothesis: grid.hypothesis,
        spacing: grid.spacing,
        origin: mf * grid.value(centre) - grid.spacing * centre as f64,
        lower: grid.lower,
        upper: grid.upper,
        pmf,
        truncated_mass: grid.truncated_mass * mf,
        steps: grid.steps * m,
    })
}

/// Primal–dual `δ(ε)` on composed grids, with an error envelope made of the
/// truncated mass and the mass of the cells straddling `ε`.
pub fn prv_delta(grid_x: &PrvGrid, grid_y: &PrvGrid, epsilon: f64) -> Result<AccountantResult> {
    if grid_x.steps != grid_y.steps {
        return Err(AccountingError::InvalidArgument(format!(
            "grids composed to different counts ({} vs {})",
            grid_x.steps, grid_y.steps
        )));
    }
    let tails = GridTails::new(grid_x, grid_y);
    Ok(tails.result(epsilon))
}

/// Suffix sums of both composed grids for repeated `δ(ε)` queries.
struct GridTails<'a> {
    x: &'a PrvGrid,
    y: &'a PrvGrid,
    tail_x: Vec<f64>,
    tail_y: Vec<f64>,
}

impl<'a> GridTails<'a> {
    fn new(x: &'a PrvGrid, y: &'a PrvGrid) -> Self {
        let suffix = |g: &PrvGrid| {
            let mut t = vec![0.0; g.len() + 1];
            for i in (0..g.len()).rev() {
                t[i] = t[i + 1] + g.pmf[i];
            }
            t
        };
        Self { x, y, tail_x: suffix(x), tail_y: suffix(y) }
    }

    fn raw_delta(&self, epsilon: f64) -> f64 {
        let ty = self.tail_y[self.y.first_above(epsilon)];
        let tx = self.tail_x[self.x.first_above(epsilon)];
        let weighted = if tx == 0.0 { 0.0 } else { epsilon.exp() * tx };
        ty - weighted
    }

    fn delta(&self, epsilon: f64) -> f64 {
        self.raw_delta(epsilon).clamp(0.0, 1.0)
    }

    fn envelope(&self, epsilon: f64) -> f64 {
        let w = epsilon.exp();
        let cell = |g: &PrvGrid| {
            let i = g.first_above(epsilon);
            let here = if i < g.len() { g.pmf[i] } else { 0.0 };
            let below = if i > 0 { g.pmf[i - 1] } else { 0.0 };
            here.max(below)
        };
        self.y.truncated_mass + w * self.x.truncated_mass + cell(self.y) + w * cell(self.x)
    }

    fn result(&self, epsilon: f64) -> AccountantResult {
        AccountantResult {
            epsilon,
            delta: self.delta(epsilon),
            method: Method::Prv,
            m: self.y.steps,
            error_envelope: Some(self.envelope(epsilon)),
        }
    }
}

/// FFT accountant with automatic domain enlargement on wrap-around.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrvAccountant {
    pub spacing: Option<f64>,
}

impl PrvAccountant {
    pub fn with_spacing(spacing: f64) -> Self {
        Self { spacing: Some(spacing) }
    }

    /// Composed `(X, Y)` grids for `m` steps.
    pub fn composed_grids(&self, spec: &MechanismSpec, m: u64) -> Result<(PrvGrid, PrvGrid)> {
        let mut config = PrvGridConfig::for_compositions(m);
        if let Some(h) = self.spacing {
            config.spacing = h;
        }
        let mut last_err = None;
        for _ in 0..4 {
            let attempt = || -> Result<(PrvGrid, PrvGrid)> {
                let gx = prv_compose(&prv_discretize(spec, Hypothesis::UnderP, &config)?, m)?;
                let gy = prv_compose(&prv_discretize(spec, Hypothesis::UnderQ, &config)?, m)?;
                Ok((gx, gy))
            };
            match attempt() {
                Err(e @ AccountingError::WraparoundDetected { .. }) => {
                    last_err = Some(e);
                    config.sd_multiplier *= 2.0;
                }
                other => return other,
            }
        }
        Err(last_err.expect("loop ran at least once"))
    }
}

impl PrivacyAccountant for PrvAccountant {
    fn method(&self) -> Method {
        Method::Prv
    }

    fn delta(&self, spec: &MechanismSpec, m: u64, epsilon: f64) -> Result<AccountantResult> {
        if spec.is_trivial() {
            return Ok(AccountantResult { epsilon, delta: 0.0, method: Method::Prv, m, error_envelope: Some(0.0) });
        }
        let (gx, gy) = self.composed_grids(spec, m)?;
        prv_delta(&gx, &gy, epsilon)
    }

    fn epsilon(&self, spec: &MechanismSpec, m: u64, delta: f64) -> Result<AccountantResult> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(AccountingError::InvalidArgument(format!("delta={delta} must lie in (0, 1)")));
        }
        if spec.is_trivial() {
            return Ok(AccountantResult { epsilon: 0.0, delta, method: Method::Prv, m, error_envelope: Some(0.0) });
        }
        let (gx, gy) = self.composed_grids(spec, m)?;
        let tails = GridTails::new(&gx, &gy);
        let epsilon = invert_delta(|e| Ok(tails.delta(e)), delta, None)?
            .ok_or(AccountingError::NoFiniteEpsilon { delta, cap: EPSILON_CAP })?;
        Ok(tails.result(epsilon))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::analytic_gaussian_delta;

    fn spec(q: f64, sigma: f64) -> MechanismSpec {
        MechanismSpec::unit(q, sigma).unwrap()
    }

    fn point_mass(len: usize, at: usize, origin: f64, h: f64) -> PrvGrid {
        let mut pmf = vec![0.0; len];
        pmf[at] = 1.0;
        PrvGrid {
            hypothesis: Hypothesis::UnderP,
            spacing: h,
            origin,
            lower: origin,
            upper: origin + h * len as f64,
            pmf,
            truncated_mass: 0.0,
            steps: 1,
        }
    }

    #[test]
    fn grid_mass_accounting() {
        let config = PrvGridConfig { spacing: 1e-3, ..PrvGridConfig::for_compositions(10) };
        for hyp in Hypothesis::BOTH {
            let g = prv_discretize(&spec(0.05, 0.9), hyp, &config).unwrap();
            assert!(g.len().is_power_of_two());
            assert!((g.total_mass() + g.truncated_mass - 1.0).abs() < 1e-12);
            assert!(g.pmf.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn grid_mean_of_gaussian_pllr() {
        let h = 1e-3;
        let config = PrvGridConfig { spacing: h, ..Default::default() };
        let g = prv_discretize(&spec(1.0, 1.0), Hypothesis::UnderP, &config).unwrap();
        assert!((g.mean() + 0.5).abs() < h);
    }

    #[test]
    fn trivial_and_invalid_inputs() {
        assert!(prv_discretize(&spec(0.0, 1.0), Hypothesis::UnderP, &PrvGridConfig::default()).is_err());
        let bad = PrvGridConfig { spacing: 0.0, ..Default::default() };
        assert!(prv_discretize(&spec(0.1, 1.0), Hypothesis::UnderP, &bad).is_err());
        let acct = PrvAccountant::default();
        assert_eq!(acct.delta(&spec(0.0, 1.0), 10, 0.5).unwrap().delta, 0.0);
    }

    #[test]
    fn discretisation_error_is_first_order_in_h() {
        // Max cell error of the grid CDF against the exact CDF, evaluated at
        // the cell representatives, halves with h.
        let s = spec(0.1, 1.0);
        let err = |h: f64| {
            let config = PrvGridConfig { spacing: h, ..Default::default() };
            let g = prv_discretize(&s, Hypothesis::UnderQ, &config).unwrap();
            let mut cum = g.truncated_mass.min(pllr_cdf(g.lower, &s, Hypothesis::UnderQ));
            let mut worst = 0.0f64;
            for (i, p) in g.pmf.iter().enumerate() {
                if *p == 0.0 {
                    continue;
                }
                cum += p;
                let x = g.value(i);
                worst = worst.max((cum - pllr_cdf(x, &s, Hypothesis::UnderQ)).abs());
            }
            worst
        };
        let (coarse, fine) = (err(4e-3), err(2e-3));
        let ratio = coarse / fine;
        assert!((1.6..2.5).contains(&ratio), "coarse {coarse}, fine {fine}, ratio {ratio}");
    }

    #[test]
    fn composing_a_point_mass_moves_it() {
        let h = 0.25;
        let g = point_mass(64, 35, -2.0, h);
        let c = prv_compose(&g, 5).unwrap();
        let (imax, &pmax) = c.pmf.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert!((pmax - 1.0).abs() < 1e-12);
        assert!((c.value(imax) - 5.0 * g.value(35)).abs() < 1e-9);
    }

    #[test]
    fn two_fold_composition_matches_naive_convolution() {
        let config = PrvGridConfig { spacing: 2e-3, ..PrvGridConfig::for_compositions(2) };
        let g = prv_discretize(&spec(0.2, 1.0), Hypothesis::UnderQ, &config).unwrap();
        let c = prv_compose(&g, 2).unwrap();
        let support: Vec<(usize, f64)> = g.pmf.iter().copied().enumerate().filter(|(_, p)| *p > 0.0).collect();
        let mut naive = std::collections::BTreeMap::<usize, f64>::new();
        for &(i, a) in &support {
            for &(j, b) in &support {
                *naive.entry(i + j).or_default() += a * b;
            }
        }
        // value of naive index k is 2·origin + k·h
        for (k, p) in naive {
            let x = 2.0 * g.origin + g.spacing * k as f64;
            let idx = ((x - c.origin) / c.spacing).round();
            if idx < 0.0 || idx as usize >= c.len() {
                assert!(p < 1e-12, "k={k}: mass {p} outside the composed window");
                continue;
            }
            let idx = idx as usize;
            assert!((c.pmf[idx] - p).abs() < 1e-10, "k={k}: fft {} vs naive {p}", c.pmf[idx]);
        }
    }

    #[test]
    fn composed_mean_is_linear() {
        let s = spec(0.03, 0.8);
        let m = 200;
        let h = 1e-3;
        let config = PrvGridConfig { spacing: h, ..PrvGridConfig::for_compositions(m) };
        let g = prv_discretize(&s, Hypothesis::UnderQ, &config).unwrap();
        let c = prv_compose(&g, m).unwrap();
        assert!((c.mean() - m as f64 * g.mean()).abs() < 10.0 * h);
        assert!((c.truncated_mass - m as f64 * g.truncated_mass).abs() < 1e-24);
    }

    #[test]
    fn detects_wraparound() {
        let config = PrvGridConfig { spacing: 1e-3, sd_multiplier: 0.5, ..PrvGridConfig::for_compositions(1) };
        let g = prv_discretize(&spec(0.5, 1.0), Hypothesis::UnderQ, &config).unwrap();
        assert!(matches!(prv_compose(&g, 400), Err(AccountingError::WraparoundDetected { .. })));
    }

    #[test]
    fn analytic_gaussian_agreement() {
        let acct = PrvAccountant::with_spacing(1e-4);
        let r = acct.delta(&spec(1.0, 1.0), 1, 0.0).unwrap();
        assert!((r.delta - 0.38292).abs() < 1e-4, "{}", r.delta);
        assert!((r.delta - analytic_gaussian_delta(1.0, 0.0)).abs() < 1e-4);
    }

    #[test]
    fn epsilon_inversion_is_consistent() {
        let acct = PrvAccountant::with_spacing(2e-4);
        let s = spec(0.01, 0.9);
        let r = acct.epsilon(&s, 300, 1e-5).unwrap();
        assert!(r.delta <= 1e-5);
        let d = acct.delta(&s, 300, r.epsilon - 2e-6).unwrap().delta;
        assert!(d > 1e-5 - 1e-9);
    }
}
