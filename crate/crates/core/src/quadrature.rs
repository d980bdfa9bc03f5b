//! Gauss–Hermite and composite Gauss–Legendre rules for expectations under a
//! normal law.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Node counts tried by the doubling schedule.
pub const HERMITE_SCHEDULE: [usize; 5] = [64, 128, 256, 512, 1024];

/// Probabilists' Gauss–Hermite rule: `E[f(Z)] ≈ Σ wᵢ f(zᵢ)` for `Z ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds an `n`-point rule: nodes are the eigenvalues of the Jacobi
    /// matrix (Golub–Welsch), polished by Newton steps on the orthonormal
    /// Hermite recurrence; weights are the Christoffel numbers
    /// `1 / Σ_{k<n} p_k(z)²`. The recurrence is rescaled on the fly so the
    /// outer nodes of large rules do not overflow.
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "Gauss-Hermite rule needs at least two nodes");
        let mut diag = vec![0.0; n];
        let mut off: Vec<f64> = (0..n).map(|k| (k as f64).sqrt()).collect();
        off.rotate_left(1);
        off[n - 1] = 0.0;
        tridiagonal_eigenvalues(&mut diag, &mut off);
        diag.sort_by(f64::total_cmp);

        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for &guess in &diag {
            let mut z = guess;
            for _ in 0..3 {
                let (p_n, p_nm1, _) = orthonormal_hermite(z, n);
                let step = p_n / ((n as f64).sqrt() * p_nm1);
                if !step.is_finite() {
                    break;
                }
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            let (_, _, log_sum_sq) = orthonormal_hermite(z, n);
            nodes.push(z);
            weights.push((-log_sum_sq).exp());
        }
        // symmetrise to remove rounding asymmetry
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let z = 0.5 * (nodes[j] - nodes[i]);
            let w = 0.5 * (weights[i] + weights[j]);
            nodes[i] = -z;
            nodes[j] = z;
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Shared rule for one of the node counts in [`HERMITE_SCHEDULE`].
    pub fn cached(n: usize) -> &'static GaussHermite {
        static RULES: OnceLock<Vec<GaussHermite>> = OnceLock::new();
        let rules = RULES.get_or_init(|| HERMITE_SCHEDULE.iter().map(|&k| GaussHermite::new(k)).collect());
        let idx = HERMITE_SCHEDULE
            .iter()
            .position(|&k| k == n)
            .unwrap_or_else(|| panic!("no cached Gauss-Hermite rule with {n} nodes"));
        &rules[idx]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(T)]` for `T ~ N(mean, sd²)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, mean: f64, sd: f64, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&z, &w)| w * f(mean + sd * z))
            .sum()
    }
}

/// Orthonormal probabilists' Hermite polynomials at `z`: returns
/// `(p_n, p_{n−1})` up to a common positive scale, and `ln Σ_{k<n} p_k(z)²`
/// (unscaled).
fn orthonormal_hermite(z: f64, n: usize) -> (f64, f64, f64) {
    const RESCALE: f64 = 1e100;
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sum_sq = 0.0;
    let mut log_scale = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let kf = k as f64;
        let next = (z * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt();
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE {
            cur /= RESCALE;
            prev /= RESCALE;
            sum_sq /= RESCALE * RESCALE;
            log_scale += RESCALE.ln();
        }
    }
    (cur, prev, sum_sq.ln() + 2.0 * log_scale)
}

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL; `diag` is
/// overwritten with the eigenvalues, `off[i]` couples rows `i` and `i + 1`.
fn tridiagonal_eigenvalues(diag: &mut [f64], off: &mut [f64]) {
    let n = diag.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 100, "tridiagonal QL failed to converge");
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
}

/// `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            dp = nf * (z * p1 - p2) / (z * z - 1.0);
            let step = p1 / dp;
            z -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `E[f(T)]` for `T ~ N(mean, sd²)` by composite Gauss–Legendre in the
/// standardised variable over `[-z_max, z_max]`.
///
/// `breaks` are points (in `T` units) where `f` has a kink; they become panel
/// boundaries so each panel integrates a smooth function.
pub fn normal_expectation_piecewise<F: Fn(f64) -> f64>(mean: f64, sd: f64, breaks: &[f64], f: F) -> f64 {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (gx, gw) = RULE.get_or_init(|| gauss_legendre(24));
    const Z_MAX: f64 = 40.0;
    const PANELS: usize = 320;

    let mut edges: Vec<f64> = (0..=PANELS).map(|i| -Z_MAX + 2.0 * Z_MAX * i as f64 / PANELS as f64).collect();
    for &b in breaks {
        let zb = (b - mean) / sd;
        if zb.is_finite() && zb > -Z_MAX && zb < Z_MAX {
            edges.push(zb);
        }
    }
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    let mut total = 0.0;
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        if half <= 0.0 {
            continue;
        }
        let panel: f64 = gx
            .iter()
            .zip(gw)
            .map(|(&u, &w)| {
                let z = mid + half * u;
                w * crate::normal::pdf(z) * f(mean + sd * z)
            })
            .sum();
        total += half * panel;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial_moment(k: u32) -> f64 {
        (1..k).step_by(2).map(f64::from).product()
    }

    #[test]
    fn hermite_rules_integrate_normal_moments() {
        for &n in &HERMITE_SCHEDULE {
            let rule = GaussHermite::cached(n);
            assert_eq!(rule.len(), n);
            let total: f64 = rule.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-13, "n={n}: weight sum {total}");
            for k in [2u32, 4, 6, 8, 10] {
                let m = rule.expect(0.0, 1.0, |z| z.powi(k as i32));
                let exact = double_factorial_moment(k);
                assert!((m / exact - 1.0).abs() < 1e-12, "n={n}, k={k}: {m} vs {exact}");
            }
            let odd = rule.expect(0.0, 1.0, |z| z.powi(5));
            assert!(odd.abs() < 1e-12);
        }
    }

    #[test]
    fn hermite_handles_shift_and_scale() {
        let rule = GaussHermite::cached(64);
        let m2 = rule.expect(-0.5, 2.0, |t| t * t);
        assert!((m2 - 4.25).abs() < 1e-12);
        let mgf = rule.expect(0.0, 1.0, f64::exp);
        assert!((mgf - 0.5f64.exp()).abs() < 1e-13);
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(24);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let i6: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(6)).sum();
        assert!((i6 - 2.0 / 7.0).abs() < 1e-14);
    }

    #[test]
    fn piecewise_expectation_of_kinked_function() {
        let e = normal_expectation_piecewise(0.0, 1.0, &[0.0], |t| t.abs().powi(3));
        assert!((e - crate::normal::abs_third_moment()).abs() < 1e-12);
        let shifted = normal_expectation_piecewise(1.0, 0.5, &[1.3], |t| (t - 1.3).abs());
        // E|T - c| for T ~ N(mu, s²): s·2φ(d) + (mu - c)(1 - 2Φ(-d)), d = (mu - c)/s
        let d: f64 = (1.0 - 1.3) / 0.5;
        let exact = 0.5 * 2.0 * crate::normal::pdf(d) + (1.0 - 1.3) * (1.0 - 2.0 * crate::normal::cdf(-d));
        assert!((shifted - exact).abs() < 1e-12);
    }
}
