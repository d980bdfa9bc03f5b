//! Monte Carlo estimate of `δ(ε)` for the `m`-fold composition, used as the
//! ground truth the accountants are checked against.
//!
//! Samples are generated in fixed-size blocks, each with its own ChaCha stream
//! derived from `(seed, block)`, so results are bit-identical regardless of
//! how blocks are scheduled across threads.

use crate::error::{AccountingError, Result};
use crate::mechanism::{draw_pllr, Hypothesis, MechanismSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const BLOCK: u64 = 1 << 14;

/// Minimum number of samples accepted by the estimators.
pub const MIN_SAMPLES: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub epsilon: f64,
    pub delta_hat: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub seed: u64,
}

fn block_rng(seed: u64, hypothesis: Hypothesis, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lane = match hypothesis {
        Hypothesis::UnderP => 0,
        Hypothesis::UnderQ => 1,
    };
    rng.set_stream(2 * block + lane);
    rng
}

/// Kahan-compensated sum of `m` PLLR draws.
#[inline]
fn composed_draw(spec: &MechanismSpec, hypothesis: Hypothesis, m: u64, rng: &mut ChaCha8Rng) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for _ in 0..m {
        let y = draw_pllr(spec, hypothesis, rng) - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

fn for_each_block<T, F>(n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, u64) -> T + Sync,
{
    let blocks = n.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let len = BLOCK.min(n - b * BLOCK);
            f(b, len)
        })
        .collect()
}

/// Counts of composed sums strictly above each threshold.
fn tail_counts(spec: &MechanismSpec, hypothesis: Hypothesis, m: u64, thresholds: &[f64], n: u64, seed: u64) -> Vec<u64> {
    let per_block = for_each_block(n, |b, len| {
        let mut rng = block_rng(seed, hypothesis, b);
        let mut counts = vec![0u64; thresholds.len()];
        for _ in 0..len {
            let s = composed_draw(spec, hypothesis, m, &mut rng);
            for (c, &t) in counts.iter_mut().zip(thresholds) {
                if s > t {
                    *c += 1;
                }
            }
        }
        counts
    });
    per_block.into_iter().fold(vec![0u64; thresholds.len()], |mut acc, c| {
        acc.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        acc
    })
}

/// All `n` composed sums under one hypothesis, in block order.
pub fn composed_samples(spec: &MechanismSpec, hypothesis: Hypothesis, m: u64, n: u64, seed: u64) -> Vec<f64> {
    for_each_block(n, |b, len| {
        let mut rng = block_rng(seed, hypothesis, b);
        (0..len).map(|_| composed_draw(spec, hypothesis, m, &mut rng)).collect::<Vec<_>>()
    })
    .concat()
}

fn check_args(m: u64, n: u64) -> Result<()> {
    if m == 0 {
        return Err(AccountingError::InvalidArgument("m must be at least 1".into()));
    }
    if n < MIN_SAMPLES {
        return Err(AccountingError::InvalidArgument(format!("n_samples={n} below the minimum {MIN_SAMPLES}")));
    }
    Ok(())
}

fn estimate(epsilon: f64, count_y: u64, count_x: u64, n: u64, seed: u64) -> McEstimate {
    let nf = n as f64;
    let py = count_y as f64 / nf;
    let px = count_x as f64 / nf;
    let w = epsilon.exp();
    let weighted = if count_x == 0 { 0.0 } else { w * px };
    let var = py * (1.0 - py) / nf + if count_x == 0 { 0.0 } else { w * w * px * (1.0 - px) / nf };
    McEstimate { epsilon, delta_hat: py - weighted, stderr: var.sqrt(), n_samples: n, seed }
}

/// `δ̂` at several ε values from one set of samples.
pub fn mc_delta_grid(spec: &MechanismSpec, m: u64, epsilons: &[f64], n_samples: u64, seed: u64) -> Result<Vec<McEstimate>> {
    check_args(m, n_samples)?;
    if spec.is_trivial() {
        return Ok(epsilons
            .iter()
            .map(|&epsilon| McEstimate { epsilon, delta_hat: 0.0, stderr: 0.0, n_samples, seed })
            .collect());
    }
    let ty = tail_counts(spec, Hypothesis::UnderQ, m, epsilons, n_samples, seed);
    let tx = tail_counts(spec, Hypothesis::UnderP, m, epsilons, n_samples, seed);
    Ok(epsilons.iter().enumerate().map(|(i, &e)| estimate(e, ty[i], tx[i], n_samples, seed)).collect())
}

/// Monte Carlo `δ̂(ε)` with its standard error.
pub fn mc_delta(spec: &MechanismSpec, m: u64, epsilon: f64, n_samples: u64, seed: u64) -> Result<McEstimate> {
    Ok(mc_delta_grid(spec, m, &[epsilon], n_samples, seed)?[0])
}

/// Sorted composed sums under both hypotheses, for repeated tail queries.
#[derive(Debug, Clone)]
pub struct McSamples {
    under_p: Vec<f64>,
    under_q: Vec<f64>,
    seed: u64,
}

impl McSamples {
    pub fn draw(spec: &MechanismSpec, m: u64, n_samples: u64, seed: u64) -> Result<Self> {
        check_args(m, n_samples)?;
        let mut under_p = composed_samples(spec, Hypothesis::UnderP, m, n_samples, seed);
        let mut under_q = composed_samples(spec, Hypothesis::UnderQ, m, n_samples, seed);
        under_p.sort_by(f64::total_cmp);
        under_q.sort_by(f64::total_cmp);
        Ok(Self { under_p, under_q, seed })
    }

    pub fn n_samples(&self) -> u64 {
        self.under_p.len() as u64
    }

    fn above(sorted: &[f64], x: f64) -> u64 {
        (sorted.len() - sorted.partition_point(|&v| v <= x)) as u64
    }

    pub fn estimate(&self, epsilon: f64) -> McEstimate {
        let cy = Self::above(&self.under_q, epsilon);
        let cx = Self::above(&self.under_p, epsilon);
        estimate(epsilon, cy, cx, self.n_samples(), self.seed)
    }

    /// ε interval `[lo, hi]` with `δ̂(lo) − 3se ≥ delta` (or `lo = 0`) and
    /// `δ̂(hi) + 3se ≤ delta`.
    pub fn epsilon_bracket(&self, delta: f64) -> Result<(f64, f64)> {
        let n = self.n_samples() as f64;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(AccountingError::InvalidArgument(format!("delta={delta} must lie in (0, 1)")));
        }
        if delta < 10.0 / n {
            return Err(AccountingError::IntervalUnresolvable { delta, resolution: 10.0 / n });
        }
        let upper_band = |e: f64| {
            let est = self.estimate(e);
            est.delta_hat + 3.0 * est.stderr
        };
        let lower_band = |e: f64| {
            let est = self.estimate(e);
            est.delta_hat - 3.0 * est.stderr
        };
        let top = self.under_q.last().copied().unwrap_or(0.0).max(0.0) + 1.0;
        // hi: first ε where the upper band drops to the target
        let (mut a, mut b) = (0.0, top);
        if upper_band(0.0) <= delta {
            b = 0.0;
        }
        while b - a > 1e-6 {
            let mid = 0.5 * (a + b);
            if upper_band(mid) <= delta {
                b = mid;
            } else {
                a = mid;
            }
        }
        let hi = b;
        // lo: last ε where the lower band is still above the target
        let lo = if lower_band(0.0) < delta {
            0.0
        } else {
            let (mut a, mut b) = (0.0, hi);
            while b - a > 1e-6 {
                let mid = 0.5 * (a + b);
                if lower_band(mid) >= delta {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            a
        };
        Ok((lo.min(hi), hi))
    }
}

/// Monte Carlo ε bracket for a target δ.
pub fn mc_epsilon_bracket(spec: &MechanismSpec, m: u64, delta: f64, n_samples: u64, seed: u64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(AccountingError::InvalidArgument(format!("delta={delta} must lie in (0, 1)")));
    }
    if delta < 10.0 / n_samples as f64 {
        return Err(AccountingError::IntervalUnresolvable { delta, resolution: 10.0 / n_samples as f64 });
    }
    McSamples::draw(spec, m, n_samples, seed)?.epsilon_bracket(delta)
}
