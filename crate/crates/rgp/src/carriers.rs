//! Gradient carriers: orthonormal low-rank factors spanning the leading
//! subspaces of a historical weight update.

use crate::error::{Result, RgpError};
use crate::linalg::gram_schmidt;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Power iterations used during training.
pub const DEFAULT_POWER_ITERATIONS: usize = 2;

/// Power iterations used when carriers are compared against an exact SVD.
pub const ORACLE_POWER_ITERATIONS: usize = 10;

/// `L` (`d_out × r`, orthonormal columns) and `R` (`r × d_in`, orthonormal rows).
#[derive(Debug, Clone, PartialEq)]
pub struct CarrierPair {
    pub l: DMatrix<f64>,
    pub r: DMatrix<f64>,
    requested: usize,
}

impl CarrierPair {
    /// Builds a pair from explicit factors, checking shapes only.
    pub fn new(l: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if l.ncols() != r.nrows() {
            return Err(RgpError::ShapeMismatch {
                context: "carrier pair",
                expected: (r.nrows(), r.ncols()),
                found: (l.ncols(), r.ncols()),
            });
        }
        let requested = l.ncols();
        Ok(Self { l, r, requested })
    }

    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    pub fn requested_rank(&self) -> usize {
        self.requested
    }

    /// True when the update had numerical rank below the requested rank.
    pub fn is_reduced(&self) -> bool {
        self.rank() < self.requested
    }

    pub fn d_out(&self) -> usize {
        self.l.nrows()
    }

    pub fn d_in(&self) -> usize {
        self.r.ncols()
    }

    /// `L·Lᵀ·W·Rᵀ·R`.
    pub fn project(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        &self.l * (self.l.transpose() * w * self.r.transpose()) * &self.r
    }
}

/// Carriers with the default iteration count.
pub fn decompose_carriers(update: &DMatrix<f64>, rank: usize, seed: u64) -> Result<CarrierPair> {
    decompose_carriers_with(update, rank, DEFAULT_POWER_ITERATIONS, seed)
}

/// Subspace power iteration from a seeded Gaussian start. Returns a reduced
/// pair when the update's numerical rank is below `rank`.
pub fn decompose_carriers_with(
    update: &DMatrix<f64>,
    rank: usize,
    iterations: usize,
    seed: u64,
) -> Result<CarrierPair> {
    let (rows, cols) = update.shape();
    if rank == 0 || rank > rows.min(cols) {
        return Err(RgpError::RankTooLarge { rank, rows, cols });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = DMatrix::from_fn(cols, rank, |_, _| StandardNormal.sample(&mut rng));
    let mut rt = gram_schmidt(&start).q;
    let mut l = gram_schmidt(&(update * &rt)).q;
    for _ in 0..iterations {
        rt = gram_schmidt(&(update.transpose() * &l)).q;
        l = gram_schmidt(&(update * &rt)).q;
    }
    rt = gram_schmidt(&(update.transpose() * &l)).q;
    let k = l.ncols().min(rt.ncols());
    let l = l.columns(0, k).into_owned();
    let r = rt.columns(0, k).transpose();
    Ok(CarrierPair { l, r, requested: rank })
}
