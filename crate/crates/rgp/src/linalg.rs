//! Modified Gram–Schmidt with selective re-orthogonalisation.

use nalgebra::DMatrix;

/// Columns whose norm falls below this fraction of their original norm after
/// projection are treated as linearly dependent and dropped.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Inner products above this trigger a second projection pass.
pub const REORTHOGONALIZE_ABOVE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Orthonormal {
    /// Orthonormal basis, one column per kept input column.
    pub q: DMatrix<f64>,
    /// Indices of input columns dropped as dependent.
    pub dropped: Vec<usize>,
}

impl Orthonormal {
    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    pub fn is_full_rank(&self) -> bool {
        self.dropped.is_empty()
    }
}

fn project_out(v: &mut nalgebra::DVector<f64>, basis: &[nalgebra::DVector<f64>]) {
    for b in basis {
        let c = b.dot(v);
        v.axpy(-c, b, 1.0);
    }
}

/// Orthonormalises the columns of `m` left to right. The span of the kept
/// columns equals the span of `m`.
pub fn gram_schmidt(m: &DMatrix<f64>) -> Orthonormal {
    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(m.ncols());
    let mut dropped = Vec::new();
    for j in 0..m.ncols() {
        let mut v = m.column(j).into_owned();
        let original = v.norm();
        if original == 0.0 || !original.is_finite() {
            dropped.push(j);
            continue;
        }
        project_out(&mut v, &basis);
        let mut norm = v.norm();
        if norm <= RANK_TOLERANCE * original {
            dropped.push(j);
            continue;
        }
        v /= norm;
        let loss = basis.iter().map(|b| b.dot(&v).abs()).fold(0.0, f64::max);
        if loss > REORTHOGONALIZE_ABOVE {
            project_out(&mut v, &basis);
            norm = v.norm();
            v /= norm;
        }
        basis.push(v);
    }
    let q = if basis.is_empty() {
        DMatrix::zeros(m.nrows(), 0)
    } else {
        DMatrix::from_columns(&basis)
    };
    Orthonormal { q, dropped }
}

/// Largest entry of `|QᵀQ − I|`.
pub fn orthogonality_error(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn identity_is_fixed() {
        let i = DMatrix::<f64>::identity(5, 5);
        let o = gram_schmidt(&i);
        assert_eq!(o.q, i);
        assert!(o.is_full_rank());
    }

    #[test]
    fn orthonormal_input_unchanged() {
        let q = nalgebra::linalg::QR::new(random(7, 3, 1)).q();
        let o = gram_schmidt(&q);
        assert!((o.q - &q).abs().max() < 1e-14);
    }

    #[test]
    fn random_tall_matrix_against_qr() {
        let m = random(10, 4, 2);
        let o = gram_schmidt(&m);
        assert!(orthogonality_error(&o.q) < 1e-12);
        let reference = nalgebra::linalg::QR::new(m).q();
        let p = &o.q * o.q.transpose();
        let p_ref = &reference * reference.transpose();
        assert!((p - p_ref).abs().max() < 1e-12);
    }

    #[test]
    fn dependent_columns_are_dropped() {
        let mut m = random(6, 3, 3);
        let c = m.column(0) * 2.0 - m.column(1) * 0.5;
        m.set_column(2, &c);
        let o = gram_schmidt(&m);
        assert_eq!(o.rank(), 2);
        assert_eq!(o.dropped, vec![2]);
        assert!(orthogonality_error(&o.q) < 1e-12);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let o = gram_schmidt(&DMatrix::zeros(4, 2));
        assert_eq!(o.rank(), 0);
        assert_eq!(o.q.nrows(), 4);
    }

    #[test]
    fn nearly_parallel_columns_stay_orthogonal() {
        let mut m = DMatrix::<f64>::zeros(5, 2);
        m[(0, 0)] = 1.0;
        m[(0, 1)] = 1.0;
        m[(1, 1)] = 1e-8;
        let o = gram_schmidt(&m);
        assert_eq!(o.rank(), 2);
        assert!(orthogonality_error(&o.q) < 1e-14);
    }
}
