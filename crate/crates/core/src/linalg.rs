use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix2};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

/// Dense lower Cholesky factor of a small symmetric positive definite matrix,
/// stored row-major.
#[derive(Debug, Clone)]
pub(crate) struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors `a` (row-major `n × n`). A failed pivot is retried once with a
    /// ridge of `1e-10 · max diag`.
    pub(crate) fn factor(a: &[f64], n: usize) -> Option<Self> {
        Self::try_factor(a, n, 0.0).or_else(|| {
            let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
            if scale > 0.0 && scale.is_finite() {
                Self::try_factor(a, n, 1e-10 * scale)
            } else {
                None
            }
        })
    }

    fn try_factor(a: &[f64], n: usize, ridge: f64) -> Option<Self> {
        let mut l = alloc::vec![0.0; n * n];
        let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i * n + j];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    sum += ridge;
                    if !(sum > 1e-14 * scale) {
                        return None;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Some(Self { n, l })
    }

    /// Solves `A x = b` in place.
    pub(crate) fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted
/// non-increasing and eigenvectors as matching columns.
pub(crate) fn sorted_symmetric_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        // Fix the sign so the largest-magnitude entry is positive.
        let (imax, _) = v.iamax_full();
        if v[(imax, 0)] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(dst, &v);
    }
    (values, vectors)
}

/// Closest orthonormal matrix (polar factor) of a 2×2 matrix.
pub(crate) fn polar2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let svd = m.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => u * v_t,
        _ => Matrix2::identity(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let c = Cholesky::factor(&a, 3).unwrap();
        let mut x = [1.0, 2.0, 3.0];
        c.solve_in_place(&mut x);
        for i in 0..3 {
            let r: f64 = (0..3).map(|k| a[i * 3 + k] * x[k]).sum();
            assert!((r - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_zero_matrix() {
        assert!(Cholesky::factor(&[0.0; 4], 2).is_none());
    }

    #[test]
    fn polar_of_scaled_rotation_is_the_rotation() {
        let (s, c) = 0.7f64.sin_cos();
        let r = Matrix2::new(c, -s, s, c);
        assert!((polar2(&(r * 3.0)) - r).amax() < 1e-12);
    }
}
