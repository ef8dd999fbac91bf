//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative pivot tolerance used by every positive-definiteness test.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

/// Relative tolerance for symmetry checks.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Lower-triangular Cholesky factor `m = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Factors a symmetric matrix, reading only its lower triangle.
    ///
    /// Fails (returns `None`) when a pivot drops below
    /// `PIVOT_TOLERANCE * max_diagonal`, which is the positive-definiteness
    /// test used across the crate.
    pub fn factor(m: &DMatrix<f64>) -> Option<Self> {
        let n = m.nrows();
        assert_eq!(n, m.ncols(), "Cholesky of a non-square matrix");
        let mut l = m.clone();
        if cholesky_in_place(l.as_mut_slice(), n) {
            Some(Self { l })
        } else {
            None
        }
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L z = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        forward_substitute(self.l.as_slice(), self.dim(), b);
    }

    /// Solves `Lᵀ z = b` in place.
    pub fn backward_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        let l = self.l.as_slice();
        for i in (0..n).rev() {
            let mut acc = b[i];
            for k in i + 1..n {
                acc -= l[k + i * n] * b[k];
            }
            b[i] = acc / l[i + i * n];
        }
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.forward_in_place(x.as_mut_slice());
        self.backward_in_place(x.as_mut_slice());
        x
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        let n = self.dim();
        for mut col in x.column_iter_mut() {
            let s = col.as_mut_slice();
            debug_assert_eq!(s.len(), n);
            self.forward_in_place(s);
            self.backward_in_place(s);
        }
        x
    }
}

/// In-place Cholesky of a column-major `n x n` buffer. On success the lower
/// triangle holds `L` and the strict upper triangle is zeroed.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    debug_assert!(a.len() >= n * n);
    let max_diag = (0..n).map(|i| a[i + i * n]).fold(0.0_f64, f64::max);
    if n > 0 && !(max_diag > 0.0 && max_diag.is_finite()) {
        return false;
    }
    let tol = PIVOT_TOLERANCE * max_diag;
    for j in 0..n {
        // Left-looking: column j minus contributions of previous columns.
        for k in 0..j {
            let ljk = a[j + k * n];
            if ljk != 0.0 {
                for i in j..n {
                    a[i + j * n] -= a[i + k * n] * ljk;
                }
            }
        }
        let d = a[j + j * n];
        if !(d > tol) {
            return false;
        }
        let s = d.sqrt();
        a[j + j * n] = s;
        for i in j + 1..n {
            a[i + j * n] /= s;
        }
        for i in 0..j {
            a[i + j * n] = 0.0;
        }
    }
    true
}

/// Solves `L z = b` for a column-major lower-triangular `n x n` buffer.
pub(crate) fn forward_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for j in 0..n {
        let z = b[j] / l[j + j * n];
        b[j] = z;
        for i in j + 1..n {
            b[i] -= l[i + j * n] * z;
        }
    }
}

/// Dense submatrix `m[rows, cols]`.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

pub fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Errors unless `m` is square and symmetric to `SYMMETRY_TOLERANCE`
/// relative to its largest entry.
pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if !a.is_finite() || !b.is_finite() || (a - b).abs() > SYMMETRY_TOLERANCE * scale {
                return Err(Error::NotSymmetric { row: i, col: j });
            }
        }
    }
    Ok(())
}

pub fn check_square(m: &DMatrix<f64>, p: usize) -> Result<()> {
    if m.nrows() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: m.nrows(),
        });
    }
    if m.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: m.ncols(),
        });
    }
    Ok(())
}

/// `xᵀ x`, routed through the general matrix product (nalgebra's `tr_mul`
/// does not use the blocked kernel).
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let xt = x.transpose();
    let mut g = &xt * x;
    symmetrize(&mut g);
    g
}

/// Replaces `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0]);
        let c = Cholesky::factor(&m).unwrap();
        let r = c.l() * c.l().transpose();
        assert!((r - &m).abs().max() < 1e-12);
        assert!((c.log_det() - m.determinant().ln()).abs() < 1e-12);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = c.solve_vec(&b);
        assert!((&m * x - b).abs().max() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_singular_and_indefinite() {
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(Cholesky::factor(&singular).is_none());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(Cholesky::factor(&indefinite).is_none());
        assert!(Cholesky::factor(&DMatrix::zeros(1, 1)).is_none());
    }

    #[test]
    fn symmetry_check() {
        let mut m = DMatrix::identity(3, 3);
        m[(0, 1)] = 0.5;
        assert!(matches!(
            check_symmetric(&m),
            Err(Error::NotSymmetric { row: 1, col: 0 })
        ));
        m[(1, 0)] = 0.5;
        check_symmetric(&m).unwrap();
    }

    #[test]
    fn gram_matches_naive_product() {
        let x = DMatrix::from_fn(7, 3, |i, j| (i as f64 + 1.0) * (j as f64 - 1.3));
        let g = gram(&x);
        let naive = x.transpose() * &x;
        assert!((g - naive).abs().max() < 1e-10);
    }
}
