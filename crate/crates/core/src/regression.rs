//! Ordinary least squares with intercept, solved by a column-pivoted
//! Householder QR factorization of the equilibrated design `[1 | X]`.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Largest accepted ratio between the extreme diagonal entries of `R`.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearFit {
    pub beta0_hat: f64,
    pub beta_hat: DVector<f64>,
    /// `‖y − ŷ‖² / (n − p − 1)`; zero when the fit has no residual degrees
    /// of freedom.
    pub residual_variance: f64,
}

impl LinearFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut y = x * &self.beta_hat;
        y.add_scalar_mut(self.beta0_hat);
        y
    }
}

pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if n <= p {
        return Err(Error::InsufficientSamples { n, required: p + 1 });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in regression data".into()));
    }
    let m = p + 1;
    let mut a = DMatrix::zeros(n, m);
    a.column_mut(0).fill(1.0);
    a.view_mut((0, 1), (n, p)).copy_from(x);

    let mut scale = vec![0.0; m];
    for (j, mut col) in a.column_iter_mut().enumerate() {
        let s = col.norm();
        if s == 0.0 {
            return Err(Error::RankDeficient(f64::INFINITY));
        }
        col /= s;
        scale[j] = s;
    }

    let mut qty = y.clone();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut diag = vec![0.0; m];
    let mut v = vec![0.0; n];
    {
        let data = a.as_mut_slice();
        let q = qty.as_mut_slice();
        for k in 0..m {
            let tail = |j: usize| j * n + k..(j + 1) * n;
            let piv = (k..m)
                .map(|j| (j, data[tail(j)].iter().map(|v| v * v).sum::<f64>()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(j, _)| j)
                .expect("non-empty pivot range");
            if piv != k {
                for i in 0..n {
                    data.swap(k * n + i, piv * n + i);
                }
                perm.swap(k, piv);
            }
            let col = &data[tail(k)];
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::RankDeficient(f64::INFINITY));
            }
            let alpha = if col[0] > 0.0 { -norm } else { norm };
            let len = n - k;
            v[..len].copy_from_slice(col);
            v[0] -= alpha;
            let vtv: f64 = v[..len].iter().map(|x| x * x).sum();
            if vtv > 0.0 {
                for j in k + 1..m {
                    let aj = &mut data[tail(j)];
                    let dot: f64 = v[..len].iter().zip(aj.iter()).map(|(a, b)| a * b).sum();
                    let f = 2.0 * dot / vtv;
                    for (x, vi) in aj.iter_mut().zip(&v[..len]) {
                        *x -= f * vi;
                    }
                }
                let qt = &mut q[k..];
                let dot: f64 = v[..len].iter().zip(qt.iter()).map(|(a, b)| a * b).sum();
                let f = 2.0 * dot / vtv;
                for (x, vi) in qt.iter_mut().zip(&v[..len]) {
                    *x -= f * vi;
                }
            }
            diag[k] = alpha;
            data[k * n + k] = alpha;
        }
    }

    let cond = diag[0].abs() / diag[m - 1].abs();
    if !(cond <= MAX_CONDITION) {
        return Err(Error::RankDeficient(cond));
    }

    // Back substitution on the upper triangle of the factored design.
    let mut z = vec![0.0; m];
    for k in (0..m).rev() {
        let mut acc = qty[k];
        for j in k + 1..m {
            acc -= a[(k, j)] * z[j];
        }
        z[k] = acc / diag[k];
    }
    let mut coef = vec![0.0; m];
    for k in 0..m {
        coef[perm[k]] = z[k] / scale[perm[k]];
    }

    let fit = LinearFit {
        beta0_hat: coef[0],
        beta_hat: DVector::from_column_slice(&coef[1..]),
        residual_variance: 0.0,
    };
    let resid = y - fit.predict(x);
    let dof = n - p - 1;
    let residual_variance = if dof == 0 {
        0.0
    } else {
        resid.norm_squared() / dof as f64
    };
    Ok(LinearFit {
        residual_variance,
        ..fit
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovarianceMatrix;
    use crate::linalg::Cholesky;
    use crate::synthdata::{sample_gaussian, sample_output};
    use proptest::prelude::*;

    /// Independent route: Cholesky solve of the normal equations.
    fn normal_equations(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
        let (n, p) = x.shape();
        let mut a = DMatrix::zeros(n, p + 1);
        a.column_mut(0).fill(1.0);
        a.view_mut((0, 1), (n, p)).copy_from(x);
        let ata = a.transpose() * &a;
        let aty = a.transpose() * y;
        Cholesky::factor(&ata).unwrap().solve_vec(&aty)
    }

    fn random_design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let cov = DMatrix::from_fn(p, p, |i, j| 0.3f64.powi((i as i32 - j as i32).abs()));
        sample_gaussian(&DVector::zeros(p), &CovarianceMatrix::Dense(cov), n, seed).unwrap()
    }

    #[test]
    fn hand_line() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let fit = ols_fit(&x, &y).unwrap();
        assert!((fit.beta0_hat - 1.0).abs() < 1e-12);
        assert!((fit.beta_hat[0] - 2.0).abs() < 1e-12);
        assert!(fit.residual_variance < 1e-24);
    }

    #[test]
    fn recovers_noiseless_affine_model() {
        let x = random_design(60, 5, 1);
        let beta = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, 0.0]);
        let y = sample_output(&x, 4.0, &beta, 0.0, 0).unwrap();
        let fit = ols_fit(&x, &y).unwrap();
        assert!((fit.beta0_hat - 4.0).abs() < 1e-8 * 4.0);
        for j in 0..5 {
            assert!((fit.beta_hat[j] - beta[j]).abs() < 1e-8 * beta.amax());
        }
        let resid = &y - fit.predict(&x);
        assert!(resid.amax() < 1e-10);
    }

    #[test]
    fn matches_normal_equations() {
        let x = random_design(200, 5, 2);
        let beta = DVector::from_vec(vec![0.3, 1.0, -1.0, 2.0, 0.1]);
        let y = sample_output(&x, -1.0, &beta, 0.1, 3).unwrap();
        let fit = ols_fit(&x, &y).unwrap();
        let oracle = normal_equations(&x, &y);
        assert!((fit.beta0_hat - oracle[0]).abs() < 1e-8);
        for j in 0..5 {
            assert!((fit.beta_hat[j] - oracle[j + 1]).abs() < 1e-8);
        }
        // Residuals are orthogonal to the design.
        let resid = &y - fit.predict(&x);
        assert!(resid.sum().abs() < 1e-8 * y.norm());
        for j in 0..5 {
            assert!(resid.dot(&x.column(j)).abs() < 1e-8 * y.norm());
        }
        assert!((fit.residual_variance - 0.01).abs() < 0.004);
    }

    #[test]
    fn residual_variance_estimates_noise() {
        let x = random_design(100_000, 2, 4);
        let y = sample_output(&x, 0.0, &DVector::from_vec(vec![1.0, 1.0]), 1.0, 5).unwrap();
        let fit = ols_fit(&x, &y).unwrap();
        assert!((fit.residual_variance - 1.0).abs() < 0.02);
    }

    #[test]
    fn error_paths() {
        let x = DMatrix::from_element(3, 3, 1.0);
        let y = DVector::zeros(3);
        assert!(matches!(ols_fit(&x, &y), Err(Error::InsufficientSamples { .. })));
        // Collinear columns.
        let mut x = random_design(20, 2, 6);
        let c0 = x.column(0).into_owned();
        x.column_mut(1).copy_from(&(c0 * 2.0));
        assert!(matches!(ols_fit(&x, &DVector::zeros(20)), Err(Error::RankDeficient(_))));
        // A constant column duplicates the intercept.
        let mut x = random_design(20, 2, 7);
        x.column_mut(1).fill(3.0);
        assert!(matches!(ols_fit(&x, &DVector::zeros(20)), Err(Error::RankDeficient(_))));
        assert!(ols_fit(&random_design(20, 2, 8), &DVector::zeros(19)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn shift_and_scale_equivariance(seed in 0u64..10_000, c in -50.0f64..50.0, a in prop_oneof![-20.0f64..-0.05, 0.05f64..20.0]) {
            let x = random_design(40, 3, seed);
            let y = sample_output(&x, 1.0, &DVector::from_vec(vec![1.0, -0.5, 2.0]), 0.5, seed + 1).unwrap();
            let base = ols_fit(&x, &y).unwrap();

            let mut shifted = y.clone();
            shifted.add_scalar_mut(c);
            let fs = ols_fit(&x, &shifted).unwrap();
            prop_assert!((fs.beta0_hat - base.beta0_hat - c).abs() < 1e-10 * (1.0 + c.abs()));
            prop_assert!((fs.beta_hat.clone() - base.beta_hat.clone()).amax() < 1e-10);

            let mut xs = x.clone();
            let new_col = xs.column(1) * a;
            xs.column_mut(1).copy_from(&new_col);
            let fa = ols_fit(&xs, &y).unwrap();
            let expected = base.beta_hat[1] / a;
            prop_assert!((fa.beta_hat[1] - expected).abs() < 1e-8 * expected.abs().max(1e-8));
        }
    }
}
