//! Closed-form Cramér-Rao bounds for `vec(Σ)` in the known-mean Gaussian
//! model, with and without a block-diagonal constraint, and the asymptotic
//! variance of the block log-determinant.
//!
//! `vec` stacks columns: the pair `(i, j)` sits at position `j·p + i`.

use std::io::Write;

use nalgebra::DMatrix;

use crate::covariance::project_block;
use crate::linalg::{check_square, check_symmetric, Cholesky};
use crate::partition::Partition;
use crate::{Error, Result};

/// Largest dimension for the dense `p² × p²` bound matrices.
pub const MAX_CRB_DIM: usize = 40;
/// Largest magnitude tolerated outside the block pattern in [`crb_block`].
pub const PATTERN_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct CrbMatrix {
    p: usize,
    entries: DMatrix<f64>,
}

impl CrbMatrix {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn vec_index(&self, i: usize, j: usize) -> usize {
        vec_index(self.p, i, j)
    }

    /// Entry for the pairs `(i, j)` and `(i2, j2)`.
    pub fn get(&self, i: usize, j: usize, i2: usize, j2: usize) -> f64 {
        self.entries[(self.vec_index(i, j), self.vec_index(i2, j2))]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.entries.clone().symmetric_eigenvalues().min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.entries.clone().symmetric_eigenvalues().max()
    }

    /// Long-format CSV `i,j,i2,j2,value` with 1-based indices.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "i2", "j2", "value"])?;
        let p = self.p;
        for j2 in 0..p {
            for i2 in 0..p {
                for j in 0..p {
                    for i in 0..p {
                        w.write_record(&[
                            (i + 1).to_string(),
                            (j + 1).to_string(),
                            (i2 + 1).to_string(),
                            (j2 + 1).to_string(),
                            format!("{:e}", self.get(i, j, i2, j2)),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn vec_index(p: usize, i: usize, j: usize) -> usize {
    j * p + i
}

fn validate(sigma: &DMatrix<f64>) -> Result<usize> {
    let p = sigma.nrows();
    check_square(sigma, p)?;
    if p > MAX_CRB_DIM {
        return Err(Error::TooLarge {
            what: "Cramér-Rao bound matrix",
            size: p,
            limit: MAX_CRB_DIM,
            hint: "the bound is stored densely with p^4 entries",
        });
    }
    check_symmetric(sigma)?;
    if Cholesky::factor(sigma).is_none() {
        return Err(Error::NotPositiveDefinite {
            group: "full matrix".into(),
        });
    }
    Ok(p)
}

fn build(sigma: &DMatrix<f64>, keep: impl Fn(usize, usize, usize, usize) -> bool) -> CrbMatrix {
    let p = sigma.nrows();
    let s = |a: usize, b: usize| sigma[(a, b)];
    let entries = DMatrix::from_fn(p * p, p * p, |r, c| {
        let (i, j) = (r % p, r / p);
        let (i2, j2) = (c % p, c / p);
        if keep(i, j, i2, j2) {
            s(i, i2) * s(j, j2) + s(i, j2) * s(j, i2)
        } else {
            0.0
        }
    });
    CrbMatrix { p, entries }
}

/// Bound with entries `σ_ii'σ_jj' + σ_ij'σ_ji'`.
pub fn crb_unconstrained(sigma: &DMatrix<f64>) -> Result<CrbMatrix> {
    validate(sigma)?;
    Ok(build(sigma, |_, _, _, _| true))
}

/// Bound under the block pattern `b`: the unconstrained entry where all four
/// indices share a group, zero elsewhere.
pub fn crb_block(sigma: &DMatrix<f64>, b: &Partition) -> Result<CrbMatrix> {
    let p = validate(sigma)?;
    if b.p() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: b.p(),
        });
    }
    let labels = b.labels();
    for j in 0..p {
        for i in 0..p {
            if labels[i] != labels[j] && sigma[(i, j)].abs() > PATTERN_TOLERANCE {
                return Err(Error::InvalidInput(format!(
                    "entry ({}, {}) = {} lies outside the block pattern {b}",
                    i + 1,
                    j + 1,
                    sigma[(i, j)]
                )));
            }
        }
    }
    Ok(build(sigma, |i, j, i2, j2| {
        let g = labels[i];
        labels[j] == g && labels[i2] == g && labels[j2] == g
    }))
}

/// `2·tr(Σ_B⁻¹ Σ Σ_B⁻¹ Σ)`, the asymptotic variance of
/// `√n (log|S_B| − log|Σ_B|)`.
pub fn logdet_clt_variance_unscaled(sigma: &DMatrix<f64>, b: &Partition) -> Result<f64> {
    let sb = project_block(sigma, b)?;
    let chol = sb
        .factor()
        .map_err(|e| match e {
            Error::NotPositiveDefinite { group } => Error::SingularBlock { group },
            other => other,
        })?;
    // M = Σ_B⁻¹ Σ, solved block by block.
    let mut m = DMatrix::zeros(b.p(), b.p());
    for (g, f) in b.groups().iter().zip(&chol) {
        let rows = crate::linalg::submatrix(sigma, g, &(0..b.p()).collect::<Vec<_>>());
        let solved = f.solve_mat(&rows);
        for (a, &i) in g.iter().enumerate() {
            m.row_mut(i).copy_from(&solved.row(a));
        }
    }
    Ok(2.0 * (&m * &m).trace())
}

/// `2·tr(Σ_B⁻¹ Σ Σ_B⁻¹ Σ) / p`; equal to 2 when `Σ_B = Σ`.
pub fn logdet_clt_variance(sigma: &DMatrix<f64>, b: &Partition) -> Result<f64> {
    Ok(logdet_clt_variance_unscaled(sigma, b)? / b.p() as f64)
}
