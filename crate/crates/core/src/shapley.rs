//! Exact Shapley effects for the Gaussian linear model `Y = β₀ + βᵀX`,
//! `X ~ N(μ, Σ)`.
//!
//! With `V(u) = Var(Y | X_u)` the effect of input `i` is
//!
//! ```text
//! η_i = 1/(p V(Y)) Σ_{u ⊆ −i} C(p−1, |u|)⁻¹ (V(u) − V(u ∪ {i}))
//! ```
//!
//! [`shapley_full`] evaluates this over all `2^p` subsets. When `Σ` is block
//! diagonal the groups are independent and [`shapley_block`] evaluates the
//! same sum inside each group only, at cost `O(K 2^m)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::covariance::{estimate_covariance, group_label, CovarianceMatrix, StructureConfig};
use crate::linalg::{submatrix, subvector, Cholesky, PIVOT_TOLERANCE};
use crate::partition::Partition;
use crate::regression::{ols_fit, LinearFit};
use crate::{Error, Result};

/// Largest dimension for [`shapley_full`].
pub const MAX_FULL_DIM: usize = 20;
/// Largest group size for [`shapley_block`].
pub const MAX_BLOCK_DIM: usize = 25;

/// Tolerance on the normalization and range of Shapley vectors.
pub const SHAPLEY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLinearModel {
    beta0: f64,
    beta: DVector<f64>,
    cov: CovarianceMatrix,
}

impl GaussianLinearModel {
    /// Validates dimensions, positive definiteness and `βᵀΣβ > 0`.
    pub fn new(beta0: f64, beta: DVector<f64>, cov: CovarianceMatrix) -> Result<Self> {
        let p = cov.p();
        if beta.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: beta.len(),
            });
        }
        match &cov {
            CovarianceMatrix::Dense(m) => {
                crate::linalg::check_square(m, p)?;
                crate::linalg::check_symmetric(m)?;
                if Cholesky::factor(m).is_none() {
                    return Err(Error::NotPositiveDefinite {
                        group: "full matrix".into(),
                    });
                }
            }
            CovarianceMatrix::Block(b) => {
                b.factor()?;
            }
        }
        let model = Self { beta0, beta, cov };
        if !(model.output_variance() > 0.0) {
            return Err(Error::InvalidInput("output variance βᵀΣβ is zero".into()));
        }
        Ok(model)
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn cov(&self) -> &CovarianceMatrix {
        &self.cov
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// `Var(Y) = βᵀΣβ`.
    pub fn output_variance(&self) -> f64 {
        match &self.cov {
            CovarianceMatrix::Dense(m) => self.beta.dot(&(m * &self.beta)),
            CovarianceMatrix::Block(b) => b.quad_form(&self.beta),
        }
    }
}

/// Per-input effects, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapleyVector {
    eta: DVector<f64>,
}

impl ShapleyVector {
    /// Checks normalization and range within [`SHAPLEY_TOLERANCE`].
    pub fn new(eta: DVector<f64>) -> Result<Self> {
        let sum = eta.sum();
        if !((sum - 1.0).abs() <= SHAPLEY_TOLERANCE) {
            return Err(Error::InvalidInput(format!(
                "Shapley effects sum to {sum}, not 1"
            )));
        }
        if let Some(i) = eta
            .iter()
            .position(|&e| !(-SHAPLEY_TOLERANCE..=1.0 + SHAPLEY_TOLERANCE).contains(&e))
        {
            return Err(Error::InvalidInput(format!(
                "Shapley effect {} = {} is outside [0, 1]",
                i + 1,
                eta[i]
            )));
        }
        Ok(Self { eta })
    }

    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    /// `Σ_i |η_i − other_i|`.
    pub fn l1_distance(&self, other: &ShapleyVector) -> f64 {
        (&self.eta - &other.eta).abs().sum()
    }
}

/// `Var(βᵀX | X_u)` from the Schur complement of `Σ_{u,u}`.
pub fn conditional_variance(cov: &DMatrix<f64>, beta: &DVector<f64>, u: &[usize]) -> Result<f64> {
    let p = cov.nrows();
    crate::linalg::check_square(cov, p)?;
    if beta.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: beta.len(),
        });
    }
    let mut in_u = vec![false; p];
    for &i in u {
        if i >= p {
            return Err(Error::IndexOutOfRange { index: i, p });
        }
        in_u[i] = true;
    }
    let cond: Vec<usize> = (0..p).filter(|&i| in_u[i]).collect();
    let rest: Vec<usize> = (0..p).filter(|&i| !in_u[i]).collect();
    if rest.is_empty() {
        return Ok(0.0);
    }
    let b_rest = subvector(beta, &rest);
    let s_rr = submatrix(cov, &rest, &rest);
    if cond.is_empty() {
        return Ok(b_rest.dot(&(&s_rr * &b_rest)).max(0.0));
    }
    let s_uu = submatrix(cov, &cond, &cond);
    let s_ur = submatrix(cov, &cond, &rest);
    let chol = Cholesky::factor(&s_uu).ok_or_else(|| Error::NotPositiveDefinite {
        group: group_label(&cond),
    })?;
    let schur = s_rr - s_ur.transpose() * chol.solve_mat(&s_ur);
    Ok(b_rest.dot(&(schur * &b_rest)).max(0.0))
}

/// `1 / C(n, k)` for `k = 0..=n`, from exact integer binomials.
pub fn inverse_binomials(n: usize) -> Vec<f64> {
    let mut c: u64 = 1;
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        out.push(1.0 / c as f64);
        c = c * (n - k) as u64 / (k + 1) as u64;
    }
    out
}

/// Unnormalized Shapley sums `(1/m) Σ_{u ⊆ −i} C(m−1,|u|)⁻¹ (V(u) − V(u∪i))`
/// for a table of subset values indexed by bitmask over `m` inputs.
fn shapley_sums(values: &[f64], m: usize) -> Vec<f64> {
    let weights = inverse_binomials(m.saturating_sub(1));
    (0..m)
        .map(|i| {
            let bit = 1usize << i;
            let mut acc = 0.0;
            for mask in 0..values.len() {
                if mask & bit == 0 {
                    acc += weights[mask.count_ones() as usize] * (values[mask] - values[mask | bit]);
                }
            }
            acc / m as f64
        })
        .collect()
}

fn mask_indices(mask: usize, m: usize) -> Vec<usize> {
    (0..m).filter(|&i| mask & (1 << i) != 0).collect()
}

/// Shapley effects over all `2^p` subsets of a dense covariance.
pub fn shapley_full(model: &GaussianLinearModel) -> Result<ShapleyVector> {
    let p = model.p();
    if p > MAX_FULL_DIM {
        return Err(Error::TooLarge {
            what: "full Shapley computation",
            size: p,
            limit: MAX_FULL_DIM,
            hint: "use shapley_block with a block-diagonal covariance",
        });
    }
    let cov = model.cov().to_dense();
    let beta = model.beta();
    let values: Vec<f64> = (0..1usize << p)
        .into_par_iter()
        .map(|mask| conditional_variance(&cov, beta, &mask_indices(mask, p)))
        .collect::<Result<_>>()?;
    let total = values[0];
    let sums = shapley_sums(&values, p);
    ShapleyVector::new(DVector::from_iterator(p, sums.into_iter().map(|s| s / total)))
}

/// `Var(β_Bᵀ X_B | X_v)` for every `v ⊆ B`, indexed by bitmask, computed as
/// `β_BᵀΣ_Bβ_B − c_vᵀ Σ_{v,v}⁻¹ c_v` with `c = Σ_B β_B`.
///
/// Subsets are visited depth first in increasing index order, so the
/// Cholesky factor of `Σ_{v,v}` is the factor of the parent subset bordered
/// by one new row, and `c_vᵀ Σ_{v,v}⁻¹ c_v = ‖L⁻¹c_v‖²` grows by one square.
fn block_subset_variances(block: &DMatrix<f64>, beta: &DVector<f64>, group: &[usize]) -> Result<Vec<f64>> {
    let m = block.nrows();
    let c = block * beta;
    let total = beta.dot(&c);
    let max_diag = (0..m).map(|i| block[(i, i)]).fold(0.0, f64::max);
    let mut sweep = Sweep {
        block,
        c: c.as_slice(),
        total,
        tol: PIVOT_TOLERANCE * max_diag,
        l: vec![0.0; m * m],
        z: vec![0.0; m],
        idx: vec![0; m],
        values: vec![0.0; 1 << m],
    };
    sweep.values[0] = total;
    sweep.visit(0, 0, 0, 0.0).map_err(|depth| Error::NotPositiveDefinite {
        group: group_label(&sweep.idx[..=depth].iter().map(|&i| group[i]).collect::<Vec<_>>()),
    })?;
    if let Some(last) = sweep.values.last_mut() {
        *last = 0.0;
    }
    Ok(sweep.values)
}

struct Sweep<'a> {
    block: &'a DMatrix<f64>,
    c: &'a [f64],
    total: f64,
    tol: f64,
    /// Row-major lower factor; row `d` belongs to the `d`-th chosen index.
    l: Vec<f64>,
    z: Vec<f64>,
    idx: Vec<usize>,
    values: Vec<f64>,
}

impl Sweep<'_> {
    /// Returns the failing depth when a pivot drops below tolerance.
    fn visit(&mut self, start: usize, depth: usize, mask: usize, explained: f64) -> Result<(), usize> {
        let m = self.block.nrows();
        for next in start..m {
            self.idx[depth] = next;
            let (done, row) = self.l.split_at_mut(depth * m);
            let row = &mut row[..depth + 1];
            let mut zacc = self.c[next];
            for a in 0..depth {
                let mut acc = self.block[(next, self.idx[a])];
                let la = &done[a * m..a * m + a];
                for b in 0..a {
                    acc -= row[b] * la[b];
                }
                row[a] = acc / done[a * m + a];
                zacc -= row[a] * self.z[a];
            }
            let pivot = self.block[(next, next)] - row[..depth].iter().map(|x| x * x).sum::<f64>();
            if !(pivot > self.tol) {
                return Err(depth);
            }
            let d = pivot.sqrt();
            row[depth] = d;
            let z = zacc / d;
            self.z[depth] = z;
            let child = mask | (1 << next);
            let e = explained + z * z;
            self.values[child] = (self.total - e).max(0.0);
            if next + 1 < m {
                self.visit(next + 1, depth + 1, child, e)?;
            }
        }
        Ok(())
    }
}

/// Shapley effects from a block-diagonal covariance, group by group.
pub fn shapley_block(model: &GaussianLinearModel) -> Result<ShapleyVector> {
    let blocks = model.cov().to_block()?;
    let partition = blocks.partition();
    if let Some(g) = partition.groups().iter().find(|g| g.len() > MAX_BLOCK_DIM) {
        return Err(Error::TooLarge {
            what: "Shapley block",
            size: g.len(),
            limit: MAX_BLOCK_DIM,
            hint: "the cost is exponential in the largest block size",
        });
    }
    let beta = model.beta();
    let local: Vec<(Vec<f64>, f64)> = partition
        .groups()
        .par_iter()
        .zip(blocks.blocks().par_iter())
        .map(|(g, block)| {
            let b = subvector(beta, g);
            let values = block_subset_variances(block, &b, g)?;
            Ok((shapley_sums(&values, g.len()), values[0]))
        })
        .collect::<Result<_>>()?;
    let total: f64 = local.iter().map(|(_, v)| v).sum();
    let mut eta = DVector::zeros(model.p());
    for (g, (sums, _)) in partition.groups().iter().zip(&local) {
        for (&i, s) in g.iter().zip(sums) {
            eta[i] = s / total;
        }
    }
    ShapleyVector::new(eta)
}

/// Result of the plug-in pipeline.
#[derive(Clone, Debug)]
pub struct PluginEstimate {
    pub partition: Partition,
    pub shapley: ShapleyVector,
    pub model: GaussianLinearModel,
    pub fit: LinearFit,
}

/// `η̂` from `(B̂, S_B̂, β̂)`: structure estimation, OLS, then the blockwise
/// formula.
pub fn shapley_plugin(
    data: &DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &StructureConfig,
) -> Result<PluginEstimate> {
    let (n, p) = data.shape();
    if n <= p {
        return Err(Error::InsufficientSamples { n, required: p + 1 });
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    let (partition, sb) = estimate_covariance(data, cfg)?;
    let fit = ols_fit(data, y)?;
    let model = GaussianLinearModel::new(
        fit.beta0_hat,
        fit.beta_hat.clone(),
        CovarianceMatrix::Block(sb),
    )?;
    let shapley = shapley_block(&model)?;
    Ok(PluginEstimate {
        partition,
        shapley,
        model,
        fit,
    })
}
