//! Seeded generators: random block-diagonal covariance matrices, coefficient
//! vectors, Gaussian samples and noisy linear outputs.
//!
//! Every generator is a pure function of its arguments and seed. Random
//! streams are keyed by purpose and block index (see [`crate::rng`]), so a
//! block can be regenerated without replaying the others.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::covariance::{BlockCovariance, CovarianceMatrix};
use crate::linalg::Cholesky;
use crate::partition::Partition;
use crate::rng::stream;
use crate::{Error, Result};

/// Law of one random covariance block: size uniform on
/// `[block_size_min, block_size_max]`, then `UᵀU + εI` with `U` an
/// `factor_count x size` matrix of i.i.d. `U(-1, 1)` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockLaw {
    pub block_size_min: usize,
    pub block_size_max: usize,
    pub factor_count: usize,
    pub epsilon: f64,
}

impl Default for BlockLaw {
    fn default() -> Self {
        Self {
            block_size_min: 10,
            block_size_max: 15,
            factor_count: 5,
            epsilon: 0.2,
        }
    }
}

impl BlockLaw {
    pub fn validate(&self) -> Result<()> {
        if self.block_size_min < 10 {
            return Err(Error::InvalidInput(format!(
                "block_size_min must be at least 10, got {}",
                self.block_size_min
            )));
        }
        if self.block_size_max < self.block_size_min {
            return Err(Error::InvalidInput(format!(
                "block_size_max {} is below block_size_min {}",
                self.block_size_max, self.block_size_min
            )));
        }
        if self.factor_count == 0 {
            return Err(Error::InvalidInput("factor_count must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeTarget {
    /// Exactly this many groups.
    Groups(usize),
    /// Exactly this total dimension.
    Dimension(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub law: BlockLaw,
    pub target: SizeTarget,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn groups(k: usize, seed: u64) -> Self {
        Self {
            law: BlockLaw::default(),
            target: SizeTarget::Groups(k),
            seed,
        }
    }

    pub fn dimension(p: usize, seed: u64) -> Self {
        Self {
            law: BlockLaw::default(),
            target: SizeTarget::Dimension(p),
            seed,
        }
    }
}

fn block_sizes(spec: &GeneratorSpec) -> Result<Vec<usize>> {
    let law = &spec.law;
    let mut rng = stream(spec.seed, "block-sizes", 0);
    let (lo, hi) = (law.block_size_min, law.block_size_max);
    match spec.target {
        SizeTarget::Groups(0) | SizeTarget::Dimension(0) => {
            Err(Error::InvalidInput("target size must be positive".into()))
        }
        SizeTarget::Groups(k) => Ok((0..k).map(|_| rng.random_range(lo..=hi)).collect()),
        SizeTarget::Dimension(p) => {
            let mut sizes = Vec::new();
            let mut total = 0;
            loop {
                let d = rng.random_range(lo..=hi);
                if total + d > p {
                    break;
                }
                sizes.push(d);
                total += d;
            }
            let rest = p - total;
            if rest >= lo {
                sizes.push(rest);
            } else if rest > 0 {
                let room: usize = sizes.iter().map(|&s| hi - s).sum();
                if room >= rest {
                    // Spread a short remainder over the trailing blocks.
                    let mut left = rest;
                    for s in sizes.iter_mut().rev() {
                        let take = (hi - *s).min(left);
                        *s += take;
                        left -= take;
                    }
                } else {
                    // Rebalance the last block with the remainder.
                    let merged = sizes.pop().unwrap_or(0) + rest;
                    if merged < 2 * lo {
                        return Err(Error::InvalidInput(format!(
                            "dimension {p} cannot be split into blocks of size {lo} to {hi}"
                        )));
                    }
                    sizes.push(merged.div_ceil(2));
                    sizes.push(merged / 2);
                }
            }
            Ok(sizes)
        }
    }
}

/// Random block covariance together with its ground-truth partition, which
/// has contiguous groups.
pub fn generate_block_sigma(spec: &GeneratorSpec) -> Result<BlockCovariance> {
    spec.law.validate()?;
    let sizes = block_sizes(spec)?;
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid bounds");
    let blocks = sizes
        .iter()
        .enumerate()
        .map(|(k, &pk)| {
            let mut rng = stream(spec.seed, "block-factor", k as u64);
            let u = DMatrix::from_fn(spec.law.factor_count, pk, |_, _| unit.sample(&mut rng));
            let mut block = u.transpose() * &u;
            for i in 0..pk {
                block[(i, i)] += spec.law.epsilon;
            }
            crate::linalg::symmetrize(&mut block);
            block
        })
        .collect();
    BlockCovariance::new(Partition::from_sizes(&sizes)?, blocks)
}

/// Dense form of [`generate_block_sigma`].
pub fn generate_sigma(spec: &GeneratorSpec) -> Result<(DMatrix<f64>, Partition)> {
    let b = generate_block_sigma(spec)?;
    Ok((b.to_dense(), b.partition().clone()))
}

/// i.i.d. entries uniform on `[low, high]`.
pub fn generate_beta(p: usize, low: f64, high: f64, seed: u64) -> Result<DVector<f64>> {
    if !(low < high) || !low.is_finite() || !high.is_finite() {
        return Err(Error::InvalidInput(format!(
            "invalid coefficient interval [{low}, {high}]"
        )));
    }
    let dist = Uniform::new_inclusive(low, high).expect("checked bounds");
    let mut rng = stream(seed, "beta", 0);
    Ok(DVector::from_fn(p, |_, _| dist.sample(&mut rng)))
}

fn standard_normals(n: usize, p: usize, seed: u64, purpose: &str, index: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, purpose, index);
    let mut z = DMatrix::zeros(n, p);
    for r in 0..n {
        for c in 0..p {
            z[(r, c)] = StandardNormal.sample(&mut rng);
        }
    }
    z
}

/// `n` i.i.d. rows from `N(mean, cov)`. Block covariances are sampled block
/// by block with independent streams.
pub fn sample_gaussian(
    mean: &DVector<f64>,
    cov: &CovarianceMatrix,
    n: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let p = cov.p();
    if mean.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: mean.len(),
        });
    }
    let mut x = match cov {
        CovarianceMatrix::Dense(m) => {
            crate::linalg::check_square(m, p)?;
            crate::linalg::check_symmetric(m)?;
            let chol = Cholesky::factor(m).ok_or_else(|| Error::NotPositiveDefinite {
                group: "full matrix".into(),
            })?;
            let z = standard_normals(n, p, seed, "gaussian", 0);
            z * chol.l().transpose()
        }
        CovarianceMatrix::Block(b) => {
            let factors = b.factor()?;
            let mut x = DMatrix::zeros(n, p);
            for (k, (g, chol)) in b.partition().groups().iter().zip(&factors).enumerate() {
                let z = standard_normals(n, g.len(), seed, "gaussian-block", k as u64);
                let xk = z * chol.l().transpose();
                for (a, &j) in g.iter().enumerate() {
                    x.column_mut(j).copy_from(&xk.column(a));
                }
            }
            x
        }
    };
    for (j, mut col) in x.column_iter_mut().enumerate() {
        col.add_scalar_mut(mean[j]);
    }
    Ok(x)
}

/// `y = β₀ + X β + ε` with `ε ~ N(0, noise_sd²)`.
pub fn sample_output(
    x: &DMatrix<f64>,
    beta0: f64,
    beta: &DVector<f64>,
    noise_sd: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    if x.ncols() != beta.len() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            found: beta.len(),
        });
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "noise standard deviation must be non-negative, got {noise_sd}"
        )));
    }
    let mut y = x * beta;
    y.add_scalar_mut(beta0);
    if noise_sd > 0.0 {
        let mut rng = stream(seed, "noise", 0);
        for v in y.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += noise_sd * e;
        }
    }
    Ok(y)
}
