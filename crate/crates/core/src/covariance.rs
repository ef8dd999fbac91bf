//! Sample moments, block projection, the penalized likelihood criterion and
//! the block-structure estimators.
//!
//! The criterion for a candidate partition `B` is
//!
//! ```text
//! Ψ(B) = (1/p) (log det S_B + tr(S_B⁻¹ S)) + κ Σ_k p_k²
//! ```
//!
//! where `S_B` keeps the entries of the MLE covariance `S` inside the groups
//! of `B`. Since the blocks of `S_B` equal the diagonal blocks of `S`, the
//! trace term is exactly `p` and `Ψ(B) = (1/p) Σ_k log det S_{B_k} + 1 + κ pen(B)`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{check_square, check_symmetric, gram, submatrix, Cholesky};
use crate::partition::{components_of_threshold, enumerate_partitions, Partition, ThresholdPath};
use crate::{Error, Result};

/// Default exponent of `κ = 1/(p n^δ)` for the high-dimensional regime.
pub const DEFAULT_DELTA_HIGH_DIM: f64 = 0.75;
/// Default exponent for the fixed-dimension regime.
pub const DEFAULT_DELTA_FIXED_DIM: f64 = 0.25;

/// Two criterion values closer than this are treated as tied.
pub const PSI_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SampleMoments {
    pub n: usize,
    pub p: usize,
    pub mean: DVector<f64>,
    /// Divisor `n`.
    pub cov_mle: DMatrix<f64>,
    /// Divisor `n - 1`.
    pub cov_unbiased: DMatrix<f64>,
    pub corr: DMatrix<f64>,
}

/// Mean, MLE and unbiased covariances and the correlation matrix of the rows
/// of `data` (observations in rows).
pub fn empirical_moments(data: &DMatrix<f64>) -> Result<SampleMoments> {
    let (n, p) = data.shape();
    if n < 2 {
        return Err(Error::InsufficientSamples { n, required: 2 });
    }
    if p == 0 {
        return Err(Error::InvalidInput("data has no columns".into()));
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite entry at row {}, column {}",
            pos % n + 1,
            pos / n + 1
        )));
    }
    let mean = data.row_mean().transpose();
    let mut centered = data.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let cov_mle = gram(&centered) / n as f64;
    for j in 0..p {
        let scale = data.column(j).amax();
        if cov_mle[(j, j)] <= (1e-14 * scale).powi(2) {
            return Err(Error::ZeroVariance(j));
        }
    }
    let cov_unbiased = &cov_mle * (n as f64 / (n - 1) as f64);
    let sd: Vec<f64> = (0..p).map(|j| cov_mle[(j, j)].sqrt()).collect();
    let corr = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            (cov_mle[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        }
    });
    Ok(SampleMoments {
        n,
        p,
        mean,
        cov_mle,
        cov_unbiased,
        corr,
    })
}

/// A partition together with the retained dense block of each group.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCovariance {
    partition: Partition,
    blocks: Vec<DMatrix<f64>>,
}

impl BlockCovariance {
    pub fn new(partition: Partition, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if blocks.len() != partition.len() {
            return Err(Error::DimensionMismatch {
                expected: partition.len(),
                found: blocks.len(),
            });
        }
        for (g, block) in partition.groups().iter().zip(&blocks) {
            check_square(block, g.len())?;
            check_symmetric(block)?;
        }
        Ok(Self { partition, blocks })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn p(&self) -> usize {
        self.partition.p()
    }

    /// Full `p x p` matrix with zeros between groups.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = self.p();
        let mut m = DMatrix::zeros(p, p);
        for (g, block) in self.partition.groups().iter().zip(&self.blocks) {
            for (a, &i) in g.iter().enumerate() {
                for (b, &j) in g.iter().enumerate() {
                    m[(i, j)] = block[(a, b)];
                }
            }
        }
        m
    }

    /// Per-block Cholesky factors; errors naming the first non-PD group.
    pub fn factor(&self) -> Result<Vec<Cholesky>> {
        self.partition
            .groups()
            .iter()
            .zip(&self.blocks)
            .map(|(g, block)| {
                Cholesky::factor(block).ok_or_else(|| Error::NotPositiveDefinite {
                    group: group_label(g),
                })
            })
            .collect()
    }

    pub fn log_det(&self) -> Result<f64> {
        Ok(self.factor()?.iter().map(Cholesky::log_det).sum())
    }

    /// `βᵀ Γ β` evaluated blockwise.
    pub fn quad_form(&self, beta: &DVector<f64>) -> f64 {
        self.partition
            .groups()
            .iter()
            .zip(&self.blocks)
            .map(|(g, block)| {
                let b = crate::linalg::subvector(beta, g);
                b.dot(&(block * &b))
            })
            .sum()
    }
}

/// A covariance given either densely or as retained blocks.
#[derive(Clone, Debug, PartialEq)]
pub enum CovarianceMatrix {
    Dense(DMatrix<f64>),
    Block(BlockCovariance),
}

impl CovarianceMatrix {
    pub fn p(&self) -> usize {
        match self {
            CovarianceMatrix::Dense(m) => m.nrows(),
            CovarianceMatrix::Block(b) => b.p(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            CovarianceMatrix::Dense(m) => m.clone(),
            CovarianceMatrix::Block(b) => b.to_dense(),
        }
    }

    /// Block form; a dense matrix is split along the connected components of
    /// its exact nonzero pattern.
    pub fn to_block(&self) -> Result<BlockCovariance> {
        match self {
            CovarianceMatrix::Block(b) => Ok(b.clone()),
            CovarianceMatrix::Dense(m) => {
                let b = crate::partition::components_of_pattern(m, 0.0)?;
                project_block(m, &b)
            }
        }
    }
}

pub(crate) fn group_label(g: &[usize]) -> String {
    let items: Vec<String> = g.iter().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", items.join(","))
}

/// Keeps the entries of `m` whose row and column share a group of `b`.
pub fn project_block(m: &DMatrix<f64>, b: &Partition) -> Result<BlockCovariance> {
    check_square(m, b.p())?;
    check_symmetric(m)?;
    let blocks = b.groups().iter().map(|g| submatrix(m, g, g)).collect();
    Ok(BlockCovariance {
        partition: b.clone(),
        blocks,
    })
}

/// `(1/p) (log det Γ + tr(Γ⁻¹ s))` for a block-pattern `Γ`.
pub fn neg_loglik(g: &BlockCovariance, s: &DMatrix<f64>) -> Result<f64> {
    let p = g.p();
    check_square(s, p)?;
    let factors = g.factor()?;
    let mut total = 0.0;
    for (chol, group) in factors.iter().zip(g.partition().groups()) {
        let s_kk = submatrix(s, group, group);
        total += chol.log_det() + chol.solve_mat(&s_kk).trace();
    }
    Ok(total / p as f64)
}

/// `log det S_{B_k}` for one group of the sample covariance.
fn group_log_det(s: &DMatrix<f64>, group: &[usize]) -> Result<f64> {
    let block = submatrix(s, group, group);
    Cholesky::factor(&block)
        .map(|c| c.log_det())
        .ok_or_else(|| Error::SingularBlock {
            group: group_label(group),
        })
}

/// Penalized criterion `Ψ(B)` using the trace identity.
pub fn psi(b: &Partition, moments: &SampleMoments, kappa: f64) -> Result<f64> {
    check_moments_dim(b, moments)?;
    let mut log_det = 0.0;
    for g in b.groups() {
        log_det += group_log_det(&moments.cov_mle, g)?;
    }
    Ok(log_det / b.p() as f64 + 1.0 + kappa * b.penalty())
}

/// `Ψ(B)` with the trace term evaluated explicitly rather than by identity.
pub fn psi_exact(b: &Partition, moments: &SampleMoments, kappa: f64) -> Result<f64> {
    check_moments_dim(b, moments)?;
    let sb = project_block(&moments.cov_mle, b)?;
    let l = neg_loglik(&sb, &moments.cov_mle).map_err(|e| match e {
        Error::NotPositiveDefinite { group } => Error::SingularBlock { group },
        other => other,
    })?;
    Ok(l + kappa * b.penalty())
}

fn check_moments_dim(b: &Partition, moments: &SampleMoments) -> Result<()> {
    if b.p() != moments.p {
        return Err(Error::DimensionMismatch {
            expected: moments.p,
            found: b.p(),
        });
    }
    Ok(())
}

/// `κ = 1 / (p n^δ)`.
pub fn kappa_default(p: usize, n: usize, delta: f64) -> f64 {
    1.0 / (p as f64 * (n as f64).powf(delta))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Exhaustive search over every partition (p ≤ 10).
    Tot,
    /// Every distinct correlation magnitude as a threshold.
    Cgrid,
    /// The single threshold `n^(-1/3)`.
    SingleThreshold,
    /// Thresholds `l/p` restricted to partitions with groups of at most `m`.
    Sgrid,
    /// The single threshold `n^(-δ/2)`.
    FixedThreshold,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tot => "tot",
            Method::Cgrid => "cgrid",
            Method::SingleThreshold => "threshold",
            Method::Sgrid => "sgrid",
            Method::FixedThreshold => "fixed",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tot" => Ok(Method::Tot),
            "cgrid" => Ok(Method::Cgrid),
            "threshold" | "single_threshold" => Ok(Method::SingleThreshold),
            "sgrid" => Ok(Method::Sgrid),
            "fixed" | "fixed_threshold" => Ok(Method::FixedThreshold),
            other => Err(Error::InvalidInput(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureConfig {
    pub method: Method,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub max_block: Option<usize>,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA_HIGH_DIM
}

impl StructureConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            delta: DEFAULT_DELTA_HIGH_DIM,
            max_block: None,
        }
    }

    pub fn sgrid(max_block: usize) -> Self {
        Self {
            method: Method::Sgrid,
            delta: DEFAULT_DELTA_HIGH_DIM,
            max_block: Some(max_block),
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidInput(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        match (self.method, self.max_block) {
            (Method::Sgrid, None) => Err(Error::InvalidInput(
                "method sgrid requires a maximal block size".into(),
            )),
            (_, Some(0)) => Err(Error::InvalidInput("max_block must be positive".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructureEstimate {
    pub partition: Partition,
    pub kappa: f64,
    /// `Ψ` of the returned partition, when it is finite.
    pub psi: Option<f64>,
    /// Threshold that produced the returned partition, for threshold methods.
    pub threshold: Option<f64>,
    /// Distinct candidates considered.
    pub candidates: usize,
    /// Candidates dropped because a sub-block of `S` was singular.
    pub excluded: usize,
}

/// Estimated block structure `B̂`.
pub fn estimate_structure(moments: &SampleMoments, cfg: &StructureConfig) -> Result<Partition> {
    estimate_structure_detailed(moments, cfg).map(|e| e.partition)
}

pub fn estimate_structure_detailed(
    moments: &SampleMoments,
    cfg: &StructureConfig,
) -> Result<StructureEstimate> {
    cfg.validate()?;
    let (n, p) = (moments.n, moments.p);
    let kappa = kappa_default(p, n, cfg.delta);
    let single = |lambda: f64| -> Result<StructureEstimate> {
        let partition = components_of_threshold(&moments.corr, lambda, true)?;
        let psi = psi(&partition, moments, kappa).ok();
        Ok(StructureEstimate {
            partition,
            kappa,
            psi,
            threshold: Some(lambda),
            candidates: 1,
            excluded: 0,
        })
    };
    match cfg.method {
        Method::SingleThreshold => single((n as f64).powf(-1.0 / 3.0)),
        Method::FixedThreshold => single((n as f64).powf(-cfg.delta / 2.0)),
        Method::Tot => {
            let candidates = enumerate_partitions(p)?.map(|b| (b, None));
            select_min_psi(candidates, moments, kappa)
        }
        Method::Cgrid => {
            let mut path = ThresholdPath::new(&moments.corr, -1.0);
            let mut candidates = Vec::new();
            for lambda in path.distinct_magnitudes() {
                path.advance_to(lambda);
                if let Some(b) = path.take_if_changed() {
                    candidates.push((b, Some(lambda)));
                }
            }
            // With strict edges the smallest magnitude never joins its own
            // pair, so the path is closed at λ = 0.
            path.advance_to(0.0);
            if let Some(b) = path.take_if_changed() {
                candidates.push((b, Some(0.0)));
            }
            select_min_psi(candidates, moments, kappa)
        }
        Method::Sgrid => {
            let m = cfg.max_block.expect("validated");
            let mut path = ThresholdPath::new(&moments.corr, 1.0 / p as f64);
            let mut candidates = Vec::new();
            for l in (1..=p).rev() {
                let lambda = l as f64 / p as f64;
                path.advance_to(lambda);
                if path.max_block_size() > m {
                    break;
                }
                if let Some(b) = path.take_if_changed() {
                    candidates.push((b, Some(lambda)));
                }
            }
            select_min_psi(candidates, moments, kappa)
        }
    }
}

/// Ψ-argmin over candidates listed from the largest threshold down.
///
/// Ties within [`PSI_TIE_TOLERANCE`] go to the smaller penalty, then to the
/// earlier candidate. Candidates with a singular sub-block are skipped.
fn select_min_psi(
    candidates: impl IntoIterator<Item = (Partition, Option<f64>)>,
    moments: &SampleMoments,
    kappa: f64,
) -> Result<StructureEstimate> {
    let mut cache: HashMap<Vec<usize>, Option<f64>> = HashMap::new();
    let mut best: Option<(Partition, Option<f64>, f64)> = None;
    let (mut count, mut excluded) = (0, 0);
    let p = moments.p as f64;
    for (b, threshold) in candidates {
        count += 1;
        let mut log_det = Some(0.0);
        for g in b.groups() {
            let v = *cache
                .entry(g.clone())
                .or_insert_with(|| group_log_det(&moments.cov_mle, g).ok());
            log_det = log_det.zip(v).map(|(a, v)| a + v);
            if log_det.is_none() {
                break;
            }
        }
        let Some(log_det) = log_det else {
            excluded += 1;
            continue;
        };
        let value = log_det / p + 1.0 + kappa * b.penalty();
        let better = match &best {
            None => true,
            Some((bb, _, bv)) => {
                value < bv - PSI_TIE_TOLERANCE
                    || ((value - bv).abs() <= PSI_TIE_TOLERANCE && b.penalty() < bb.penalty())
            }
        };
        if better {
            best = Some((b, threshold, value));
        }
    }
    let (partition, threshold, value) = best.ok_or(Error::NoFeasibleCandidate)?;
    Ok(StructureEstimate {
        partition,
        kappa,
        psi: Some(value),
        threshold,
        candidates: count,
        excluded,
    })
}

/// `(B̂, S_B̂)` from raw data.
pub fn estimate_covariance(
    data: &DMatrix<f64>,
    cfg: &StructureConfig,
) -> Result<(Partition, BlockCovariance)> {
    let moments = empirical_moments(data)?;
    let b = estimate_structure(&moments, cfg)?;
    let sb = project_block(&moments.cov_mle, &b)?;
    Ok((b, sb))
}

/// `‖a − b‖_F`.
pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows() * a.ncols(),
            found: b.nrows() * b.ncols(),
        });
    }
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// `(1/p) ‖a − b‖_F²`.
pub fn frobenius_risk(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let d = frobenius_distance(a, b)?;
    Ok(d * d / a.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(p: usize, n: usize, seed: u64, cov: &DMatrix<f64>) -> DMatrix<f64> {
        crate::synthdata::sample_gaussian(
            &DVector::zeros(p),
            &CovarianceMatrix::Dense(cov.clone()),
            n,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn moments_hand_examples() {
        let m = empirical_moments(&DMatrix::from_row_slice(2, 1, &[0.0, 2.0])).unwrap();
        assert_eq!(m.mean[0], 1.0);
        assert_eq!(m.cov_mle[(0, 0)], 1.0);
        assert_eq!(m.cov_unbiased[(0, 0)], 2.0);
        assert_eq!(m.corr[(0, 0)], 1.0);

        let dup = DMatrix::from_row_slice(2, 1, &[3.7, 3.7]);
        assert!(matches!(empirical_moments(&dup), Err(Error::ZeroVariance(0))));
        assert!(matches!(
            empirical_moments(&DMatrix::from_row_slice(1, 2, &[1.0, 2.0])),
            Err(Error::InsufficientSamples { .. })
        ));
        let mut nan = DMatrix::from_element(3, 2, 1.0);
        nan[(1, 1)] = f64::NAN;
        assert!(matches!(empirical_moments(&nan), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn moments_match_two_pass_oracle() {
        let data = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 2.0, 2.0]);
        let m = empirical_moments(&data).unwrap();
        // Independent two-pass formula with explicit loops.
        let n = 3.0;
        let mut mean = [0.0; 2];
        for r in 0..3 {
            for c in 0..2 {
                mean[c] += data[(r, c)] / n;
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                let mut s = 0.0;
                for r in 0..3 {
                    s += (data[(r, a)] - mean[a]) * (data[(r, b)] - mean[b]);
                }
                assert!((m.cov_mle[(a, b)] - s / n).abs() < 1e-14);
                assert!((m.cov_unbiased[(a, b)] - s / (n - 1.0)).abs() < 1e-14);
            }
        }
        // S = [[2/3, 1/3], [1/3, 2/3]] so the correlation is 1/2.
        assert!((m.corr[(0, 1)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn project_block_examples() {
        let m = DMatrix::from_fn(4, 4, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        let full = project_block(&m, &Partition::single_block(4)).unwrap();
        assert_eq!(full.to_dense(), m);
        let diag = project_block(&m, &Partition::singletons(4)).unwrap();
        assert_eq!(diag.to_dense(), DMatrix::from_diagonal(&m.diagonal()));
        let b: Partition = "1,2;3,4".parse().unwrap();
        let r = project_block(&m, &b).unwrap().to_dense();
        for (i, j) in [(0, 2), (0, 3), (1, 2), (1, 3)] {
            assert_eq!(r[(i, j)], 0.0);
            assert_eq!(r[(j, i)], 0.0);
        }
        for (i, j) in [(0, 0), (0, 1), (1, 1), (2, 2), (2, 3), (3, 3)] {
            assert_eq!(r[(i, j)], m[(i, j)]);
        }
        let again = project_block(&r, &b).unwrap().to_dense();
        assert_eq!(again, r);
        assert!(project_block(&m, &Partition::singletons(3)).is_err());
    }

    #[test]
    fn neg_loglik_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        let g = project_block(&id, &"1;2,3".parse().unwrap()).unwrap();
        assert!((neg_loglik(&g, &id).unwrap() - 1.0).abs() < 1e-15);

        let g = BlockCovariance::new(Partition::singletons(1), vec![DMatrix::from_element(1, 1, 4.0)]).unwrap();
        let s = DMatrix::from_element(1, 1, 2.0);
        let v = neg_loglik(&g, &s).unwrap();
        assert!((v - (4.0f64.ln() + 0.5)).abs() < 1e-15);
        assert!((v - 1.886_294_361_119_890_6).abs() < 1e-12);

        let bad = BlockCovariance::new(
            "1;2".parse().unwrap(),
            vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, -1.0)],
        )
        .unwrap();
        match neg_loglik(&bad, &DMatrix::identity(2, 2)) {
            Err(Error::NotPositiveDefinite { group }) => assert_eq!(group, "{2}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn psi_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        let m = SampleMoments {
            n: 10,
            p: 3,
            mean: DVector::zeros(3),
            cov_mle: id.clone(),
            cov_unbiased: id.clone(),
            corr: id,
        };
        assert!((psi(&Partition::singletons(3), &m, 0.0).unwrap() - 1.0).abs() < 1e-15);

        let rho = 0.9;
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let data = sample(2, 200, 3, &cov);
        let mo = empirical_moments(&data).unwrap();
        let kappa = 1.0 / (2.0 * 200f64.powf(0.75));
        let single = psi(&Partition::singletons(2), &mo, kappa).unwrap();
        let block = psi(&Partition::single_block(2), &mo, kappa).unwrap();
        assert!(block < single, "{block} >= {single}");
        assert!((psi_exact(&Partition::single_block(2), &mo, kappa).unwrap() - block).abs() < 1e-10);

        // A huge κ sends the argmin to the singletons.
        let cfg = StructureConfig::new(Method::Tot);
        let all: Vec<_> = enumerate_partitions(2).unwrap().collect();
        let best = all
            .iter()
            .min_by(|a, b| psi(a, &mo, 1e6).unwrap().total_cmp(&psi(b, &mo, 1e6).unwrap()))
            .unwrap();
        assert_eq!(best, &Partition::singletons(2));
        cfg.validate().unwrap();
    }

    #[test]
    fn psi_reports_singular_blocks() {
        // n = 2 < block size 3 makes the full sub-block singular.
        let data = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 3.0]);
        let mo = empirical_moments(&data).unwrap();
        assert!(matches!(
            psi(&Partition::single_block(3), &mo, 0.1),
            Err(Error::SingularBlock { .. })
        ));
        // Coarse candidates are excluded, the finest one survives.
        let est = estimate_structure_detailed(&mo, &StructureConfig::new(Method::Tot)).unwrap();
        assert!(est.excluded > 0);
        assert!(est.partition.max_block_size() <= 1);
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(kappa_default(1, 1, 0.3), 1.0);
        assert!((kappa_default(100, 1000, 0.75) - 5.6234e-5).abs() < 1e-9);
        assert!(kappa_default(10, 50, 0.6) > kappa_default(10, 50, 0.7));
    }

    #[test]
    fn config_validation() {
        assert!(StructureConfig::new(Method::Sgrid).validate().is_err());
        assert!(StructureConfig::new(Method::Cgrid).with_delta(1.0).validate().is_err());
        assert!(StructureConfig::new(Method::Cgrid).with_delta(0.0).validate().is_err());
        StructureConfig::sgrid(3).validate().unwrap();
        for s in ["tot", "cgrid", "threshold", "sgrid", "fixed"] {
            assert_eq!(s.parse::<Method>().unwrap().as_str(), s);
        }
        assert!("nope".parse::<Method>().is_err());
        let cfg: StructureConfig =
            serde_json::from_str(r#"{"method": "sgrid", "max_block": 15}"#).unwrap();
        assert_eq!(cfg, StructureConfig::sgrid(15));
        assert!(serde_json::from_str::<StructureConfig>(r#"{"method": "sgrid", "m": 15}"#).is_err());
    }

    #[test]
    fn cgrid_can_join_the_weakest_edge() {
        let data = DMatrix::from_fn(40, 2, |i, j| {
            let t = (i as f64 * 0.37).sin();
            t + if j == 1 { 0.01 * ((i * 7) % 5) as f64 } else { 0.0 }
        });
        let mo = empirical_moments(&data).unwrap();
        let cgrid = estimate_structure_detailed(&mo, &StructureConfig::new(Method::Cgrid)).unwrap();
        let tot = estimate_structure(&mo, &StructureConfig::new(Method::Tot)).unwrap();
        assert_eq!(cgrid.partition, Partition::single_block(2));
        assert_eq!(cgrid.partition, tot);
        assert_eq!(cgrid.candidates, 2);
    }

    #[test]
    fn p_equals_one() {
        let data = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 4.0, 3.0]);
        for method in [Method::Tot, Method::Cgrid, Method::SingleThreshold, Method::FixedThreshold] {
            let (b, sb) = estimate_covariance(&data, &StructureConfig::new(method)).unwrap();
            assert_eq!(b, Partition::singletons(1));
            assert!((sb.blocks()[0][(0, 0)] - 1.25).abs() < 1e-14);
        }
        let (b, _) = estimate_covariance(&data, &StructureConfig::sgrid(1)).unwrap();
        assert_eq!(b, Partition::singletons(1));
    }

    #[test]
    fn frobenius_examples() {
        let a = DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 * 0.37 - 1.0);
        assert_eq!(frobenius_risk(&a, &a).unwrap(), 0.0);
        assert_eq!(
            frobenius_risk(&DMatrix::zeros(4, 4), &DMatrix::identity(4, 4)).unwrap(),
            1.0
        );
        let b = DMatrix::from_fn(3, 3, |i, j| ((i + 2 * j) as f64).sin());
        let mut oracle = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                oracle += (a[(i, j)] - b[(i, j)]).powi(2);
            }
        }
        assert!((frobenius_risk(&a, &b).unwrap() - oracle / 3.0).abs() < 1e-14);
        assert!(frobenius_risk(&a, &DMatrix::zeros(2, 2)).is_err());
    }
}
