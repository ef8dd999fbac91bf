//! Seeded Monte Carlo harnesses.
//!
//! Every cell `(K, N, replication)` draws its randomness from one sub-seed
//! derived from the master seed and the cell's values (not positions), so
//! adding a `K` to a configuration leaves the other cells unchanged. Cells
//! run in parallel and are reassembled in `(K, N, rep)` order, so a result
//! does not depend on the scheduler.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{
    empirical_moments, estimate_covariance, estimate_structure, frobenius_distance, project_block,
    CovarianceMatrix, StructureConfig,
};
use crate::crb::{crb_block, logdet_clt_variance, logdet_clt_variance_unscaled, CrbMatrix};
use crate::linalg::gram;
use crate::partition::Partition;
use crate::rng::derive_seed;
use crate::shapley::{shapley_block, shapley_plugin, GaussianLinearModel};
use crate::synthdata::{
    generate_beta, generate_block_sigma, sample_gaussian, sample_output, BlockLaw, GeneratorSpec,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fig1,
    Fig2,
    Recovery,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Fig1 => "fig1",
            ExperimentKind::Fig2 => "fig2",
            ExperimentKind::Recovery => "recovery",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Group counts `K`.
    pub k_values: Vec<usize>,
    /// Samples per dimension `N`, so `n = N·p`.
    pub n_values: Vec<usize>,
    pub law: BlockLaw,
    pub structure: StructureConfig,
    /// Standard deviation of the output noise in the Shapley experiment.
    pub noise_sd: f64,
    /// Coefficients are drawn i.i.d. from `U(beta_low, beta_high)`.
    pub beta_low: f64,
    pub beta_high: f64,
    pub replications: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            k_values: vec![4, 16, 36, 64, 100],
            n_values: vec![2, 5, 10],
            law: BlockLaw::default(),
            structure: StructureConfig::sgrid(15),
            noise_sd: 0.0,
            beta_low: 1.0,
            beta_high: 2.0,
            replications: 20,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for each harness with the given master seed.
    pub fn for_kind(kind: ExperimentKind, seed: u64) -> Self {
        let base = Self {
            seed,
            ..Self::default()
        };
        match kind {
            ExperimentKind::Fig1 => base,
            ExperimentKind::Fig2 => Self {
                k_values: vec![4, 16, 64],
                n_values: vec![10],
                ..base
            },
            ExperimentKind::Recovery => Self {
                k_values: vec![10],
                n_values: vec![2, 10],
                replications: 100,
                ..base
            },
        }
    }

    pub fn validate(&self, kind: ExperimentKind) -> Result<()> {
        let mut problems = Vec::new();
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            problems.push("k_values must be a non-empty list of positive counts".to_string());
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            problems.push("n_values must be a non-empty list of positive counts".to_string());
        }
        if kind == ExperimentKind::Fig2 && self.n_values.contains(&1) {
            problems.push("n_values must exceed 1 for the Shapley experiment (n > p)".to_string());
        }
        if self.replications == 0 {
            problems.push("replications must be positive".to_string());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            problems.push(format!("noise_sd must be non-negative, got {}", self.noise_sd));
        }
        if !(self.beta_low < self.beta_high) {
            problems.push(format!(
                "beta_low {} must be below beta_high {}",
                self.beta_low, self.beta_high
            ));
        }
        if let Err(e) = self.law.validate() {
            problems.push(format!("law: {e}"));
        }
        if let Err(e) = self.structure.validate() {
            problems.push(format!("structure: {e}"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }

    /// Sub-seed of the cell `(k, n_per_dim, rep)`.
    pub fn cell_seed(&self, k: usize, n_per_dim: usize, rep: usize) -> u64 {
        let s = derive_seed(self.seed, "cell-k", k as u64);
        let s = derive_seed(s, "cell-n", n_per_dim as u64);
        derive_seed(s, "cell-rep", rep as u64)
    }

    fn cells(&self) -> Vec<(usize, usize, usize)> {
        let mut cells = Vec::new();
        for &k in &self.k_values {
            for &n in &self.n_values {
                for rep in 0..self.replications {
                    cells.push((k, n, rep));
                }
            }
        }
        cells
    }
}

/// One `(K, N, replication)` outcome. Metrics a harness does not compute are
/// `None`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub k: usize,
    pub n_per_dim: usize,
    pub rep: usize,
    pub seed: u64,
    pub p: usize,
    pub n: usize,
    /// `‖S − Σ‖_F`.
    pub frob_s: Option<f64>,
    /// `‖S_B̂ − Σ‖_F`.
    pub frob_sb: Option<f64>,
    /// `‖S − Σ‖_F² / p`.
    pub risk_s: Option<f64>,
    /// `‖S_B̂ − Σ‖_F² / p`.
    pub risk_sb: Option<f64>,
    pub recovered: bool,
    pub k_hat: usize,
    /// `Σ_i |η̂_i − η_i|`.
    pub shapley_error: Option<f64>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub rows: Vec<ExperimentRow>,
}

/// Mean and standard error of one metric in one `(K, N)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub k: usize,
    pub n_per_dim: usize,
    pub metric: &'static str,
    pub count: usize,
    pub mean: f64,
    pub std_error: f64,
}

const METRICS: [&str; 7] = [
    "frob_s",
    "frob_sb",
    "risk_s",
    "risk_sb",
    "recovered",
    "k_hat",
    "shapley_error",
];

impl ExperimentRow {
    fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "frob_s" => self.frob_s,
            "frob_sb" => self.frob_sb,
            "risk_s" => self.risk_s,
            "risk_sb" => self.risk_sb,
            "recovered" => Some(f64::from(u8::from(self.recovered))),
            "k_hat" => Some(self.k_hat as f64),
            "shapley_error" => self.shapley_error,
            _ => None,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl ExperimentResult {
    pub fn cell(&self, k: usize, n_per_dim: usize) -> impl Iterator<Item = &ExperimentRow> {
        self.rows
            .iter()
            .filter(move |r| r.k == k && r.n_per_dim == n_per_dim)
    }

    /// Mean of `metric` over the replications of a cell.
    pub fn mean(&self, k: usize, n_per_dim: usize, metric: &str) -> Option<f64> {
        let v: Vec<f64> = self.cell(k, n_per_dim).filter_map(|r| r.metric(metric)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Per-cell means and standard errors, in row order.
    pub fn aggregate(&self) -> Vec<Summary> {
        let mut keys: Vec<(usize, usize)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.k, r.n_per_dim)) {
                keys.push((r.k, r.n_per_dim));
            }
        }
        let mut out = Vec::new();
        for (k, n) in keys {
            for metric in METRICS {
                let v: Vec<f64> = self.cell(k, n).filter_map(|r| r.metric(metric)).collect();
                if v.is_empty() {
                    continue;
                }
                let count = v.len();
                let mean = v.iter().sum::<f64>() / count as f64;
                let std_error = if count > 1 {
                    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
                    (var / count as f64).sqrt()
                } else {
                    f64::NAN
                };
                out.push(Summary {
                    k,
                    n_per_dim: n,
                    metric,
                    count,
                    mean,
                    std_error,
                });
            }
        }
        out
    }

    /// One row per cell replication. Wall times are excluded so reruns are
    /// byte-identical; see [`ExperimentResult::write_timing`].
    pub fn write_tidy<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "experiment",
            "k",
            "n_per_dim",
            "rep",
            "seed",
            "p",
            "n",
            "frob_s",
            "frob_sb",
            "risk_s",
            "risk_sb",
            "recovered",
            "k_hat",
            "shapley_error",
        ])?;
        for r in &self.rows {
            w.write_record(&[
                self.kind.as_str().to_string(),
                r.k.to_string(),
                r.n_per_dim.to_string(),
                r.rep.to_string(),
                r.seed.to_string(),
                r.p.to_string(),
                r.n.to_string(),
                opt(r.frob_s),
                opt(r.frob_sb),
                opt(r.risk_s),
                opt(r.risk_sb),
                u8::from(r.recovered).to_string(),
                r.k_hat.to_string(),
                opt(r.shapley_error),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_aggregate<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["experiment", "k", "n_per_dim", "metric", "count", "mean", "std_error"])?;
        for s in self.aggregate() {
            w.write_record(&[
                self.kind.as_str().to_string(),
                s.k.to_string(),
                s.n_per_dim.to_string(),
                s.metric.to_string(),
                s.count.to_string(),
                s.mean.to_string(),
                if s.std_error.is_nan() { String::new() } else { s.std_error.to_string() },
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timing<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "n_per_dim", "rep", "wall_seconds"])?;
        for r in &self.rows {
            w.write_record(&[
                r.k.to_string(),
                r.n_per_dim.to_string(),
                r.rep.to_string(),
                format!("{:.6}", r.wall_seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Recomputes a single cell from its sub-seed.
pub fn run_cell(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    k: usize,
    n_per_dim: usize,
    seed: u64,
) -> Result<ExperimentRow> {
    let start = Instant::now();
    let spec = GeneratorSpec {
        law: cfg.law.clone(),
        target: crate::synthdata::SizeTarget::Groups(k),
        seed,
    };
    let sigma = generate_block_sigma(&spec)?;
    let truth = sigma.partition().clone();
    let p = sigma.p();
    let n = n_per_dim * p;
    let cov = CovarianceMatrix::Block(sigma);
    let x = sample_gaussian(&DVector::zeros(p), &cov, n, seed)?;
    let mut row = ExperimentRow {
        k,
        n_per_dim,
        rep: 0,
        seed,
        p,
        n,
        frob_s: None,
        frob_sb: None,
        risk_s: None,
        risk_sb: None,
        recovered: false,
        k_hat: 0,
        shapley_error: None,
        wall_seconds: 0.0,
    };
    let b_hat = match kind {
        ExperimentKind::Fig1 => {
            let moments = empirical_moments(&x)?;
            let b_hat = estimate_structure(&moments, &cfg.structure)?;
            let sb = project_block(&moments.cov_mle, &b_hat)?.to_dense();
            let dense = cov.to_dense();
            let fs = frobenius_distance(&moments.cov_mle, &dense)?;
            let fsb = frobenius_distance(&sb, &dense)?;
            row.frob_s = Some(fs);
            row.frob_sb = Some(fsb);
            row.risk_s = Some(fs * fs / p as f64);
            row.risk_sb = Some(fsb * fsb / p as f64);
            b_hat
        }
        ExperimentKind::Fig2 => {
            let beta = generate_beta(p, cfg.beta_low, cfg.beta_high, seed)?;
            let y = sample_output(&x, 0.0, &beta, cfg.noise_sd, seed)?;
            let eta = shapley_block(&GaussianLinearModel::new(0.0, beta, cov)?)?;
            let est = shapley_plugin(&x, &y, &cfg.structure)?;
            row.shapley_error = Some(est.shapley.l1_distance(&eta));
            est.partition
        }
        ExperimentKind::Recovery => estimate_covariance(&x, &cfg.structure)?.0,
    };
    row.recovered = b_hat == truth;
    row.k_hat = b_hat.len();
    row.wall_seconds = start.elapsed().as_secs_f64();
    Ok(row)
}

fn run(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate(kind)?;
    let rows = cfg
        .cells()
        .into_par_iter()
        .map(|(k, n, rep)| {
            let mut row = run_cell(kind, cfg, k, n, cfg.cell_seed(k, n, rep))?;
            row.rep = rep;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult { kind, rows })
}

/// Frobenius errors of `S` and `S_B̂` against `Σ`.
pub fn run_fig1(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run(ExperimentKind::Fig1, cfg)
}

/// Plug-in Shapley error `Σ|η̂ − η|` against the exact effects.
pub fn run_fig2(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run(ExperimentKind::Fig2, cfg)
}

/// Exact recovery `B̂ = B*`.
pub fn run_recovery(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run(ExperimentKind::Recovery, cfg)
}

/// Efficiency check of `S_B` in a small fixed-dimension model with known
/// zero mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrbCheckConfig {
    /// Rows of `Σ`.
    pub sigma: Vec<Vec<f64>>,
    /// The true structure `B*`.
    pub partition: Partition,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    /// When set, `B̂` is estimated per replication; otherwise `B*` is used.
    #[serde(default)]
    pub structure: Option<StructureConfig>,
}

/// Largest dimension accepted by [`run_crb_check`].
pub const MAX_CRB_CHECK_DIM: usize = 8;

impl CrbCheckConfig {
    pub fn sigma_matrix(&self) -> Result<DMatrix<f64>> {
        let p = self.sigma.len();
        if let Some(r) = self.sigma.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: r.len(),
            });
        }
        Ok(DMatrix::from_fn(p, p, |i, j| self.sigma[i][j]))
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.sigma.len();
        if p == 0 || p > MAX_CRB_CHECK_DIM {
            return Err(Error::InvalidInput(format!(
                "the efficiency check needs 1 <= p <= {MAX_CRB_CHECK_DIM}, got {p}"
            )));
        }
        if self.n < 2 || self.replications < 2 {
            return Err(Error::InvalidInput("n and replications must be at least 2".into()));
        }
        if self.partition.p() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: self.partition.p(),
            });
        }
        if let Some(s) = &self.structure {
            s.validate()?;
            if !(s.delta < 0.5) {
                return Err(Error::InvalidInput(format!(
                    "the fixed-dimension setting needs delta < 1/2, got {}",
                    s.delta
                )));
            }
        }
        Ok(())
    }
}

/// One entry of the bound beside its Monte Carlo estimate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrbEntry {
    pub i: usize,
    pub j: usize,
    pub i2: usize,
    pub j2: usize,
    pub bound: f64,
    pub empirical: f64,
    /// `(empirical − bound)/bound`, when the bound is nonzero.
    pub relative_deviation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrbCheckResult {
    pub bound: CrbMatrix,
    /// Covariance of `√n (vec(S_B̂) − vec(Σ))` across replications.
    pub empirical: DMatrix<f64>,
    /// Fraction of replications with `B̂ = B*`.
    pub recovery_rate: f64,
}

impl CrbCheckResult {
    pub fn entries(&self) -> Vec<CrbEntry> {
        let p = self.bound.p();
        let mut out = Vec::with_capacity(p.pow(4));
        for c in 0..p * p {
            for r in 0..p * p {
                let bound = self.bound.entries()[(r, c)];
                let empirical = self.empirical[(r, c)];
                out.push(CrbEntry {
                    i: r % p,
                    j: r / p,
                    i2: c % p,
                    j2: c / p,
                    bound,
                    empirical,
                    relative_deviation: (bound != 0.0).then(|| (empirical - bound) / bound),
                });
            }
        }
        out
    }

    /// 1-based long format with one row per entry pair.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "i2", "j2", "bound", "empirical", "relative_deviation"])?;
        for e in self.entries() {
            w.write_record(&[
                (e.i + 1).to_string(),
                (e.j + 1).to_string(),
                (e.i2 + 1).to_string(),
                (e.j2 + 1).to_string(),
                e.bound.to_string(),
                e.empirical.to_string(),
                opt(e.relative_deviation),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Second moment `XᵀX / n` about the known zero mean.
fn second_moment(x: &DMatrix<f64>) -> DMatrix<f64> {
    gram(x) / x.nrows() as f64
}

/// Covariance of the rows of `samples`, divisor `R − 1`.
fn sample_covariance(samples: &[DVector<f64>]) -> DMatrix<f64> {
    let d = samples[0].len();
    let r = samples.len() as f64;
    let mean = samples.iter().fold(DVector::zeros(d), |a, v| a + v) / r;
    let mut c = DMatrix::zeros(d, d);
    for v in samples {
        let e = v - &mean;
        c.ger(1.0, &e, &e, 1.0);
    }
    c / (r - 1.0)
}

pub fn run_crb_check(cfg: &CrbCheckConfig) -> Result<CrbCheckResult> {
    cfg.validate()?;
    let sigma = cfg.sigma_matrix()?;
    let bound = crb_block(&sigma, &cfg.partition)?;
    let p = sigma.nrows();
    let cov = CovarianceMatrix::Dense(sigma.clone());
    let scale = (cfg.n as f64).sqrt();
    let draws: Vec<(DVector<f64>, bool)> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(cfg.seed, "crb-rep", rep as u64);
            let x = sample_gaussian(&DVector::zeros(p), &cov, cfg.n, seed)?;
            let s = second_moment(&x);
            let b = match &cfg.structure {
                Some(structure) => estimate_structure(&empirical_moments(&x)?, structure)?,
                None => cfg.partition.clone(),
            };
            let sb = project_block(&s, &b)?.to_dense();
            let v = DVector::from_iterator(p * p, (&sb - &sigma).iter().map(|d| d * scale));
            Ok((v, b == cfg.partition))
        })
        .collect::<Result<_>>()?;
    let recovered = draws.iter().filter(|d| d.1).count();
    let samples: Vec<DVector<f64>> = draws.into_iter().map(|d| d.0).collect();
    Ok(CrbCheckResult {
        bound,
        empirical: sample_covariance(&samples),
        recovery_rate: recovered as f64 / cfg.replications as f64,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogdetCheck {
    /// Sample variance of `√n (log|S_B| − log|Σ_B|)` across replications.
    pub variance: f64,
    /// `2·tr(Σ_B⁻¹ΣΣ_B⁻¹Σ) / p`.
    pub predicted: f64,
    /// `2·tr(Σ_B⁻¹ΣΣ_B⁻¹Σ)`.
    pub predicted_unscaled: f64,
}

/// Monte Carlo variance of the scaled block log-determinant with known zero
/// mean.
pub fn run_logdet_check(
    sigma: &DMatrix<f64>,
    b: &Partition,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<LogdetCheck> {
    if replications < 2 {
        return Err(Error::InvalidInput("replications must be at least 2".into()));
    }
    let p = sigma.nrows();
    let target = project_block(sigma, b)?.log_det()?;
    let cov = CovarianceMatrix::Dense(sigma.clone());
    let scale = (n as f64).sqrt();
    let draws: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let x = sample_gaussian(&DVector::zeros(p), &cov, n, derive_seed(seed, "logdet-rep", rep as u64))?;
            let ld = project_block(&second_moment(&x), b)?.log_det()?;
            Ok(scale * (ld - target))
        })
        .collect::<Result<_>>()?;
    let r = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / r;
    let variance = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Ok(LogdetCheck {
        variance,
        predicted: logdet_clt_variance(sigma, b)?,
        predicted_unscaled: logdet_clt_variance_unscaled(sigma, b)?,
    })
}

/// Least-squares line `y ≈ intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientSamples {
            n: x.len(),
            required: 2,
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}
