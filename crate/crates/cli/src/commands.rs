use std::fs;
use std::path::{Path, PathBuf};

use blockshap::covariance::estimate_structure_detailed;
use blockshap::experiments::{
    run_crb_check, run_fig1, run_fig2, run_recovery, CrbCheckConfig, ExperimentConfig, ExperimentKind,
};
use blockshap::io::{read_matrix, read_partition, read_vector, write_eta, write_partition, write_table, write_vector};
use blockshap::shapley::SHAPLEY_TOLERANCE;
use blockshap::synthdata::{generate_beta, generate_block_sigma, sample_gaussian, sample_output, GeneratorSpec, SizeTarget};
use blockshap::{
    empirical_moments, project_block, shapley_block, shapley_plugin, CovarianceMatrix, DVector, GaussianLinearModel,
    Method, Partition, ShapleyVector, StructureConfig,
};
use serde_json::json;

use crate::args::{CrbArgs, EstimateArgs, ExperimentArgs, ExperimentCommand, GenerateArgs, ShapleyArgs};
use crate::manifest::RunManifest;
use crate::{at, Failure};

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("creating output directory {}: {e}", dir.display())))
}

/// Writes one output file and records it in the manifest.
fn emit(
    manifest: &mut RunManifest,
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut fs::File) -> blockshap::Result<()>,
) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    let mut file = fs::File::create(&path)
        .map_err(|e| Failure::Data(format!("writing output {}: {e}", path.display())))?;
    f(&mut file)
        .map_err(|e| e.in_file(&path))
        .map_err(at("writing output"))?;
    manifest.add_output(&path);
    Ok(path)
}

fn sizes(b: &Partition) -> String {
    b.block_sizes().iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

pub fn estimate(a: &EstimateArgs) -> Result<(), Failure> {
    let cfg = a.structure.resolve(StructureConfig::new(Method::Cgrid))?;
    let data = read_matrix(&a.input).map_err(at("reading input"))?;
    let moments = empirical_moments(&data).map_err(at("computing moments"))?;
    let est = estimate_structure_detailed(&moments, &cfg).map_err(at("estimating structure"))?;
    let sb = project_block(&moments.cov_mle, &est.partition).map_err(at("projecting covariance"))?;

    prepare_out(&a.out)?;
    let mut manifest = RunManifest::new(
        "estimate",
        json!({
            "method": cfg.method,
            "delta": cfg.delta,
            "max_block": cfg.max_block,
            "kappa": est.kappa,
            "threshold": est.threshold,
        }),
        None,
    );
    manifest.add_input(&a.input)?;
    emit(&mut manifest, &a.out, "partition.txt", |w| write_partition(w, &est.partition))?;
    emit(&mut manifest, &a.out, "covariance.csv", |w| write_table(w, &sb.to_dense(), None))?;
    manifest.summary = json!({
        "n": moments.n,
        "p": moments.p,
        "k": est.partition.len(),
        "block_sizes": est.partition.block_sizes(),
        "partition": est.partition.to_string(),
        "psi": est.psi,
        "candidates": est.candidates,
        "excluded": est.excluded,
    });
    manifest.write(&a.out)?;

    println!("K = {}", est.partition.len());
    println!("block sizes = {}", sizes(&est.partition));
    match est.psi {
        Some(v) => println!("psi = {v}"),
        None => println!("psi = n/a"),
    }
    println!("partition = {}", est.partition);
    Ok(())
}

fn check_eta(eta: &ShapleyVector) -> Result<(), Failure> {
    let sum = eta.eta().sum();
    if (sum - 1.0).abs() > SHAPLEY_TOLERANCE {
        return Err(Failure::Numeric(format!("Shapley effects sum to {sum}")));
    }
    Ok(())
}

pub fn shapley(a: &ShapleyArgs) -> Result<(), Failure> {
    let mut manifest;
    let (eta, partition) = if a.known {
        let (Some(sigma_path), Some(beta_path)) = (&a.sigma, &a.beta) else {
            return Err(Failure::Usage("--known requires --sigma and --beta".into()));
        };
        let sigma = read_matrix(sigma_path).map_err(at("reading covariance"))?;
        let beta = read_vector(beta_path).map_err(at("reading coefficients"))?;
        let dense = CovarianceMatrix::Dense(sigma);
        let pattern = dense.to_block().map_err(at("reading covariance"))?;
        let partition = match &a.partition {
            Some(path) => {
                let b = read_partition(path, Some(dense.p())).map_err(at("reading partition"))?;
                if !pattern.partition().refines(&b).map_err(at("reading partition"))? {
                    return Err(Failure::Data(format!(
                        "reading partition: the covariance has nonzero entries between groups of {b}"
                    )));
                }
                b
            }
            None => pattern.partition().clone(),
        };
        let blocks = project_block(&dense.to_dense(), &partition).map_err(at("projecting covariance"))?;
        let model = GaussianLinearModel::new(a.beta0, beta, CovarianceMatrix::Block(blocks))
            .map_err(at("building model"))?;
        let eta = shapley_block(&model).map_err(at("computing Shapley effects"))?;
        manifest = RunManifest::new("shapley", json!({ "mode": "known", "beta0": a.beta0 }), None);
        manifest.add_input(sigma_path)?;
        manifest.add_input(beta_path)?;
        if let Some(path) = &a.partition {
            manifest.add_input(path)?;
        }
        (eta, partition)
    } else {
        let (Some(x_path), Some(y_path)) = (&a.x, &a.y) else {
            return Err(Failure::Usage("fitted mode requires --x and --y (or use --known)".into()));
        };
        let cfg = a.structure.resolve(StructureConfig::new(Method::Cgrid))?;
        let x = read_matrix(x_path).map_err(at("reading inputs"))?;
        let y = read_vector(y_path).map_err(at("reading outputs"))?;
        let est = shapley_plugin(&x, &y, &cfg).map_err(at("fitting Shapley effects"))?;
        manifest = RunManifest::new(
            "shapley",
            json!({
                "mode": "fitted",
                "method": cfg.method,
                "delta": cfg.delta,
                "max_block": cfg.max_block,
                "beta0_hat": est.fit.beta0_hat,
                "residual_variance": est.fit.residual_variance,
            }),
            None,
        );
        manifest.add_input(x_path)?;
        manifest.add_input(y_path)?;
        (est.shapley, est.partition)
    };
    check_eta(&eta)?;
    prepare_out(&a.out)?;
    emit(&mut manifest, &a.out, "eta.csv", |w| write_eta(w, &eta, &partition))?;
    manifest.summary = json!({
        "p": eta.len(),
        "partition": partition.to_string(),
        "eta_sum": eta.eta().sum(),
    });
    manifest.write(&a.out)?;
    println!("partition = {partition}");
    for (i, e) in eta.eta().iter().enumerate() {
        println!("eta[{}] = {e}", i + 1);
    }
    Ok(())
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("reading config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("invalid config {}: {e}", path.display())))
}

pub fn experiment(cmd: &ExperimentCommand) -> Result<(), Failure> {
    let (kind, a): (ExperimentKind, &ExperimentArgs) = match cmd {
        ExperimentCommand::Fig1(a) => (ExperimentKind::Fig1, a),
        ExperimentCommand::Fig2(a) => (ExperimentKind::Fig2, a),
        ExperimentCommand::Recovery(a) => (ExperimentKind::Recovery, a),
        ExperimentCommand::Crb(_) => unreachable!("dispatched separately"),
    };
    let mut cfg = match &a.config {
        Some(path) => load_json::<ExperimentConfig>(path)?,
        None => ExperimentConfig::for_kind(kind, a.seed),
    };
    cfg.seed = a.seed;
    if let Some(k) = &a.k_values {
        cfg.k_values = k.clone();
    }
    if let Some(n) = &a.n_values {
        cfg.n_values = n.clone();
    }
    if let Some(r) = a.reps {
        cfg.replications = r;
    }
    if let Some(s) = a.noise_sd {
        cfg.noise_sd = s;
    }
    cfg.structure = a.structure.resolve(cfg.structure.clone())?;
    cfg.validate(kind).map_err(|e| Failure::Data(format!("invalid config: {e}")))?;

    let result = match kind {
        ExperimentKind::Fig1 => run_fig1(&cfg),
        ExperimentKind::Fig2 => run_fig2(&cfg),
        ExperimentKind::Recovery => run_recovery(&cfg),
    }
    .map_err(at("running experiment"))?;

    prepare_out(&a.out)?;
    let mut manifest = RunManifest::new(
        &format!("experiment {}", kind.as_str()),
        serde_json::to_value(&cfg).expect("config serializes"),
        Some(cfg.seed),
    );
    if let Some(path) = &a.config {
        manifest.add_input(path)?;
    }
    emit(&mut manifest, &a.out, "tidy.csv", |w| result.write_tidy(w))?;
    emit(&mut manifest, &a.out, "aggregate.csv", |w| result.write_aggregate(w))?;
    emit(&mut manifest, &a.out, "timing.csv", |w| result.write_timing(w))?;
    manifest.summary = json!({ "rows": result.rows.len() });
    manifest.write(&a.out)?;
    println!("{} rows written to {}", result.rows.len(), a.out.display());
    Ok(())
}

/// Two 2-blocks with strong within-block correlation.
fn default_crb_config(seed: u64) -> CrbCheckConfig {
    CrbCheckConfig {
        sigma: vec![
            vec![1.0, 0.99, 0.0, 0.0],
            vec![0.99, 2.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.5, -0.8],
            vec![0.0, 0.0, -0.8, 1.0],
        ],
        partition: Partition::from_sizes(&[2, 2]).expect("valid sizes"),
        n: 5000,
        replications: 10_000,
        seed,
        structure: None,
    }
}

pub fn crb(a: &CrbArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(path) => load_json::<CrbCheckConfig>(path)?,
        None => default_crb_config(a.seed),
    };
    cfg.seed = a.seed;
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(r) = a.reps {
        cfg.replications = r;
    }
    cfg.validate().map_err(|e| Failure::Data(format!("invalid config: {e}")))?;
    let result = run_crb_check(&cfg).map_err(at("running experiment"))?;

    prepare_out(&a.out)?;
    let mut manifest = RunManifest::new(
        "experiment crb",
        serde_json::to_value(&cfg).expect("config serializes"),
        Some(cfg.seed),
    );
    if let Some(path) = &a.config {
        manifest.add_input(path)?;
    }
    emit(&mut manifest, &a.out, "crb.csv", |w| result.write_csv(w))?;
    let worst = result
        .entries()
        .iter()
        .filter(|e| e.bound.abs() >= 0.1)
        .filter_map(|e| e.relative_deviation)
        .fold(0.0f64, |m, d| m.max(d.abs()));
    manifest.summary = json!({
        "max_relative_deviation": worst,
        "recovery_rate": result.recovery_rate,
    });
    manifest.write(&a.out)?;
    println!("max relative deviation on entries >= 0.1: {worst}");
    Ok(())
}

pub fn generate(a: &GenerateArgs) -> Result<(), Failure> {
    let target = match (a.k, a.p) {
        (Some(k), _) => SizeTarget::Groups(k),
        (None, Some(p)) => SizeTarget::Dimension(p),
        (None, None) => return Err(Failure::Usage("one of --k or --p is required".into())),
    };
    let spec = GeneratorSpec {
        target,
        ..GeneratorSpec::groups(1, a.seed)
    };
    let sigma = generate_block_sigma(&spec).map_err(at("generating covariance"))?;
    let p = sigma.p();
    let n = a.n.unwrap_or(a.n_per_dim * p);
    let beta = generate_beta(p, 1.0, 2.0, a.seed).map_err(at("generating coefficients"))?;
    let cov = CovarianceMatrix::Block(sigma);
    let x = sample_gaussian(&DVector::zeros(p), &cov, n, a.seed).map_err(at("sampling inputs"))?;
    let y = sample_output(&x, a.beta0, &beta, a.noise_sd, a.seed).map_err(at("sampling outputs"))?;

    prepare_out(&a.out)?;
    let mut manifest = RunManifest::new(
        "generate",
        json!({
            "spec": spec,
            "n": n,
            "beta_range": [1.0, 2.0],
            "beta0": a.beta0,
            "noise_sd": a.noise_sd,
        }),
        Some(a.seed),
    );
    let CovarianceMatrix::Block(blocks) = &cov else { unreachable!() };
    let header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    emit(&mut manifest, &a.out, "sigma.csv", |w| write_table(w, &blocks.to_dense(), None))?;
    emit(&mut manifest, &a.out, "partition.txt", |w| write_partition(w, blocks.partition()))?;
    emit(&mut manifest, &a.out, "beta.csv", |w| write_vector(w, &beta, "beta"))?;
    emit(&mut manifest, &a.out, "x.csv", |w| write_table(w, &x, Some(&header)))?;
    emit(&mut manifest, &a.out, "y.csv", |w| write_vector(w, &y, "y"))?;
    manifest.summary = json!({ "p": p, "n": n, "k": blocks.partition().len() });
    manifest.write(&a.out)?;
    println!("p = {p}, n = {n}, K = {}", blocks.partition().len());
    Ok(())
}
