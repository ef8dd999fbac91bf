use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn blockshap(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockshap"))
        .args(args)
        .current_dir(cwd)
        .env_remove("BLOCKSHAP_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn eta_column(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn estimate_groups_correlated_pair() {
    let dir = tempfile::tempdir().unwrap();
    // Two strongly correlated columns.
    let mut text = String::from("a,b\n");
    for i in 0..50 {
        let t = (i as f64 * 0.37).sin() * 3.0;
        let e = ((i * 7919) % 13) as f64 / 13.0 - 0.5;
        text.push_str(&format!("{},{}\n", t, t + 0.1 * e));
    }
    fs::write(dir.path().join("data.csv"), text).unwrap();
    let o = blockshap(&["estimate", "data.csv", "--out", "est"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(dir.path().join("est/partition.txt")).unwrap().trim(), "1,2");
    assert!(dir.path().join("est/covariance.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("est/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["summary"]["k"], 1);
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = blockshap(&["estimate", "does-not-exist.csv", "--out", "est"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("does-not-exist.csv"), "{}", stderr(&o));
}

#[test]
fn sgrid_without_max_block_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("d.csv"), "1,2\n3,4\n5,7\n").unwrap();
    let o = blockshap(&["estimate", "d.csv", "--method", "sgrid", "--out", "e"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("max-block"));
}

#[test]
fn known_identity_gives_equal_shares() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sigma.csv"), "1,0,0\n0,1,0\n0,0,1\n").unwrap();
    fs::write(dir.path().join("beta.csv"), "1\n1\n1\n").unwrap();
    let o = blockshap(
        &["shapley", "--known", "--sigma", "sigma.csv", "--beta", "beta.csv", "--out", "s"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let eta = eta_column(&dir.path().join("s/eta.csv"));
    assert_eq!(eta.len(), 3);
    for e in eta {
        assert!((e - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn known_partition_must_cover_pattern() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sigma.csv"), "1,0.5,0\n0.5,1,0\n0,0,1\n").unwrap();
    fs::write(dir.path().join("beta.csv"), "1\n1\n1\n").unwrap();
    fs::write(dir.path().join("bad.txt"), "1;2;3\n").unwrap();
    fs::write(dir.path().join("good.txt"), "1,2,3\n").unwrap();
    let base = ["shapley", "--known", "--sigma", "sigma.csv", "--beta", "beta.csv", "--partition"];
    let o = blockshap(&[&base[..], &["bad.txt", "--out", "s"]].concat(), dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = blockshap(&[&base[..], &["good.txt", "--out", "s"]].concat(), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let eta = eta_column(&dir.path().join("s/eta.csv"));
    assert!((eta.iter().sum::<f64>() - 1.0).abs() < 1e-10);
}

#[test]
fn non_pd_sigma_is_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sigma.csv"), "1,2\n2,1\n").unwrap();
    fs::write(dir.path().join("beta.csv"), "1\n1\n").unwrap();
    let o = blockshap(
        &["shapley", "--known", "--sigma", "sigma.csv", "--beta", "beta.csv", "--out", "s"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn generate_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = blockshap(&["generate", "--k", "2", "--seed", "11", "--n-per-dim", "50", "--out", "g"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["sigma.csv", "partition.txt", "beta.csv", "x.csv", "y.csv", "manifest.json"] {
        assert!(dir.path().join("g").join(f).exists(), "{f}");
    }
    let o = blockshap(&["shapley", "--x", "g/x.csv", "--y", "g/y.csv", "--out", "fit"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = blockshap(
        &["shapley", "--known", "--sigma", "g/sigma.csv", "--beta", "g/beta.csv", "--out", "truth"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let fit = eta_column(&dir.path().join("fit/eta.csv"));
    let truth = eta_column(&dir.path().join("truth/eta.csv"));
    assert_eq!(fit.len(), truth.len());
    assert!((fit.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    let l1: f64 = fit.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum();
    assert!(l1 < 0.2, "L1 distance {l1}");
}

#[test]
fn fitted_mode_requires_both_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = blockshap(&["shapley", "--x", "x.csv", "--out", "s"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn small_fig1_is_fast_and_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["experiment", "fig1", "--seed", "5", "--k", "2,4", "--n-per-dim", "5", "--reps", "3", "--out", out];
    let start = Instant::now();
    let a = blockshap(&args("a"), dir.path());
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(start.elapsed().as_secs() < 60);
    let b = blockshap(&args("b"), dir.path());
    assert!(b.status.success());
    for f in ["tidy.csv", "aggregate.csv"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs between reruns");
    }
    let tidy = fs::read_to_string(dir.path().join("a/tidy.csv")).unwrap();
    assert_eq!(tidy.lines().count(), 1 + 2 * 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["replications"], 3);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &'static str, out: &'static str| {
        blockshap(
            &["--threads", threads, "experiment", "recovery", "--seed", "9", "--k", "3", "--n-per-dim", "4", "--reps", "4", "--out", out],
            dir.path(),
        )
    };
    assert!(run("1", "one").status.success());
    assert!(run("3", "three").status.success());
    assert_eq!(
        fs::read(dir.path().join("one/tidy.csv")).unwrap(),
        fs::read(dir.path().join("three/tidy.csv")).unwrap()
    );
}

#[test]
fn experiment_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = blockshap(&["experiment", "fig1", "--out", "f"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_config_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"replications": 2, "bogus": true}"#).unwrap();
    let o = blockshap(&["experiment", "fig1", "--seed", "1", "--config", "bad.json", "--out", "f"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("bogus"));
    fs::write(dir.path().join("empty.json"), r#"{"k_values": []}"#).unwrap();
    let o = blockshap(&["experiment", "fig1", "--seed", "1", "--config", "empty.json", "--out", "f"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn crb_writes_long_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = blockshap(&["experiment", "crb", "--seed", "2", "--n", "200", "--reps", "50", "--out", "c"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("c/crb.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "i,j,i2,j2,bound,empirical,relative_deviation");
    assert_eq!(lines.count(), 4 * 4 * 4 * 4);
}

#[test]
fn zero_threads_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = blockshap(&["--threads", "0", "experiment", "fig1", "--seed", "1", "--out", "f"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
