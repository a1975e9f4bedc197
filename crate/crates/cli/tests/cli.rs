use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ssml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssml"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ssml_with_workers(args: &[&str], workers: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssml"))
        .args(args)
        .env("SSML_WORKERS", workers)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn first_line(o: &Output) -> String {
    stdout(o).lines().next().unwrap_or_default().to_string()
}

#[test]
fn analytic_examples() {
    assert_eq!(first_line(&ssml(&["analytic", "--run-mean", "0.5", "2"])), "6");
    assert_eq!(first_line(&ssml(&["analytic", "--tail", "0.5", "2", "1"])), "1");
    assert_eq!(first_line(&ssml(&["analytic", "--eps-cert", "1", "0.05"])), "0.95");
}

#[test]
fn analytic_blowup_reports_asymptote() {
    let out = ssml(&["analytic", "--blowup", "0.01", "1000"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    let exact: f64 = lines.next().unwrap().parse().unwrap();
    assert!(exact >= 1e6);
    let asym: f64 = lines.next().unwrap().strip_prefix("asymptotic ").unwrap().parse().unwrap();
    assert!((asym - 10f64.exp_m1() / 0.01).abs() < 1e-6 * asym);
}

#[test]
fn analytic_noise_ceiling() {
    // eps_cert(1000, 0.05) ~ 0.003 < q, so halting certifies nothing.
    let out = ssml(&["analytic", "--eps-cert", "1000", "0.05", "0.01"]);
    assert_eq!(first_line(&out), "ceiling");
}

#[test]
fn analytic_json_envelope() {
    let out = ssml(&["analytic", "--run-mean", "0.9", "5", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["spec"]["quantity"], "run_mean");
    let mean = v["rows"][0]["mean"].as_f64().unwrap();
    assert!((mean - (1.0 - 0.9f64.powi(5)) / (0.1 * 0.9f64.powi(5))).abs() < 1e-12);
}

#[test]
fn analytic_rejects_bad_input() {
    for args in [
        &["analytic", "--run-mean", "1.5", "2"][..],
        &["analytic", "--run-mean", "0.5", "0"],
        &["analytic", "--eps-cert", "10", "1.0"],
        &["analytic", "--effective-f", "0.5", "xyz", "0.1"],
        &["analytic"],
        &["analytic", "--run-mean", "0.5", "2", "--blowup", "0.1", "10"],
    ] {
        assert_eq!(ssml(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn simulate_is_deterministic() {
    let args = ["simulate", "--d", "2", "--mh", "5", "--seed", "7", "--trials", "3"];
    let a = ssml(&args);
    let b = ssml(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("trial,T,epsilon_T,halted\n"));
}

#[test]
fn simulate_rejects_invalid_noise() {
    assert_eq!(ssml(&["simulate", "--noise", "bsc:0.6"]).status.code(), Some(2));
    assert_eq!(ssml(&["simulate", "--d", "1"]).status.code(), Some(2));
    assert_eq!(ssml(&["simulate", "--bogus"]).status.code(), Some(2));
}

#[test]
fn simulate_single_success_threshold_halts() {
    let out = ssml(&["simulate", "--d", "2", "--mh", "1", "--max-shots", "10^6", "--trials", "20", "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 20);
    for r in rows {
        assert_eq!(r["halted"], true);
        assert!(r["T"].as_u64().unwrap() >= 1);
    }
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.cfg");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const COLLAPSE: &str = "kind = noise_collapse\nseed = 5\nq = 0.01\nmh = 50\ntrials = 2000\n";

#[test]
fn experiment_collapse_schema_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), COLLAPSE);
    let run = |name: &str, workers: &str| {
        let prefix = dir.path().join(name);
        let out = ssml_with_workers(
            &["experiment", "--config", &cfg, "--output", prefix.to_str().unwrap()],
            workers,
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (
            fs::read_to_string(prefix.with_extension("csv")).unwrap(),
            fs::read_to_string(prefix.with_extension("json")).unwrap(),
        )
    };
    let (csv_a, json_a) = run("a", "1");
    let (csv_b, json_b) = run("b", "3");
    assert_eq!(csv_a, csv_b);
    assert_eq!(json_a, json_b);
    let header: Vec<&str> = csv_a.lines().next().unwrap().split(',').collect();
    for col in ["q", "mh", "q_mh", "scaled_mean_mc", "scaled_mean_exact", "asymptote"] {
        assert!(header.contains(&col), "missing {col}");
    }
    assert_eq!(csv_a.lines().count(), 2);

    // The JSON envelope is itself a valid config and reproduces the rows.
    let json_path = dir.path().join("a.json");
    let prefix = dir.path().join("c");
    let out = ssml(&[
        "experiment",
        "--config",
        json_path.to_str().unwrap(),
        "--output",
        prefix.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(prefix.with_extension("csv")).unwrap(), csv_a);
}

#[test]
fn experiment_learning_cdf_is_nondecreasing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "# learning probability\nkind = learning_prob\nseed = 3\nd = 2\nmh = 40\ntrials = 100\n",
    );
    let prefix = dir.path().join("learn");
    let out = ssml(&["experiment", "--config", &cfg, "--output", prefix.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cdf = fs::read_to_string(dir.path().join("learn_cdf.csv")).unwrap();
    let mut lines = cdf.lines();
    assert_eq!(lines.next(), Some("cell,n,p"));
    let ps: Vec<f64> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(ps.len() > 2);
    assert!(ps.windows(2).all(|w| w[0] <= w[1]));
    assert!(stdout(&out).contains("learning_prob"));
}

#[test]
fn experiment_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("x");
    let prefix = prefix.to_str().unwrap();

    let cfg = write_config(dir.path(), "kind = learning_prob\nseed = 1\nalpha = fast\n");
    let out = ssml(&["experiment", "--config", &cfg, "--output", prefix]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3, column 9"));

    let cfg = write_config(dir.path(), "kind = learning_prob\nd = 2\n");
    assert_eq!(ssml(&["experiment", "--config", &cfg, "--output", prefix]).status.code(), Some(2));

    let cfg = write_config(
        dir.path(),
        "kind = learning_prob\nseed = 1\nmh = 40\ntrials = 100\nbudget = 1000\n",
    );
    let out = ssml(&["experiment", "--config", &cfg, "--output", prefix]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("x.csv").exists());

    let cfg = write_config(dir.path(), COLLAPSE);
    let out = ssml_with_workers(&["experiment", "--config", &cfg, "--output", prefix], "zero");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn experiment_timing_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), COLLAPSE);
    let prefix = dir.path().join("t");
    let p = prefix.to_str().unwrap();
    ssml(&["experiment", "--config", &cfg, "--output", p]);
    let plain: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(prefix.with_extension("json")).unwrap()).unwrap();
    assert!(plain.get("timing").is_none());
    ssml(&["experiment", "--config", &cfg, "--output", p, "--with-timing"]);
    let timed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(prefix.with_extension("json")).unwrap()).unwrap();
    assert!(timed["timing"]["wall_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(timed["rows"], plain["rows"]);
}
