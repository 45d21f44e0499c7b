use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SEED: &str = "0123456789abcdef0123456789abcdef";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypersample"))
        .args(args)
        .env_remove("HYPERSAMPLE_SEED")
        .output()
        .expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn indices(out: &Output) -> Vec<u64> {
    String::from_utf8_lossy(&out.stdout).lines().map(|l| l.parse().unwrap()).collect()
}

#[test]
fn sample_composed_is_deterministic_and_sized() {
    let dir = TempDir::new().unwrap();
    let x = write(&dir, "x.txt", "n=1000 k=3\n5 0.5\n17 0.5\n400 1.0\n999 0.25\n998 0.75\n");
    let stats = dir.path().join("stats.json");
    let args = ["sample", "--input", &x, "--algo", "composed", "--seed", SEED, "--stats", stats.to_str().unwrap()];
    let a = run(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(&args);
    assert_eq!(a.stdout, b.stdout);
    let chosen = indices(&a);
    assert_eq!(chosen.len(), 3);
    assert!(chosen.contains(&400));
    assert!(chosen.windows(2).all(|w| w[0] < w[1]));
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(stats).unwrap()).unwrap();
    assert_eq!(stats["nnz"], 5);
    assert_eq!(stats["size"], 3);
    assert!(stats["level_used"].is_u64());
    assert!(stats["wall_time_us"].is_number());
}

#[test]
fn every_algorithm_runs() {
    let dir = TempDir::new().unwrap();
    let x = write(&dir, "x.txt", "n=8 k=1\n# a distribution\n2 0.25\n\n7 0.75\n");
    for algo in [&["--algo", "clock"][..], &["--algo", "subunit"], &["--algo", "tree"], &["--algo", "tree", "--dense"]] {
        let mut args = vec!["sample", "--input", &x];
        args.extend_from_slice(algo);
        let out = run(&args);
        assert!(out.status.success(), "{algo:?}: {}", String::from_utf8_lossy(&out.stderr));
        let chosen = indices(&out);
        assert_eq!(chosen.len(), 1);
        assert!(chosen[0] == 2 || chosen[0] == 7);
    }
    assert!(!run(&["sample", "--input", &x, "--algo", "clock", "--dense"]).status.success());
}

#[test]
fn seed_from_environment() {
    let dir = TempDir::new().unwrap();
    let x = write(&dir, "x.txt", "n=64 k=4\n1 0.3\n2 0.3\n3 0.3\n10 0.5\n20 0.5\n30 0.5\n40 0.5\n50 0.5\n60 0.6\n");
    let flag = run(&["sample", "--input", &x, "--seed", SEED]);
    let env = Command::new(env!("CARGO_BIN_EXE_hypersample"))
        .args(["sample", "--input", &x])
        .env("HYPERSAMPLE_SEED", SEED)
        .output()
        .unwrap();
    assert_eq!(flag.stdout, env.stdout);
    assert!(!run(&["sample", "--input", &x, "--seed", "abc"]).status.success());
}

#[test]
fn binary_format_and_overrides() {
    let dir = TempDir::new().unwrap();
    let x = hypersample::SparseVector::validate([(3, 0.5), (9, 0.5), (11, 1.0)], 16, 2).unwrap();
    let p = dir.path().join("x.bin");
    fs::write(&p, x.to_bytes()).unwrap();
    let p = p.to_str().unwrap();
    let out = run(&["sample", "--input", p, "--format", "bin", "--m-override", "2", "--depth", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(indices(&out).len(), 2);
    assert!(indices(&out).contains(&11));
    let widened = run(&["sample", "--input", p, "--format", "bin", "--n", "1000000", "--k", "3"]);
    assert!(widened.status.success());
    let bad = run(&["sample", "--input", p, "--format", "bin", "--n", "5"]);
    assert!(!bad.status.success());
}

#[test]
fn over_budget_input_fails() {
    let dir = TempDir::new().unwrap();
    let x = write(&dir, "x.txt", "n=4 k=1\n1 0.9\n2 0.9\n");
    let out = run(&["sample", "--input", &x]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds budget"));
}

#[test]
fn marginals_csv() {
    let dir = TempDir::new().unwrap();
    let x = write(&dir, "x.txt", "n=2 k=1\n1 0.3\n2 0.7\n");
    let out = run(&["marginals-eval", "--input", &x, "--algo", "tree", "--trials", "20000"]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "index,target,frequency,band,pass");
    assert_eq!(lines.len(), 3);
    let summary: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(summary["off_support_hits"], 0);
}

#[test]
fn stretch_json() {
    let dir = TempDir::new().unwrap();
    let x = write(&dir, "x.txt", "n=2 k=1\n1 0.5\n2 0.5\n");
    let y = write(&dir, "y.txt", "n=2 k=1\n1 0.51\n2 0.49\n");
    let out = run(&["stretch-eval", "--x", &x, "--y", &y, "--algo", "clock", "--trials", "20000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let e: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((e["l1_distance"].as_f64().unwrap() - 0.02).abs() < 1e-9);
    let same = run(&["stretch-eval", "--x", &x, "--y", &x, "--algo", "clock", "--trials", "1000"]);
    assert!(!same.status.success());
}

#[test]
fn scaling_single_n() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("scaling.csv");
    let out = run(&[
        "scaling", "--k", "2", "--n-list", "64", "--pairs", "2", "--trials", "500", "--out", out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_path).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.contains("64,tree,") && csv.contains("64,composed,"));
}

#[test]
fn dominance_json() {
    let dir = TempDir::new().unwrap();
    let x = write(&dir, "x.txt", "n=10 k=3\n1 0.5\n3 0.5\n4 0.8\n8 0.2\n9 0.6\n");
    let out = run(&["dominance-eval", "--input", &x, "--trials", "5000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["multilinear"].is_number());
    assert!(r["pass"].is_boolean());
}

fn paging_report(dir: &Path, args: &[&str]) -> serde_json::Value {
    let out_path = dir.join("report.json");
    let mut all = vec!["paging-sim", "--out", out_path.to_str().unwrap()];
    all.extend_from_slice(args);
    let out = run(&all);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_str(&fs::read_to_string(out_path).unwrap()).unwrap()
}

#[test]
fn paging_sim_round_robin() {
    let dir = TempDir::new().unwrap();
    let requests: String = (0..200).map(|t| format!("{}\n", [3, 10, 20, 33][t % 4])).collect();
    let trace = write(&dir, "trace.txt", &format!("n=40 k=3\n{requests}"));
    let r = paging_report(dir.path(), &["--trace", &trace, "--seeds", "3"]);
    assert_eq!(r["total_violations"], 0);
    assert_eq!(r["reports"].as_array().unwrap().len(), 3);
    assert!(r["mean_overhead_ratio"].as_f64().unwrap() > 0.0);
}

#[test]
fn paging_sim_external_trace() {
    let dir = TempDir::new().unwrap();
    let trace = write(&dir, "trace.txt", "n=5 k=2\n1\n2\n3\n");
    let frac = write(&dir, "frac.txt", "t=1\n1 1.0\nt=2\n1 1.0\n2 1.0\nt=3\n3 1.0\n1 0.5\n2 0.5\n");
    let r = paging_report(dir.path(), &["--trace", &trace, "--frac-trace", &frac]);
    assert_eq!(r["total_violations"], 0);
    let bad = write(&dir, "bad.txt", "t=1\n1 1.0\nt=2\n1 1.0\n2 1.0\nt=3\n3 0.5\n1 0.5\n");
    let out = run(&["paging-sim", "--trace", &trace, "--frac-trace", &bad]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("step 3"));
}
