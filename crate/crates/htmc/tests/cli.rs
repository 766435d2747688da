use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use htmc::formats::{matrix_to_csv, Model};
use htmc_core::chains::{graph_chain, GraphKind, MixtureModel};
use htmc_core::hitting::{chain_hitting_times, HittingTimeEstimate};
use htmc_core::learn::wsbt_init;
use serde_json::Value;
use tempfile::TempDir;

fn htmc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_htmc"))
        .current_dir(dir)
        .env_remove("HTMC_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = htmc(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn recovery_from_stderr(out: &Output) -> f64 {
    let text = stderr(out);
    let line = text.lines().find_map(|l| l.strip_prefix("recovery_error: ")).expect("recovery error printed");
    line.trim().parse().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn generate_complete_graph() {
    let d = TempDir::new().unwrap();
    let text = ok(d.path(), &["generate", "complete", "--n", "16"]);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["mode"], "discrete");
    assert_eq!(v["n"], 16);
    assert_eq!(v["matrix"][0][0], 0.0);
    assert_eq!(v["matrix"][3][7].as_f64().unwrap(), 1.0 / 15.0);
    assert!(matches!(Model::from_json(&text).unwrap(), Model::Chain(_)));
}

#[test]
fn seeded_mixture_is_byte_identical() {
    let d = TempDir::new().unwrap();
    let args = ["generate", "random", "--chains", "2", "--n", "5", "--seed", "1"];
    let a = htmc(d.path(), &args);
    let b = htmc(d.path(), &args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stderr(&a).is_empty());
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["chains"].as_array().unwrap().len(), 2);
}

#[test]
fn omitted_seed_is_reported() {
    let d = TempDir::new().unwrap();
    let out = htmc(d.path(), &["generate", "random", "--n", "4"]);
    assert!(out.status.success());
    let seed: u64 = stderr(&out).trim().strip_prefix("seed: ").unwrap().parse().unwrap();
    let again = ok(d.path(), &["generate", "random", "--n", "4", "--seed", &seed.to_string()]);
    assert_eq!(again.as_bytes(), out.stdout);
}

#[test]
fn invalid_parameters_exit_with_2() {
    let d = TempDir::new().unwrap();
    let out = htmc(d.path(), &["generate", "grid", "--n", "15"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("15"));
    assert_eq!(htmc(d.path(), &["generate", "star", "--n", "5", "--mode", "continuous"]).status.code(), Some(2));
    assert_eq!(htmc(d.path(), &["generate", "complete", "--n", "5", "--chains", "2"]).status.code(), Some(2));
    assert_eq!(htmc(d.path(), &["bench-gradients"]).status.code(), Some(2));
}

#[test]
fn missing_files_exit_with_4() {
    let d = TempDir::new().unwrap();
    let out = htmc(d.path(), &["estimate-ht", "nope.jsonl", "--n", "3"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("nope.jsonl"));
    let out = htmc(d.path(), &["generate", "complete", "--n", "3", "--out", "missing/dir/x.json"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn simulate_counts_labels_and_seeds() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["generate", "random", "--chains", "2", "--n", "4", "--seed", "3", "--out", "mix.json"]);
    ok(d.path(), &["generate", "lollipop", "--n", "6", "--out", "chain.json"]);

    let a = ok(d.path(), &["simulate", "mix.json", "--count", "10", "--length", "20", "--seed", "5"]);
    assert_eq!(a.lines().count(), 10);
    for line in a.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["label"].as_u64().unwrap() < 2);
        assert_eq!(v["states"].as_array().unwrap().len(), 20);
    }
    let b = ok(d.path(), &["simulate", "mix.json", "--count", "10", "--length", "20", "--seed", "5", "--threads", "1"]);
    assert_eq!(a, b);
    let c = ok(d.path(), &["simulate", "mix.json", "--count", "10", "--length", "20", "--seed", "6"]);
    assert_ne!(a, c);

    let single = ok(d.path(), &["simulate", "chain.json", "--count", "3", "--length", "7", "--seed", "5"]);
    assert_eq!(single.lines().count(), 3);
    assert!(!single.contains("label"));

    let out = htmc(d.path(), &["simulate", "chain.json", "--count", "3", "--horizon", "2", "--seed", "5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn continuous_simulation_carries_holds() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["generate", "random", "--mode", "continuous", "--n", "3", "--seed", "2", "--out", "k.json"]);
    let text = ok(d.path(), &["simulate", "k.json", "--count", "4", "--horizon", "5", "--seed", "1"]);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["holds"].as_array().unwrap().len(), v["states"].as_array().unwrap().len());
    }
}

#[test]
fn estimate_matches_hand_trace() {
    let d = TempDir::new().unwrap();
    write(d.path(), "t.jsonl", "{\"states\":[1,2,3]}\n");
    let v: Value = serde_json::from_str(&ok(d.path(), &["estimate-ht", "t.jsonl", "--n", "4"])).unwrap();
    assert_eq!(v["H"][1][2], 1.0);
    assert_eq!(v["H"][1][3], 2.0);
    assert_eq!(v["H"][2][3], 1.0);
    assert_eq!(v["mask"][3][1], false);
    assert_eq!(v["mask"][0][1], false);
    assert_eq!(v["mask"][2][2], true);

    write(d.path(), "empty.jsonl", "");
    let v: Value = serde_json::from_str(&ok(d.path(), &["estimate-ht", "empty.jsonl", "--n", "3"])).unwrap();
    for u in 0..3 {
        for w in 0..3 {
            assert_eq!(v["mask"][u][w], u == w);
        }
    }

    // the second trail counts three times
    write(d.path(), "w.jsonl", "{\"states\":[0,1]}\n{\"states\":[0,2,1],\"weight\":3}\n");
    let v: Value = serde_json::from_str(&ok(d.path(), &["estimate-ht", "w.jsonl", "--n", "3"])).unwrap();
    assert_eq!(v["H"][0][1], (1.0 + 3.0 * 2.0) / 4.0);
    assert_eq!(v["weight_sum"][0][1], 4.0);
}

fn grid_fixture(dir: &Path) {
    let grid = graph_chain(GraphKind::Grid, 16).unwrap();
    let h = chain_hitting_times(&grid).unwrap().matrix;
    write(dir, "grid.json", &Model::Chain(grid).to_json());
    write(dir, "h.csv", &matrix_to_csv(&h));
}

#[test]
fn learn_recovers_grid_from_exact_hitting_times() {
    let d = TempDir::new().unwrap();
    grid_fixture(d.path());
    let out = htmc(
        d.path(),
        &["learn", "h.csv", "--init", "wsbt", "--iterations", "2000", "--truth", "grid.json", "--report", "r.json", "--seed", "0"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(recovery_from_stderr(&out) <= 1e-3);
    let report: Value = serde_json::from_str(&fs::read_to_string(d.path().join("r.json")).unwrap()).unwrap();
    assert!(report["best_loss"].as_f64().unwrap().is_finite());
    assert!(!report["loss_curve"].as_array().unwrap().is_empty());

    ok(d.path(), &["evaluate", "grid.json", "grid.json", "--report", "r.json", "--curves", "c.csv"]);
    let curves = fs::read_to_string(d.path().join("c.csv")).unwrap();
    assert_eq!(curves.lines().next(), Some("iteration,loss"));
    assert_eq!(curves.lines().count(), report["loss_curve"].as_array().unwrap().len() + 1);
}

#[test]
fn wsbt_only_passes_the_initializer_through() {
    let d = TempDir::new().unwrap();
    grid_fixture(d.path());
    let text = ok(d.path(), &["learn", "h.csv", "--wsbt-only", "--seed", "0"]);
    let Model::Chain(got) = Model::from_json(&text).unwrap() else { panic!("expected a chain") };
    let grid = graph_chain(GraphKind::Grid, 16).unwrap();
    let est = HittingTimeEstimate::complete(chain_hitting_times(&grid).unwrap().matrix).unwrap();
    let (want, _) = wsbt_init(est.h(), est.mask(), grid.mode()).unwrap();
    assert_eq!(got, want);
}

#[test]
fn learn_accepts_config_and_estimates() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["generate", "random", "--n", "4", "--seed", "9", "--out", "c.json"]);
    ok(d.path(), &["simulate", "c.json", "--count", "200", "--length", "60", "--seed", "1", "--out", "t.jsonl"]);
    ok(d.path(), &["estimate-ht", "t.jsonl", "--n", "4", "--out", "e.json"]);
    write(d.path(), "cfg.json", "{\"iterations\": 50, \"lr\": 0.001, \"seed\": 4}\n");
    let a = ok(d.path(), &["learn", "e.json", "--config", "cfg.json"]);
    let b = ok(d.path(), &["learn", "e.json", "--config", "cfg.json", "--threads", "1"]);
    assert_eq!(a, b);
    write(d.path(), "bad.json", "{\"iters\": 50}\n");
    assert_eq!(htmc(d.path(), &["learn", "e.json", "--config", "bad.json"]).status.code(), Some(2));

    let out = htmc(d.path(), &["evaluate", "c.json", "c.json", "--estimate", "e.json"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["frobenius_ht_error"].as_f64().unwrap() > 0.0);
}

#[test]
fn evaluate_self_and_permuted_mixture_is_zero() {
    let d = TempDir::new().unwrap();
    let text = ok(d.path(), &["generate", "random", "--chains", "3", "--n", "4", "--seed", "2", "--out", "m.json"]);
    assert!(text.is_empty());
    let Model::Mixture(m) = Model::from_json(&fs::read_to_string(d.path().join("m.json")).unwrap()).unwrap() else {
        panic!("expected a mixture")
    };
    let permuted: MixtureModel = m.permuted(&[2, 0, 1]).unwrap();
    write(d.path(), "p.json", &Model::Mixture(permuted).to_json());
    for other in ["m.json", "p.json"] {
        let v: Value = serde_json::from_str(&ok(d.path(), &["evaluate", "m.json", other])).unwrap();
        assert_eq!(v["recovery_error"], 0.0);
        assert_eq!(v["frobenius_ht_error"], Value::Null);
    }
}

#[test]
fn learn_mixture_is_reproducible_across_thread_counts() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["generate", "random", "--chains", "2", "--n", "3", "--seed", "8", "--out", "m.json"]);
    ok(d.path(), &["simulate", "m.json", "--count", "60", "--length", "40", "--seed", "2", "--out", "t.jsonl"]);
    let run = |threads: &str, hist: &str| {
        let out = htmc(
            d.path(),
            &[
                "learn-mixture", "t.jsonl", "--chains", "2", "--em-iterations", "3", "--iterations", "30", "--lr", "0.001",
                "--truth", "m.json", "--history", hist, "--seed", "1", "--threads", threads,
            ],
        );
        assert!(out.status.success(), "{}", stderr(&out));
        let err = recovery_from_stderr(&out);
        assert!((0.0..=1.0).contains(&err));
        out.stdout
    };
    let a = run("1", "h1.json");
    let b = run("4", "h4.json");
    assert_eq!(a, b);
    let h1 = fs::read_to_string(d.path().join("h1.json")).unwrap();
    assert_eq!(h1, fs::read_to_string(d.path().join("h4.json")).unwrap());
    let h: Value = serde_json::from_str(&h1).unwrap();
    assert!(!h["rounds"].as_array().unwrap().is_empty());
    assert!(h["rounds"][0]["recovery_error"].as_f64().is_some());

    ok(d.path(), &["evaluate", "m.json", "m.json", "--history", "h1.json", "--curves", "rounds.csv"]);
    let csv = fs::read_to_string(d.path().join("rounds.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("round,entropy,change,recovery_error"));
}

#[test]
fn bench_output_parses_as_csv() {
    let d = TempDir::new().unwrap();
    let text = ok(d.path(), &["bench-gradients", "--n", "4,6", "--iters", "20", "--numerical-iters", "2", "--seed", "0"]);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(r.headers().unwrap(), vec!["n", "analytical_s", "numerical_s", "ratio"]);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[1][0], "6");
    for row in &rows {
        for f in row.iter().skip(1) {
            assert!(f.parse::<f64>().unwrap() > 0.0);
        }
    }
}
