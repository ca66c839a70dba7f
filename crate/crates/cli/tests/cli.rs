use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use umpire::evaluate::EvalConfig;
use umpire::ingest::{self, split_indices, ScoreRow, ScoreTable};
use umpire::kernel::{umpire_score, KernelConfig, ResponseSample};
use umpire::pipeline;
use umpire::InstanceRecord;

fn umpire_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_umpire"))
        .args(args)
        .current_dir(dir)
        .env_remove("UMPIRE_CONFIG")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = umpire_in(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn planted(dir: &Path, n: usize, seed: u64) {
    let (n, seed) = (n.to_string(), seed.to_string());
    ok(dir, &["synth", "--preset", "planted-benchmark", "--n", &n, "--seed", &seed, "--output", "inst.jsonl"]);
}

fn sample(embedding: Vec<f64>, logprob: f64) -> ResponseSample {
    ResponseSample::new(embedding, logprob).with_tokens(1)
}

#[test]
fn ten_instances_give_ten_rows() {
    let dir = TempDir::new().unwrap();
    planted(dir.path(), 10, 1);
    ok(dir.path(), &["score", "--input", "inst.jsonl", "--output", "s.csv"]);
    let table = ScoreTable::read(dir.path().join("s.csv")).unwrap();
    assert_eq!(table.rows.len(), 10);
    assert_eq!(table.metric_columns, ["v", "u", "q"]);
    let run = json(&dir.path().join("s.csv.run.json"));
    assert_eq!(run["records"], 10);
    assert!(run["config"]["kernel"]["epsilon"].is_number());
}

#[test]
fn alpha_shift_moves_v_by_exactly_two_q() {
    let dir = TempDir::new().unwrap();
    planted(dir.path(), 40, 2);
    ok(dir.path(), &["score", "--input", "inst.jsonl", "--output", "a0.csv", "--alpha", "0"]);
    ok(dir.path(), &["score", "--input", "inst.jsonl", "--output", "a2.csv", "--alpha", "2"]);
    let a0 = ScoreTable::read(dir.path().join("a0.csv")).unwrap();
    let a2 = ScoreTable::read(dir.path().join("a2.csv")).unwrap();
    for (r0, r2) in a0.rows.iter().zip(&a2.rows) {
        let (v0, v2, q) = (r0.metrics[0], r2.metrics[0], r2.metrics[2]);
        assert_eq!(v0, r0.metrics[1], "alpha 0 leaves v = u");
        assert_eq!(v2, v0 + 2.0 * q, "row {}", r0.id);
    }
}

#[test]
fn scores_match_library() {
    let dir = TempDir::new().unwrap();
    planted(dir.path(), 60, 3);
    ok(dir.path(), &["score", "--input", "inst.jsonl", "--output", "s.csv", "--alpha", "1.25", "--baselines", "all"]);
    let ds = ingest::load_instances(dir.path().join("inst.jsonl")).unwrap();
    let cfg = KernelConfig::default().with_alpha(1.25);
    let selection = umpire::baselines::BaselineSelection::parse_list("all", umpire::baselines::DEFAULT_EIGEN_JITTER).unwrap();
    let bundles = pipeline::score_dataset(&ds, &cfg, &selection).unwrap();
    let expected = ScoreTable::from_scores(&ds, &bundles).unwrap();
    assert_eq!(ScoreTable::read(dir.path().join("s.csv")).unwrap(), expected);
}

#[test]
fn evaluate_matches_library() {
    let dir = TempDir::new().unwrap();
    planted(dir.path(), 400, 4);
    ok(dir.path(), &["score", "--input", "inst.jsonl", "--output", "s.csv"]);
    ok(dir.path(), &["evaluate", "--input", "s.csv", "--seed", "7", "--lrt", "--output", "eval.json"]);
    let table = ScoreTable::read(dir.path().join("s.csv")).unwrap();
    let cfg = EvalConfig { rng_seed: 7, ..EvalConfig::default() };
    let report = pipeline::evaluate_column(&table, "v", &cfg, true).unwrap();
    let out = json(&dir.path().join("eval.json"));
    assert_eq!(out["report"], serde_json::to_value(&report).unwrap());
    assert_eq!(out["metric_column"], "v");
    assert!(out["report"]["lrt"]["p_value"].is_number());
}

fn oracle_table(n: usize) -> ScoreTable {
    let rows = (0..n)
        .map(|i| {
            let label = u8::from(i % 3 != 0);
            ScoreRow {
                id: format!("r{i:03}"),
                metrics: vec![1.0 - f64::from(label), 0.25],
                label: Some(label),
                quality: None,
            }
        })
        .collect();
    ScoreTable { metric_columns: vec!["oracle".into(), "flat".into()], rows }
}

#[test]
fn oracle_and_constant_columns() {
    let dir = TempDir::new().unwrap();
    let table = oracle_table(120);
    table.write(dir.path().join("t.csv")).unwrap();
    let out = ok(dir.path(), &["evaluate", "--input", "t.csv", "--metric-column", "oracle", "--bins-cpc", "10"]);
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["report"]["auroc"], 1.0);

    // every wrong instance is rejected before any correct one
    let (_, eval) = split_indices(120, 0.05, 0).unwrap();
    let labels: Vec<u8> = eval.iter().map(|&i| table.rows[i].label.unwrap()).collect();
    let n = labels.len();
    let wrong = labels.iter().filter(|&&l| l == 0).count();
    let acc: Vec<f64> = (0..n).map(|i| if i < wrong { (n - wrong) as f64 / (n - i) as f64 } else { 1.0 }).collect();
    let best = (0..n).map(|i| 0.5 * (acc[i] + acc[(i + 1).min(n - 1)])).sum::<f64>() / n as f64;
    assert!((rep["report"]["aurac"].as_f64().unwrap() - best).abs() < 1e-12);

    let out = ok(dir.path(), &["evaluate", "--input", "t.csv", "--metric-column", "flat", "--bins-cpc", "10"]);
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["report"]["auroc"], 0.5);
    assert!(rep["report"]["cpc"].is_null());
    assert!(rep["report"]["combined"].is_null());
}

#[test]
fn evaluate_without_labels_fails() {
    let dir = TempDir::new().unwrap();
    let mut table = oracle_table(40);
    for r in &mut table.rows {
        r.label = None;
    }
    table.write(dir.path().join("t.csv")).unwrap();
    let out = umpire_in(dir.path(), &["evaluate", "--input", "t.csv", "--metric-column", "oracle"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn unknown_metric_column_fails() {
    let dir = TempDir::new().unwrap();
    oracle_table(40).write(dir.path().join("t.csv")).unwrap();
    assert!(!umpire_in(dir.path(), &["evaluate", "--input", "t.csv", "--metric-column", "nope"]).status.success());
}

#[test]
fn alpha_of_one_instance_is_its_ratio() {
    let dir = TempDir::new().unwrap();
    let samples = vec![
        sample(vec![1.0, 0.0, 0.0], 0.5f64.ln()),
        sample(vec![0.0, 1.0, 0.0], 0.25f64.ln()),
        sample(vec![0.6, 0.8, 0.0], 0.9f64.ln()),
    ];
    ingest::write_instances(&[InstanceRecord::new("only", samples.clone())], dir.path().join("one.jsonl")).unwrap();
    let out = ok(dir.path(), &["alpha", "--input", "one.jsonl", "--fraction", "0.05,1"]);
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    let b = umpire_score(&samples, &KernelConfig::default()).unwrap();
    for est in rep["estimates"].as_array().unwrap() {
        assert_eq!(est["subset_size"], 1);
        assert_eq!(est["alpha"].as_f64().unwrap(), b.u.abs() / b.q);
    }
}

#[test]
fn all_certain_file_gives_zero_alpha() {
    let dir = TempDir::new().unwrap();
    let records: Vec<InstanceRecord> = (0..5)
        .map(|i| InstanceRecord::new(format!("c{i}"), vec![sample(vec![1.0, 0.0], 0.0), sample(vec![0.0, 1.0], 0.0)]))
        .collect();
    ingest::write_instances(&records, dir.path().join("c.jsonl")).unwrap();
    let out = ok(dir.path(), &["alpha", "--input", "c.jsonl"]);
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["estimates"][0]["alpha"], 0.0);
}

#[test]
fn synth_preset_counts_and_provenance() {
    let dir = TempDir::new().unwrap();
    planted(dir.path(), 400, 5);
    let ds = ingest::load_instances(dir.path().join("inst.jsonl")).unwrap();
    assert_eq!(ds.len(), 400);
    let correct = ds.records.iter().filter(|r| r.label == Some(1)).count();
    assert_eq!(correct, 280);
    let prov = json(&dir.path().join("inst.jsonl.provenance.json"));
    assert_eq!(prov["preset"], "planted-benchmark");
    assert_eq!(prov["seed"], 5);
    assert_eq!(prov["spec"]["kind"], "planted");
}

const MIXTURE: &str = r#"{"kind": "mixture", "k": 6, "mixture": {
  "weights": [0.6, WEIGHT],
  "mode_directions": [[1.0, 0.0], [0.0, 1.0]],
  "within_sigma": 0.1,
  "prob_profiles": [[0.5, 0.5], [1.0]]
}}"#;

#[test]
fn synth_from_spec_file() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("spec.json"), MIXTURE.replace("WEIGHT", "0.4")).unwrap();
    ok(dir.path(), &["synth", "--input", "spec.json", "--n", "12", "--seed", "1", "--output", "m.jsonl"]);
    let ds = ingest::load_instances(dir.path().join("m.jsonl")).unwrap();
    assert_eq!(ds.len(), 12);
    assert!(ds.records.iter().all(|r| r.k() == 6 && r.label.is_none()));

    let toml = "kind = \"mixture\"\nk = 3\n[mixture]\nweights = [1.0]\nmode_directions = [[0.0, 1.0]]\nwithin_sigma = 0.0\nprob_profiles = [[0.25, 0.75]]\n";
    fs::write(dir.path().join("spec.toml"), toml).unwrap();
    ok(dir.path(), &["synth", "--input", "spec.toml", "--n", "4", "--output", "t.jsonl"]);
    assert_eq!(ingest::load_instances(dir.path().join("t.jsonl")).unwrap().len(), 4);
}

#[test]
fn synth_rejects_bad_weights() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("spec.json"), MIXTURE.replace("WEIGHT", "0.5")).unwrap();
    let out = umpire_in(dir.path(), &["synth", "--input", "spec.json", "--n", "4", "--output", "m.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("weights"));
    assert!(!dir.path().join("m.jsonl").exists());
}

#[test]
fn compare_identical_files() {
    let dir = TempDir::new().unwrap();
    planted(dir.path(), 200, 6);
    ok(dir.path(), &["score", "--input", "inst.jsonl", "--output", "a.csv"]);
    let out = ok(dir.path(), &["compare", "--input", "a.csv", "--other", "a.csv"]);
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    let deltas = rep["deltas"].as_array().unwrap();
    assert_eq!(deltas.len(), 3);
    for d in deltas {
        assert_eq!(d["delta_auroc"], 0.0);
        assert_eq!(d["delta_ece"], 0.0);
    }
}

#[test]
fn compare_against_noise() {
    let dir = TempDir::new().unwrap();
    planted(dir.path(), 1000, 7);
    ok(dir.path(), &["score", "--input", "inst.jsonl", "--output", "a.csv"]);
    let a = ScoreTable::read(dir.path().join("a.csv")).unwrap();
    let mut b = a.clone();
    let mut rng = umpire::synthetic::stream_rng(99, 0);
    for r in &mut b.rows {
        r.metrics[0] = rand::Rng::random::<f64>(&mut rng);
    }
    b.write(dir.path().join("b.csv")).unwrap();
    let out = ok(dir.path(), &["compare", "--input", "a.csv", "--other", "b.csv"]);
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    let v = &rep["deltas"][0];
    assert_eq!(v["column"], "v");
    let auroc_a = v["auroc_a"].as_f64().unwrap();
    let delta = v["delta_auroc"].as_f64().unwrap();
    // noise AUROC has standard deviation about 0.02 at this size
    assert!((delta - (auroc_a - 0.5)).abs() < 0.08, "{delta} vs {auroc_a}");
}

#[test]
fn compare_disjoint_ids_fails() {
    let dir = TempDir::new().unwrap();
    let a = oracle_table(30);
    let mut b = a.clone();
    for r in &mut b.rows {
        r.id.push('x');
    }
    a.write(dir.path().join("a.csv")).unwrap();
    b.write(dir.path().join("b.csv")).unwrap();
    assert!(!umpire_in(dir.path(), &["compare", "--input", "a.csv", "--other", "b.csv"]).status.success());
}

#[test]
fn config_file_then_flags() {
    let dir = TempDir::new().unwrap();
    planted(dir.path(), 20, 8);
    fs::write(dir.path().join("c.toml"), "seed = 11\n[kernel]\nalpha = 1.5\n[eval]\ncpc_bins = 5\n").unwrap();
    ok(dir.path(), &["score", "--input", "inst.jsonl", "--output", "f.csv", "--config", "c.toml"]);
    let run = json(&dir.path().join("f.csv.run.json"));
    assert_eq!(run["alpha"], 1.5);
    assert_eq!(run["config"]["seed"], 11);
    assert_eq!(run["config"]["eval"]["cpc_bins"], 5);

    ok(dir.path(), &["score", "--input", "inst.jsonl", "--output", "g.csv", "--config", "c.toml", "--alpha", "3", "--seed", "2"]);
    let run = json(&dir.path().join("g.csv.run.json"));
    assert_eq!(run["alpha"], 3.0);
    assert_eq!(run["config"]["seed"], 2);

    let out = Command::new(env!("CARGO_BIN_EXE_umpire"))
        .args(["score", "--input", "inst.jsonl", "--output", "h.csv"])
        .current_dir(dir.path())
        .env("UMPIRE_CONFIG", dir.path().join("c.toml"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(json(&dir.path().join("h.csv.run.json"))["alpha"], 1.5);
}

#[test]
fn config_rejects_unknown_keys() {
    let dir = TempDir::new().unwrap();
    planted(dir.path(), 10, 9);
    fs::write(dir.path().join("c.toml"), "[kernel]\nbeta = 1\n").unwrap();
    let out = umpire_in(dir.path(), &["score", "--input", "inst.jsonl", "--output", "s.csv", "--config", "c.toml"]);
    assert!(!out.status.success());
    assert!(!dir.path().join("s.csv").exists());
}

#[test]
fn lenient_skips_bad_lines() {
    let dir = TempDir::new().unwrap();
    planted(dir.path(), 10, 10);
    let mut text = fs::read_to_string(dir.path().join("inst.jsonl")).unwrap();
    text.push_str("{\"id\": \"broken\", \"samples\": []}\n");
    fs::write(dir.path().join("bad.jsonl"), text).unwrap();
    assert!(!umpire_in(dir.path(), &["score", "--input", "bad.jsonl", "--output", "s.csv"]).status.success());
    ok(dir.path(), &["score", "--input", "bad.jsonl", "--output", "s.csv", "--lenient"]);
    let run = json(&dir.path().join("s.csv.run.json"));
    assert_eq!(run["records"], 10);
    assert_eq!(run["skipped_lines"], 1);
}

#[test]
fn sweep_zero_grid_matches_library() {
    let dir = TempDir::new().unwrap();
    planted(dir.path(), 400, 12);
    ok(dir.path(), &["sweep", "--input", "inst.jsonl", "--grid", "0", "--output", "sw.csv"]);
    let text = fs::read_to_string(dir.path().join("sw.csv")).unwrap();
    let lines: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(lines[0], ["alpha", "adaptive", "auroc", "ece", "cpc", "combined", "tune_combined"]);
    assert_eq!(lines.len(), 3);

    let ds = ingest::load_instances(dir.path().join("inst.jsonl")).unwrap();
    let report = pipeline::sweep(&ds, &KernelConfig::default(), &[0.0], &EvalConfig::default(), 0.05).unwrap();
    for (cells, row) in lines[1..].iter().zip(&report.rows) {
        let num = |i: usize| cells[i].parse::<f64>().unwrap();
        assert_eq!(num(0), row.alpha);
        assert_eq!(cells[1], if row.adaptive { "1" } else { "0" });
        assert_eq!(num(2), row.auroc);
        assert_eq!(Some(num(3)), row.ece);
        assert_eq!(Some(num(4)), row.cpc);
    }
    assert_eq!(report.rows[0].alpha, 0.0);
    assert!(report.rows[1].adaptive);

    // at α = 0 the score is u, so the row equals an evaluation of u alone
    let bundles = pipeline::score_dataset(&ds, &KernelConfig::default().with_alpha(0.0), &Default::default()).unwrap();
    let (dev, rest) = split_indices(ds.len(), 0.05, 0).unwrap();
    let run = json(&dir.path().join("sw.csv.run.json"));
    assert_eq!(run["n_dev"].as_u64().unwrap() as usize, dev.len());
    let n_tune = run["n_tune"].as_u64().unwrap() as usize;
    assert_eq!(n_tune + run["n_eval"].as_u64().unwrap() as usize, rest.len());
    assert!(bundles.iter().all(|b| b.v == b.u));
}

#[test]
fn missing_input_is_an_error() {
    let dir = TempDir::new().unwrap();
    let out = umpire_in(dir.path(), &["score", "--input", "absent.jsonl", "--output", "s.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.jsonl"));
}
