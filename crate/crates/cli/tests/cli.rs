use std::path::Path;
use std::process::{Command, Output};

use hcrm_core::topic_model::PosteriorSummary;

fn hcrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcrm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn parse_f64(o: &Output) -> f64 {
    stdout(o).trim().parse().expect("a number")
}

#[test]
fn pmf_single_object_example() {
    let o = hcrm(&["pmf", "--matrix", "1"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "-1.38629436111989e0");
    assert!((parse_f64(&o) - 0.25f64.ln()).abs() < 1e-14);
}

#[test]
fn pmf_empty_matrix_is_poisson_zero() {
    let o = hcrm(&["pmf", "--matrix", "", "--n", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!((parse_f64(&o) + 4f64.ln()).abs() < 1e-14);
    let o = hcrm(&["pmf", "--matrix", "", "--n", "2", "--base", "ggp", "--d", "0.5", "--theta", "2"]);
    // θψ(2) for d = 1/2 is 2·2(√3 − 1).
    assert!((parse_f64(&o) + 4.0 * (3f64.sqrt() - 1.0)).abs() < 1e-13);
}

#[test]
fn pmf_zero_column_is_an_error() {
    let o = hcrm(&["pmf", "--matrix", "1,0;2,0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("all zero"));
}

#[test]
fn pmf_from_csv_and_other_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    std::fs::write(&csv, "1,2\n0,1\n").unwrap();
    let a = parse_f64(&hcrm(&["pmf", "--csv", csv.to_str().unwrap()]));
    let b = parse_f64(&hcrm(&["pmf", "--matrix", "1,2;0,1"]));
    assert_eq!(a, b);
    let c = hcrm(&["pmf", "--kind", "ccrm", "--matrix", "1,2;0,1"]);
    assert!(c.status.success());
    let e = hcrm(&["pmf", "--kind", "espf2", "--matrix", "2,1", "--base", "sggp"]);
    assert!(e.status.success(), "{}", stderr(&e));
    assert!(parse_f64(&e) < 0.0);
}

#[test]
fn fit_without_corpus_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcrm(&["fit", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = hcrm(&[
        "fit",
        "--docword",
        "/nonexistent/docword.txt",
        "--vocab",
        "/nonexistent/vocab.txt",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not found"));
}

#[test]
fn zero_iterations_writes_only_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = hcrm(&["fit", "--synthetic", "--iterations", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpts: Vec<_> = std::fs::read_dir(out.join("checkpoints")).unwrap().collect();
    assert_eq!(ckpts.len(), 1);
    assert!(out.join("checkpoints/iter-000000.ckpt").is_file());
    assert!(!out.join("progress.jsonl").exists());
    assert!(!out.join("summary.json").exists());
}

#[test]
fn fit_reads_uci_files() {
    let dir = tempfile::tempdir().unwrap();
    let dw = dir.path().join("docword.txt");
    let vb = dir.path().join("vocab.txt");
    std::fs::write(&dw, "3\n4\n6\n1 1 3\n1 2 2\n2 3 4\n2 4 1\n3 1 2\n3 3 2\n").unwrap();
    std::fs::write(&vb, "apple\nbanana\ncherry\ndate\n").unwrap();
    let out = dir.path().join("run");
    let o = hcrm(&[
        "fit",
        "--docword",
        dw.to_str().unwrap(),
        "--vocab",
        vb.to_str().unwrap(),
        "--iterations",
        "20",
        "--burn-in",
        "10",
        "--thin",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(out.join("progress.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 20);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["iteration", "dishes", "tables", "log_joint", "theta"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let summary: PosteriorSummary =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.num_samples, 5);
    assert!(summary.max_row_sum_error() < 1e-9);
    assert!(std::fs::read_to_string(out.join("top_words.txt")).unwrap().contains("topic 0\t"));
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "seed = 4\nout = \"out\"\n[model]\nbase = \"sggp\"\nsggp_components = \"0.5:0,0.5:0.3\"\n[sampler]\niterations = 10\nburn_in = 4\n[corpus.synthetic]\ndocs = 8\ndoc_len = 10\n",
    )
    .unwrap();
    let o = hcrm(&["fit", "--config", cfg.to_str().unwrap(), "--thin", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed = std::fs::read_to_string(dir.path().join("out/config.toml")).unwrap();
    assert!(echoed.contains("thin = 3"));
    assert!(echoed.contains("base = \"sggp\""));
    assert!(echoed.contains("seed = 4"));
    let bad = hcrm(&["fit", "--synthetic", "--sggp-components", "1-0", "--base", "sggp"]);
    assert_eq!(bad.status.code(), Some(2));
}

fn write_uniform_summaries(out: &Path, grid: &[f64], docs: usize, w: usize) {
    for &p in grid {
        let dir = out.join(format!("p_train-{p:.2}"));
        std::fs::create_dir_all(&dir).unwrap();
        let s = PosteriorSummary::uniform(docs, 2, w);
        std::fs::write(dir.join("summary.json"), serde_json::to_string(&s).unwrap()).unwrap();
    }
}

#[test]
fn eval_uniform_summary_gives_vocabulary_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval");
    write_uniform_summaries(&out, &[0.3, 0.5], 50, 10);
    let o = hcrm(&["eval", "--synthetic", "--no-fit", "--grid", "0.3,0.5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("perplexity.csv")).unwrap();
    assert_eq!(csv, stdout(&o));
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for r in rows.iter().filter(|r| r[1] != "unigram") {
        assert!((r[2].parse::<f64>().unwrap() - 10.0).abs() < 1e-9, "{r:?}");
    }
}

#[test]
fn eval_missing_summary_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcrm(&["eval", "--synthetic", "--no-fit", "--grid", "0.4", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing summary"));
}

#[test]
fn eval_with_fits_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = hcrm(&[
            "eval",
            "--synthetic",
            "--synth-docs",
            "10",
            "--synth-doc-len",
            "20",
            "--iterations",
            "30",
            "--burn-in",
            "10",
            "--grid",
            "0.3,0.7",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out.join("perplexity.csv")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("0.3,hcrm-gamma-gamma,"));
    assert!(text.contains("0.7,unigram,"));
}

#[test]
fn verify_passes_and_fault_fails() {
    let o = hcrm(&["verify", "--quick"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("all checks passed"));

    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("report.json");
    let o = hcrm(&["verify", "--quick", "--fault", "psi-sign-flip", "--json", json.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL bernstein_signs"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert!(report["checks"].as_array().unwrap().iter().any(|c| c["name"] == "bernstein_signs" && c["pass"] == false));
}

#[test]
fn verify_zero_budget_reports_budget_error() {
    let o = hcrm(&["verify", "--quick", "--budget", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("budget"));
}
