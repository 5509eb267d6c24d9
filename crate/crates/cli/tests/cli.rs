use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn xdisease(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xdisease")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn protocol_corpus(root: &Path) -> std::path::PathBuf {
    let out = xdisease(&["gen-synthetic", "--scenario", "protocol", "--seed", "2", "--out", s(root)]);
    assert!(out.status.success(), "{}", stderr(&out));
    root.join("protocol")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn validate_accepts_generated_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = protocol_corpus(tmp.path());
    let out = xdisease(&["validate", "--corpus", s(&corpus)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("series: 3"));
}

#[test]
fn validate_names_disease_missing_from_taxonomy() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = protocol_corpus(tmp.path());
    fs::write(corpus.join("taxonomy.csv"), "disease,mode_of_transmission,aliases\nd0,respiratory,\n").unwrap();
    let out = xdisease(&["validate", "--corpus", s(&corpus)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("d1"), "{}", stderr(&out));
}

#[test]
fn validate_rejects_empty_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = xdisease(&["validate", "--corpus", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn backtest_without_seed_for_all_data_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = protocol_corpus(tmp.path());
    let out = xdisease(&["backtest", "--corpus", s(&corpus), "--output", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("seed"));
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = protocol_corpus(tmp.path());
    let out_dir = tmp.path().join("run");
    let out = xdisease(&[
        "backtest", "--corpus", s(&corpus), "--targets", "alpha/d0/*/L0,nobody/none/*/nowhere", "--seed", "5",
        "--output", s(&out_dir), "--n-trees", "30", "--max-depth", "3", "--jobs", "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let (header, scores) = read_csv(&out_dir.join("scores.csv"));
    assert_eq!(scores.len(), 8);
    assert_eq!(header.last().unwrap(), "mae_ratio_vs_single_stream");
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for row in &scores {
        let base = scores
            .iter()
            .find(|r| r[col("model")] == row[col("model")] && r[col("scope")] == "single_stream")
            .unwrap();
        let ratio: f64 = row[col("mae_ratio_vs_single_stream")].parse().unwrap();
        let expect = row[col("mae")].parse::<f64>().unwrap() / base[col("mae")].parse::<f64>().unwrap();
        assert!((ratio - expect).abs() <= 1e-12);
    }
    let (_, skipped) = read_csv(&out_dir.join("skipped.csv"));
    assert_eq!(skipped.len(), 1);
    assert_eq!(skipped[0][0], "nobody/none/*/nowhere");
    assert_eq!(fs::read_dir(out_dir.join("forecasts")).unwrap().count(), 8);

    let out = xdisease(&["report", "--corpus", s(&corpus), "--output", s(&out_dir), "--seed", "5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = out_dir.join("report");
    for f in ["scope_comparison.csv", "scope_fractions.csv", "training_summary.csv", "scores_long.csv", "report.json"] {
        assert!(report.join(f).is_file(), "{f} missing");
    }
    let (header, rows) = read_csv(&report.join("scope_comparison.csv"));
    assert_eq!(rows.len(), 2);
    assert!(header.contains(&"ratio_mode_of_transmission".to_string()));
    let (_, fractions) = read_csv(&report.join("scope_fractions.csv"));
    assert_eq!(fractions.len(), 6);
    let (_, summaries) = read_csv(&report.join("training_summary.csv"));
    assert_eq!(summaries.len(), 4);

    let out = xdisease(&["analyze-neighborhoods", "--output", s(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (header, rows) = read_csv(&out_dir.join("composition_report.csv"));
    assert_eq!(header, ["target", "week", "disease", "neighborhood_share", "library_share", "ratio"]);
    let mut per_week = std::collections::BTreeMap::<String, f64>::new();
    for r in rows.iter().filter(|r| r[1] != "all") {
        *per_week.entry(r[1].clone()).or_default() += r[3].parse::<f64>().unwrap();
    }
    assert!(!per_week.is_empty());
    assert!(per_week.values().all(|t| (t - 1.0).abs() <= 1e-9));
}

#[test]
fn analyze_without_logs_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = xdisease(&["analyze-neighborhoods", "--output", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_on_incomplete_grid_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = protocol_corpus(tmp.path());
    let out_dir = tmp.path().join("run");
    let out = xdisease(&[
        "backtest", "--corpus", s(&corpus), "--scopes", "single_stream", "--models", "moa", "--output", s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = xdisease(&["report", "--corpus", s(&corpus), "--output", s(&out_dir), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    protocol_corpus(tmp.path());
    fs::write(
        tmp.path().join("run.toml"),
        "corpus = \"protocol\"\noutput = \"from-config\"\nscopes = [\"single_stream\"]\nmodels = [\"moa\"]\n",
    )
    .unwrap();
    let flag_out = tmp.path().join("from-flag");
    let out = xdisease(&["backtest", "--config", s(&tmp.path().join("run.toml")), "--output", s(&flag_out)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(flag_out.join("scores.csv").is_file());
    assert!(!tmp.path().join("from-config").exists());
}
