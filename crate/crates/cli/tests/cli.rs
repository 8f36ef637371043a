use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn prismatic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prismatic"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.trim_end().lines().count(), 1, "single line: {text}");
    serde_json::from_str(text.trim_end()).unwrap()
}

fn synth(dir: &Path, seed: &str) {
    let out = prismatic(&[
        "synth",
        "--stocks",
        "30",
        "--years",
        "1",
        "--communities",
        "3",
        "--seed",
        seed,
        "--out",
        dir.to_str().unwrap(),
    ]);
    stdout_json(&out);
}

fn ingest(dir: &Path) -> Output {
    let d = dir.to_str().unwrap();
    prismatic(&[
        "ingest",
        "--prices",
        &format!("{d}/prices.csv"),
        "--meta",
        &format!("{d}/meta.json"),
        "--out",
        d,
        "--benchmark",
        "000300.IDX",
    ])
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("prices.csv");
    std::fs::write(
        &prices,
        "ticker,date,close,volume\nA,2020-01-02,10,1\nA,2020-01-03,oops,1\n",
    )
    .unwrap();
    let meta = dir.path().join("meta.json");
    std::fs::write(&meta, "[]").unwrap();
    let out = prismatic(&[
        "ingest",
        "--prices",
        prices.to_str().unwrap(),
        "--meta",
        meta.to_str().unwrap(),
        "--out",
        dir.path().join("store").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "ingest");
    assert_eq!(err["line"], 3);
    assert!(err["message"].as_str().unwrap().contains("line 3"));
}

#[test]
fn missing_input_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = prismatic(&[
        "ingest",
        "--prices",
        "/nonexistent/prices.csv",
        "--meta",
        "/nonexistent/meta.json",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let err = stderr_json(&out);
    assert!(err["error"].is_string());
    assert!(err.get("line").is_none());
}

#[test]
fn synth_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path(), "9");
    synth(b.path(), "9");
    for f in ["prices.csv", "meta.json", "truth.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn pipeline_from_synth_to_prism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    synth(dir.path(), "4");
    let report = stdout_json(&ingest(dir.path()));
    assert_eq!(report["instruments"], 31);
    assert_eq!(report["profiles"], 30);

    let corr = stdout_json(&prismatic(&["corr", "--data", d, "--all"]));
    assert_eq!(corr[0]["year"], 2010);
    assert_eq!(corr[0]["instruments"], 31);
    assert!(dir.path().join("cache").read_dir().unwrap().count() == 1);

    let gmc = stdout_json(&prismatic(&[
        "gmc",
        "--data",
        d,
        "--clusters",
        "3",
        "--k",
        "8",
    ]));
    assert_eq!(gmc["c"], 3);
    assert_eq!(gmc["assignment"].as_object().unwrap().len(), 30);
    assert!(dir.path().join("gmc.json").exists());

    let csv = prismatic(&[
        "prism",
        "--data",
        d,
        "--a",
        "600000.SH",
        "--b",
        "600001.SH",
        "--from",
        "2010-01-01",
        "--to",
        "2010-03-31",
    ]);
    assert!(
        csv.status.success(),
        "{}",
        String::from_utf8_lossy(&csv.stderr)
    );
    let text = String::from_utf8(csv.stdout).unwrap();
    let rows = text.lines().count() - 1;
    // n(n+1)/2 cells for some n
    let n = ((((8 * rows + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    assert_eq!(n * (n + 1) / 2, rows);

    let bin = dir.path().join("p.bin");
    let out = prismatic(&[
        "prism",
        "--data",
        d,
        "--a",
        "600000.SH",
        "--b",
        "600001.SH",
        "--from",
        "2010-01-01",
        "--to",
        "2010-03-31",
        "--format",
        "bin",
        "--out",
        bin.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let tri = prismatic_core::prism::PrismTriangle::read_binary(std::fs::File::open(&bin).unwrap())
        .unwrap();
    assert_eq!(tri.n, n);

    let err = stderr_json(&prismatic(&[
        "prism",
        "--data",
        d,
        "--a",
        "600000.SH",
        "--b",
        "NOPE",
        "--from",
        "2010-01-01",
        "--to",
        "2010-03-31",
    ]));
    assert!(err["message"].as_str().unwrap().contains("NOPE"));
}

#[test]
fn corr_needs_a_year_selection() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1");
    stdout_json(&ingest(dir.path()));
    let err = stderr_json(&prismatic(&[
        "corr",
        "--data",
        dir.path().to_str().unwrap(),
    ]));
    assert_eq!(err["error"], "usage");
}
