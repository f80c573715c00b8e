use std::path::Path;
use std::process::{Command, Output};

fn geoalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoalign")).args(args).output().expect("spawn geoalign")
}

fn ok(args: &[&str]) -> String {
    let out = geoalign(args);
    assert!(
        out.status.success(),
        "geoalign {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Runs the stages one by one and returns (evaluate records, ablate records).
fn manual_chain(dir: &Path, jobs: &str) -> (String, String) {
    let raw = dir.join("raw");
    ok(&["--jobs", jobs, "gen-synthetic", "--seed", "3", "--classes", "6", "--views", "4", "--side", "64", "--out-dir", p(&raw)]);
    let stages = [("style-align", "raw", "styled"), ("crop-rotate", "styled", "cropped"), ("extract", "cropped", "fmaps")];
    for (cmd, from, to) in stages {
        let manifest = dir.join(from).join("manifest.tsv");
        ok(&["--jobs", jobs, cmd, "--manifest", p(&manifest), "--out-dir", p(&dir.join(to))]);
    }
    let emb = dir.join("emb.tsv");
    let idx = dir.join("idx.tsv");
    ok(&["pool", "--manifest", p(&dir.join("fmaps/manifest.tsv")), "--out", p(&emb)]);
    ok(&["index", "--embeddings", p(&emb), "--view", "satellite", "--out", p(&idx)]);
    let eval = ok(&["evaluate", "--index", p(&idx), "--queries", p(&emb), "--query-view", "drone", "--records"]);
    let ablation = ok(&["--jobs", jobs, "ablate", "--manifest", p(&raw.join("manifest.tsv")), "--records"]);
    (eval, ablation)
}

fn records(text: &str) -> Vec<String> {
    text.lines().filter(|l| l.starts_with("direction=")).map(String::from).collect()
}

#[test]
fn stages_compose_to_the_full_ablation_row() {
    let dir = tempfile::tempdir().unwrap();
    let (eval, ablation) = manual_chain(dir.path(), "2");
    let manual = records(&eval);
    let full: Vec<String> = ablation
        .lines()
        .filter_map(|l| l.strip_prefix("method=C+R+A "))
        .filter(|l| l.starts_with("direction=drone->satellite"))
        .map(String::from)
        .collect();
    assert_eq!(manual.len(), 4);
    assert_eq!(manual, full);
}

#[test]
fn single_worker_matches_default_pool() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(manual_chain(a.path(), "1"), manual_chain(b.path(), "3"));
}

#[test]
fn evaluate_columns_follow_k() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["gen-synthetic", "--classes", "3", "--views", "2", "--side", "64", "--out-dir", p(&raw)]);
    ok(&["extract", "--manifest", p(&raw.join("manifest.tsv")), "--out-dir", p(&dir.path().join("f"))]);
    let emb = dir.path().join("emb.tsv");
    let idx = dir.path().join("idx.tsv");
    ok(&["pool", "--manifest", p(&dir.path().join("f/manifest.tsv")), "--strategy", "2+2", "--out", p(&emb)]);
    ok(&["index", "--embeddings", p(&emb), "--view", "satellite", "--out", p(&idx)]);

    let table = ok(&["evaluate", "--index", p(&idx), "--queries", p(&emb), "--query-view", "drone", "--k", "1,5,10"]);
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["direction", "R@1", "R@5", "R@10", "mAP"]);

    let table = ok(&["evaluate", "--index", p(&idx), "--queries", p(&emb), "--query-view", "drone", "--k", "2"]);
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["direction", "R@2", "mAP"]);

    let ranked = ok(&["query", "--index", p(&idx), "--embeddings", p(&emb), "--id", "drone/0001/image-01", "--top", "2"]);
    assert_eq!(ranked.lines().count(), 2);
    assert!(ranked.starts_with("drone/0001/image-01\t1\tsatellite/"));
}

#[test]
fn single_file_mode_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["gen-synthetic", "--classes", "2", "--views", "1", "--side", "64", "--out-dir", p(&raw)]);
    let img = raw.join("drone/0000/image-00.png");
    let styled = dir.path().join("s.png");
    let turned = dir.path().join("r.png");
    let fmap = dir.path().join("x.fmap");
    ok(&["style-align", "--input", p(&img), "--output", p(&styled), "--target", "100"]);
    ok(&["crop-rotate", "--input", p(&styled), "--output", p(&turned), "--heading-deg", "-30"]);
    ok(&["extract", "--input", p(&turned), "--output", p(&fmap)]);
    // 64 -> 32 -> 16 -> 8 after three pooling stages.
    assert_eq!(std::fs::metadata(&fmap).unwrap().len(), 18 + 4 * 32 * 8 * 8);
    let line = ok(&["pool", "--input", p(&fmap), "--strategy", "2x2"]);
    let values = line.trim_end().rsplit('\t').next().unwrap().split(',').count();
    assert_eq!(values, 32 * 5);
}

#[test]
fn scan_finds_generated_layout() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-synthetic", "--classes", "2", "--views", "3", "--side", "64", "--out-dir", p(dir.path())]);
    let text = ok(&["scan", "--root", p(dir.path())]);
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 2 * 4, "{text}");
    assert!(rows.iter().any(|r| r.contains("drone/0001/image-02.png")));
}

#[test]
fn print_config_is_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let toml = ok(&["ablate", "--print-config", "--strategy", "3+3"]);
    assert!(toml.contains("strategy = \"3+3\""), "{toml}");
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, &toml).unwrap();
    assert_eq!(ok(&["ablate", "--print-config", "--config", p(&path)]), toml);
}

#[test]
fn bad_strategy_is_a_usage_error() {
    let out = geoalign(&["pool", "--input", "x.fmap", "--strategy", "3*3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("3*3"));
}

#[test]
fn data_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.tsv");
    let out = geoalign(&["evaluate", "--index", p(&missing), "--queries", p(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: ") && stderr.contains("missing.tsv"), "{stderr}");

    let junk = dir.path().join("junk.fmap");
    std::fs::write(&junk, b"not a feature map").unwrap();
    let out = geoalign(&["pool", "--input", p(&junk)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a feature map file"));
}

#[test]
fn help_lists_subcommands() {
    let text = ok(&["--help"]);
    for cmd in ["style-align", "crop-rotate", "extract", "pool", "index", "query", "evaluate", "scan", "gen-synthetic", "ablate"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
}
