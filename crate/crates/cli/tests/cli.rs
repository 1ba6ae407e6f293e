use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hfjump(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hfjump"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn help_and_version_exit_zero_and_unknown_flags_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(hfjump(&["--help"], tmp.path()).status.code(), Some(0));
    assert_eq!(hfjump(&["--version"], tmp.path()).status.code(), Some(0));
    let help = String::from_utf8(hfjump(&["--help"], tmp.path()).stdout).unwrap();
    for sub in ["ingest", "simulate", "detect", "analyze", "report"] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
    assert_eq!(hfjump(&["detect", "--nope"], tmp.path()).status.code(), Some(1));
    assert_eq!(hfjump(&["frobnicate"], tmp.path()).status.code(), Some(1));
}

#[test]
fn bad_config_exits_three_and_missing_catalog_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.toml"), "alpha = 0.999\nunknown_key = 3\n").unwrap();
    let out = hfjump(&["detect", "--store", "s", "--out", "o", "--config", "bad.toml"], d);
    assert_eq!(out.status.code(), Some(3));
    let out = hfjump(&["detect", "--store", "s", "--out", "o", "--coverage", "1.5"], d);
    assert_eq!(out.status.code(), Some(3));
    let out = hfjump(&["analyze", "--catalog", "missing", "--out", "o"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn detect_on_empty_store_succeeds_with_empty_catalog_and_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::create_dir(d.join("store")).unwrap();
    let out = hfjump(&["detect", "--store", "store", "--out", "cat"], d);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(d.join("cat/catalog.jsonl")).unwrap(), b"");
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
    assert!(d.join("cat/manifest.json").exists());
}

#[test]
fn simulate_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let args = |out: &'static str| ["simulate", "--days", "20", "--jumps", "0", "--seed", "7", "--ticks-per-day", "2880", "--out", out];
    assert!(hfjump(&args("a"), d).status.success());
    assert!(hfjump(&args("b"), d).status.success());
    let a = dir_bytes(&d.join("a"));
    assert_eq!(a.iter().filter(|(n, _)| n.starts_with("ticks_")).count(), 20);
    assert_eq!(a, dir_bytes(&d.join("b")));
}

#[test]
fn config_file_and_flag_override_reach_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::create_dir(d.join("store")).unwrap();
    fs::write(d.join("run.toml"), "alpha = 0.99\ndedup_window = 5\n").unwrap();
    let out = hfjump(&["detect", "--store", "store", "--out", "cat", "--config", "run.toml", "--alpha", "0.95"], d);
    assert!(out.status.success());
    let manifest: serde_like::Manifest = serde_like::read(&d.join("cat/manifest.json"));
    assert_eq!(manifest.alpha, 0.95);
    assert_eq!(manifest.dedup_window, 5);
}

/// Minimal manifest probe without pulling in serde_json as a dev dependency.
mod serde_like {
    use std::path::Path;

    pub struct Manifest {
        pub alpha: f64,
        pub dedup_window: usize,
    }

    fn field<'a>(json: &'a str, key: &str) -> &'a str {
        let at = json.find(&format!("\"{key}\"")).expect("key present");
        let rest = &json[at + key.len() + 2..];
        let rest = rest.trim_start().strip_prefix(':').unwrap().trim_start();
        let end = rest.find([',', '\n', '}']).unwrap();
        rest[..end].trim()
    }

    pub fn read(path: &Path) -> Manifest {
        let json = std::fs::read_to_string(path).unwrap();
        Manifest {
            alpha: field(&json, "alpha").parse().unwrap(),
            dedup_window: field(&json, "dedup_window").parse().unwrap(),
        }
    }
}

#[test]
fn end_to_end_fifty_days_recovers_planted_jumps() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let sim = hfjump(
        &["simulate", "--out", "sim", "--days", "50", "--jumps", "1", "--jump-size", "0.03", "--seed", "11"],
        d,
    );
    assert!(sim.status.success());
    assert!(hfjump(&["ingest", "sim", "--store", "store"], d).status.success());
    let det = hfjump(&["detect", "--store", "store", "--out", "cat"], d);
    assert!(det.status.success(), "{}", String::from_utf8_lossy(&det.stderr));
    let rep = hfjump(&["report", "--catalog", "cat", "--out", "rep", "--store", "store"], d);
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stderr));

    let truth = fs::read_to_string(d.join("sim/ground_truth.csv")).unwrap();
    let planted = truth.lines().skip(1).count();
    let catalog = fs::read_to_string(d.join("cat/catalog.jsonl")).unwrap();
    assert_eq!(catalog.lines().count(), 50);
    let found = catalog.matches("\"direction\"").count();
    assert!(planted >= 25, "planted {planted}");
    // A jump of 0.03 is 15 daily sigma; most should be caught, and few extra appear.
    assert!(found as f64 >= 0.8 * planted as f64, "found {found} of {planted}");
    assert!(found <= planted + 2, "found {found} of {planted}");

    // Every artifact carries the configuration hash.
    let hash = fs::read_to_string(d.join("rep/config_hash.txt")).unwrap().trim().to_string();
    for name in ["timeline.svg", "events.csv", "config.toml", "tables/regression.txt", "tables/panel.csv"] {
        let body = fs::read_to_string(d.join("rep").join(name)).unwrap();
        assert!(body.contains(&hash), "{name} lacks the config hash");
    }
    assert!(fs::read_to_string(d.join("rep/timeline.svg")).unwrap().contains("<svg"));

    // Re-running report without upstream changes leaves content and mtimes unchanged.
    let before = dir_bytes(&d.join("rep/tables"));
    let mtime = fs::metadata(d.join("rep/timeline.svg")).unwrap().modified().unwrap();
    assert!(hfjump(&["report", "--catalog", "cat", "--out", "rep", "--store", "store"], d).status.success());
    assert_eq!(before, dir_bytes(&d.join("rep/tables")));
    assert_eq!(mtime, fs::metadata(d.join("rep/timeline.svg")).unwrap().modified().unwrap());
}
