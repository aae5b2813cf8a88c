use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use steatosis::raster::RgbRaster;
use steatosis::slide::{write_pyramid, PyramidImage};

fn steatosis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steatosis")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn phantom_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        let o = steatosis(&["phantom", "--seed", "7", "--isolated", "50", "--pairs", "10", "--out", s(d)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("seed 7"));
    }
    assert_eq!(dir_contents(&a), dir_contents(&b));
}

#[test]
fn zero_pairs_means_no_pair_records() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("p");
    let o = steatosis(&["phantom", "--pairs", "0", "--canvas", "512", "--isolated", "5", "--out", s(&d)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let gt: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("phantom.json")).unwrap()).unwrap();
    assert_eq!(gt["pairs"].as_array().unwrap().len(), 0);
    assert!(gt["instances"].as_array().unwrap().iter().all(|i| i["pair_id"].is_null()));
}

#[test]
fn crowded_phantom_fails() {
    let t = tempfile::tempdir().unwrap();
    let o = steatosis(&["phantom", "--canvas", "256", "--isolated", "500", "--out", s(&t.path().join("p"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("placement failure"), "{}", stderr(&o));
}

#[test]
fn missing_slide_is_an_input_error() {
    let o = steatosis(&["analyze", "/nonexistent/slide", "--out", "/tmp/unused"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("path not found") || e.contains("no base level"), "{e}");
}

#[test]
fn blank_slide_reports_no_tissue() {
    let t = tempfile::tempdir().unwrap();
    let slide = t.path().join("blank");
    let p = PyramidImage::from_base("blank", RgbRaster::new(512, 512, [245, 245, 245]), 4);
    write_pyramid(&p, &slide, &[0]).unwrap();
    let out = t.path().join("out");
    let o = steatosis(&["analyze", s(&slide), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["tissues"].as_array().unwrap().len(), 0);
    assert_eq!(r["summary"]["instance_count"], 0);
}

#[test]
fn analyze_and_eval_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let (ph, out) = (t.path().join("ph"), t.path().join("out"));
    assert!(steatosis(&["phantom", "--seed", "3", "--isolated", "40", "--pairs", "0", "--out", s(&ph)]).status.success());
    let o = steatosis(&["analyze", s(&ph), "--out", s(&out), "--workers", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = t.path().join("m.json");
    let o = steatosis(&["eval", s(&out), s(&ph), "--iou", "0.75", "--out", s(&metrics)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("IS accuracy      100.0% (40/40)"), "{}", stdout(&o));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(m["isolated_accuracy"], 1.0);
    assert!(m["match_criterion"].as_str().unwrap().contains("proxy"));
}

#[test]
fn disabled_segregation_gives_zero_os_accuracy() {
    let t = tempfile::tempdir().unwrap();
    let (ph, out) = (t.path().join("ph"), t.path().join("out"));
    assert!(steatosis(&["phantom", "--seed", "42", "--isolated", "50", "--pairs", "10", "--out", s(&ph)]).status.success());
    let mut cfg = steatosis::pipeline::PipelineConfig::default();
    cfg.segregation.enabled = false;
    let cfg_path = t.path().join("cfg.toml");
    fs::write(&cfg_path, cfg.to_toml()).unwrap();
    assert!(steatosis(&["analyze", s(&ph), "--config", s(&cfg_path), "--out", s(&out)]).status.success());
    let o = steatosis(&["eval", s(&out.join("report.json")), s(&ph)]);
    assert!(stdout(&o).contains("OS accuracy      0.0% (0/10)"), "{}", stdout(&o));
}

#[test]
fn mismatched_slide_ids_fail() {
    let t = tempfile::tempdir().unwrap();
    let (a, b, out) = (t.path().join("a"), t.path().join("b"), t.path().join("out"));
    for (d, seed) in [(&a, "1"), (&b, "2")] {
        let o = steatosis(&["phantom", "--seed", seed, "--canvas", "512", "--isolated", "5", "--pairs", "0", "--out", s(d)]);
        assert!(o.status.success());
    }
    let o = steatosis(&["analyze", s(&a), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = steatosis(&["eval", s(&out), s(&b)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("slide id mismatch"), "{}", stderr(&o));
}

#[test]
fn show_config_prints_defaults() {
    let o = steatosis(&["analyze", "--show-config"]);
    assert!(o.status.success());
    let cfg = steatosis::pipeline::PipelineConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(cfg.detection, steatosis::detection::DetectionParams::default());
    assert_eq!(cfg.analysis_level, 4);
    let o = steatosis(&["phantom", "--show-config", "--seed", "9"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("rng_seed = 9"));
}

#[test]
fn bad_config_is_an_input_error() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("bad.toml");
    fs::write(&cfg, "[detection]\nhysteresis_low = 0.9\nhysteresis_high = 0.5\n").unwrap();
    let o = steatosis(&["analyze", "x", "--config", s(&cfg), "--out", s(&t.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("detection"), "{}", stderr(&o));
}
