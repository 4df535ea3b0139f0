use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spt")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by a signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn flat_image(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("flat.pgm");
    let mut bytes = b"P5\n32 32\n255\n".to_vec();
    bytes.extend(std::iter::repeat_n(128u8, 32 * 32));
    fs::write(&path, bytes).unwrap();
    path
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&spt(&["--help"])), 0);
    assert_eq!(code(&spt(&["--version"])), 0);
    assert_eq!(code(&spt(&["train", "--help"])), 0);
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = spt(&["train", "--bogus"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--bogus"));
}

#[test]
fn missing_subcommand_is_usage_error() {
    assert_eq!(code(&spt(&[])), 1);
}

#[test]
fn zero_jobs_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = spt(&["synth", "--out", &s(dir.path()), "--jobs", "0"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_image_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("absent.pgm");
    let out = spt(&[
        "segment",
        "--image",
        &s(&image),
        "--detections",
        "d.txt",
        "--table",
        "t.spt",
        "--embeddings",
        "e.txt",
        "--out",
        &s(&dir.path().join("m.pgm")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains(&s(&image)), "{}", stderr(&out));
}

#[test]
fn invalid_config_value_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spt.cfg");
    fs::write(&cfg, "lambda = -1\n").unwrap();
    let out = spt(&["synth", "--out", &s(dir.path()), "--config", &s(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("lambda"));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spt.cfg");
    fs::write(&cfg, "lamda = 0.1\n").unwrap();
    let out = spt(&["synth", "--out", &s(dir.path()), "--config", &s(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("lamda"));
}

#[test]
fn flat_images_collapse_with_numerical_exit() {
    let dir = tempfile::tempdir().unwrap();
    flat_image(dir.path());
    let manifest = dir.path().join("manifest.txt");
    fs::write(&manifest, "[flat #0]\nflat.pgm 8 8 24 24\n").unwrap();
    let out = spt(&["train", "--manifest", &s(&manifest), "--out", &s(&dir.path().join("t.spt"))]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("collapsed"));
}

#[test]
fn malformed_manifest_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.txt");
    fs::write(&manifest, "flat.pgm 0 0 4 4\n").unwrap();
    let out = spt(&["train", "--manifest", &s(&manifest), "--out", &s(&dir.path().join("t.spt"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn corrupt_table_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.spt");
    fs::write(&table, b"not a table").unwrap();
    let data = dir.path().join("pairs.tsv");
    fs::write(&data, "a\tb\tentails\n").unwrap();
    let out = spt(&[
        "relations",
        "--mode",
        "entail",
        "--dataset",
        &s(&data),
        "--table",
        &s(&table),
        "--out",
        &s(&dir.path().join("o.csv")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn relations_from_score_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    fs::write(p("scores.txt"), "3\n0 0.9 -0.05\n-0.9 0 0.8\n0.05 -0.8 0\n").unwrap();
    fs::write(p("phrases.txt"), "a\nb\nc\n").unwrap();
    fs::write(p("pairs.tsv"), "a\tb\tentails\na\tc\tentails\nc\ta\tnot-entails\n").unwrap();
    let out = spt(&[
        "relations",
        "--mode",
        "entail",
        "--dataset",
        &s(&p("pairs.tsv")),
        "--scores",
        &s(&p("scores.txt")),
        "--phrases",
        &s(&p("phrases.txt")),
        "--graph",
        "--out",
        &s(&p("out.csv")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(p("out.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "x,y,gold,score,decision,graph_decision");
    assert_eq!(rows[1], "a,b,entails,0.9,true,true");
    // raw score rejects a->c but the graph closes a->b->c
    assert_eq!(rows[2], "a,c,entails,-0.05,false,true");
    assert_eq!(rows[3], "c,a,not-entails,0.05,true,false");
    let curve = fs::read_to_string(p("out.csv.curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("fraction,correct"));
    assert_eq!(curve.lines().count(), 11);
}

#[test]
fn graph_flag_requires_entail_mode() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    fs::write(p("scores.txt"), "2\n0 0.1\n-0.1 0\n").unwrap();
    fs::write(p("phrases.txt"), "a\nb\n").unwrap();
    fs::write(p("pairs.tsv"), "a\tb\tparaphrase\n").unwrap();
    let out = spt(&[
        "relations",
        "--mode",
        "paraphrase",
        "--dataset",
        &s(&p("pairs.tsv")),
        "--scores",
        &s(&p("scores.txt")),
        "--phrases",
        &s(&p("phrases.txt")),
        "--graph",
        "--out",
        &s(&p("out.csv")),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn synthetic_pipeline_segments_test_scene() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| s(&dir.path().join(n));
    assert_eq!(code(&spt(&["synth", "--out", &p(""), "--scenes", "3"])), 0);
    let out = spt(&["train", "--manifest", &p("manifest.txt"), "--out", &p("t.spt")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = String::from_utf8(out.stdout).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let energies = v["energies"].as_array().unwrap();
        assert!(energies.windows(2).all(|w| w[1].as_f64().unwrap() <= w[0].as_f64().unwrap() + 1e-6));
    }
    let out = spt(&[
        "segment",
        "--image",
        &p("test/scene.pgm"),
        "--detections",
        &p("test/detections.txt"),
        "--table",
        &p("t.spt"),
        "--embeddings",
        &p("embeddings.txt"),
        "--out",
        &p("mask.pgm"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("mask.pgm.json")).unwrap()).unwrap();
    assert_eq!(report["empty"], false);
    assert!(report["foreground_pixels"].as_u64().unwrap() > 0);

    let mask = spt_core::imaging::load_image(Path::new(&p("mask.pgm"))).unwrap();
    let gt = spt_core::imaging::load_image(Path::new(&p("test/gt.pgm"))).unwrap();
    let bin = |i: &spt_core::Image| spt_core::PixelMask::new(i.width(), i.height(), i.data().iter().map(|&v| v > 0.5).collect()).unwrap();
    let m = spt_core::eval::seg_metrics(&bin(&mask), &bin(&gt)).unwrap();
    assert!(m.jaccard > 0.8, "{m:?}");
}
