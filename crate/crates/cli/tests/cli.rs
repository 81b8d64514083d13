use std::path::Path;
use std::process::{Command, Output};

fn meshmotion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshmotion"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = meshmotion(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TINY: &str = r#"
format_version = 1
epochs = 1
eigenpairs = 16

[extractor]
width = 8
blocks = 1
output = 6

[embedder]
points = 64
width = 8
point_layers = 2
code = 6
gru_hidden = 4
gru_layers = 1

[generator]
width = 8
hidden_layers = 2
"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&[
        "synth", "--out", s(&data), "--train-identities", "1", "--test-identities", "1",
        "--motions", "arm_raise,walk_cycle", "--frames", "10",
    ]);
    assert!(data.join("manifest.json").exists());

    let cfg = d.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let ckpt = d.join("model.json");
    let stdout = ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&ckpt)]);
    assert!(stdout.contains("checkpoint"), "{stdout}");

    let report = d.join("report.json");
    let stdout = ok(&[
        "eval", "--ckpt", s(&ckpt), "--data", s(&data), "--split", "test", "--baseline",
        "--json", s(&report),
    ]);
    assert!(stdout.contains("static baseline"), "{stdout}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["sequences"].as_array().unwrap().len(), 2);

    let csv = d.join("dev.csv");
    ok(&["robustness", "--ckpt", s(&ckpt), "--data", s(&data), "--variants", "original,ds2", "--csv", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("variant,mse,cosim,mse_deviation,cosim_deviation"));
    assert_eq!(text.lines().count(), 3);

    let motion = data.join("test/id01/walk_cycle");
    let other = data.join("test/id01/arm_raise");
    let codes = d.join("codes.csv");
    let mds = d.join("mds.csv");
    ok(&[
        "embed", "--ckpt", s(&ckpt), "--motion", s(&motion), "--csv", s(&codes), "--mds", s(&mds),
        "--compare", s(&other),
    ]);
    assert_eq!(std::fs::read_to_string(&codes).unwrap().lines().count(), 11);
    assert_eq!(std::fs::read_to_string(&mds).unwrap().lines().count(), 21);

    let out = d.join("transfer");
    ok(&[
        "transfer", "--ckpt", s(&ckpt), "--source", s(&data.join("train/id00/arm_raise/frame_0000.obj")),
        "--motion", s(&motion), "--out", s(&out),
    ]);
    assert!(out.join("frame_0009.obj").exists());
    assert!(out.join("transfer.json").exists());

    let bench = d.join("bench.json");
    ok(&["bench", "--ckpt", s(&ckpt), "--resolutions", "800", "--frames", "5", "--json", s(&bench)]);
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&bench).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 1);
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = d.join("bad.toml");
    std::fs::write(&bad, "format_version = 1\nlearning_rate = -1.0\n").unwrap();
    let out = meshmotion(&["train", "--config", s(&bad), "--data", s(d), "--out", s(&d.join("x.json"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = meshmotion(&["eval", "--ckpt", s(&d.join("missing.json")), "--data", s(d)]);
    assert_eq!(out.status.code(), Some(1));

    let junk = d.join("junk.json");
    std::fs::write(&junk, "{not json").unwrap();
    let out = meshmotion(&["eval", "--ckpt", s(&junk), "--data", s(d)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
