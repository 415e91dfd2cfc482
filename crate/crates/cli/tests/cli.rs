use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn meshattn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshattn"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = meshattn(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"{
  "levels": 2,
  "factor": 4,
  "model": {"encoder_widths": [3, 8, 16], "decoder_widths": [16, 16, 8, 3], "latent_dim": 4, "cheb_order": 3},
  "train": {"epochs": 2, "batch_size": 4, "checkpoint_every": 1}
}"#;

fn setup(dir: &Path) {
    ok(&["synth", "--samples", "20", "--subdiv", "2", "--order", "2", "--seed", "3", "--out", "data"], dir);
    fs::write(dir.join("config.json"), CONFIG).unwrap();
}

#[test]
fn train_eval_export_and_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);

    let counts = ok(&["hierarchy", "--mesh", "data/template.obj", "--levels", "2", "--factor", "4", "--out", "hier"], dir);
    assert_eq!(counts.trim(), "11,41,162");

    let trained = ok(&["train", "--data", "data", "--config", "config.json", "--hierarchy", "hier", "--out", "run"], dir);
    assert!(trained.starts_with("loss "));
    assert!(dir.join("run/checkpoints/epoch_0001").is_dir());
    assert!(dir.join("run/checkpoints/epoch_0002").is_dir());
    let history = fs::read_to_string(dir.join("run/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    ok(&["eval", "--data", "data", "--checkpoint", "run/model", "--report", "eval/test.csv"], dir);
    let metrics = fs::read_to_string(dir.join("eval/test.csv")).unwrap();
    assert!(metrics.starts_with("metric,value"));
    assert!(dir.join("eval/test_curve.csv").is_file());

    ok(&["export-maps", "--checkpoint", "run/model", "--out", "maps"], dir);
    for stem in ["down_0", "down_1", "up_0", "up_1"] {
        assert!(dir.join(format!("maps/{stem}.csv")).is_file(), "{stem}");
    }

    let rf = ok(&["rf", "--checkpoint", "run/model", "--level", "0", "--vertex", "2", "--out", "rf.ply"], dir);
    assert!(rf.contains("receptive field"));
    assert!(fs::read(dir.join("rf.ply")).unwrap().starts_with(b"ply"));

    for args in [
        &["latent", "interp", "--checkpoint", "run/model", "--data", "data", "--out", "i.obj", "--a", "0", "--b", "1", "--alpha", "0.5"][..],
        &["latent", "extrap", "--checkpoint", "run/model", "--data", "data", "--out", "e.obj", "--a", "0", "--b", "1", "--alpha", "-0.5"],
        &["latent", "transfer", "--checkpoint", "run/model", "--data", "data", "--out", "t.obj", "--s0", "0", "--s1", "1", "--t0", "2"],
    ] {
        ok(args, dir);
    }
    let obj = fs::read_to_string(dir.join("t.obj")).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 162);
}

#[test]
fn compare_writes_one_row_per_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    ok(&["compare", "--data", "data", "--config", "config.json", "--methods", "attention,qem", "--seeds", "0,1", "--report", "cmp.csv"], dir);
    let table = fs::read_to_string(dir.join("cmp.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn gradcheck_passes_and_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["gradcheck", "--report", "grad.csv"], tmp.path());
    let report = fs::read_to_string(tmp.path().join("grad.csv")).unwrap();
    assert!(report.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn gradcheck_with_impossible_tolerance_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = meshattn(&["gradcheck", "--tol", "0"], tmp.path());
    assert!(!out.status.success());
}

#[test]
fn bad_inputs_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    fs::write(dir.join("broken.json"), "{\"train\": {\"epochs\": 0}}").unwrap();
    let out = meshattn(&["train", "--data", "data", "--config", "broken.json", "--out", "run"], dir);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    fs::write(dir.join("garbled.json"), "not json").unwrap();
    let out = meshattn(&["train", "--data", "data", "--config", "garbled.json", "--out", "run"], dir);
    assert!(!out.status.success());

    let out = meshattn(&["eval", "--data", "missing", "--checkpoint", "nowhere", "--report", "r.csv"], dir);
    assert!(!out.status.success());

    let out = meshattn(&["compare", "--data", "data", "--methods", "bogus", "--report", "c.csv"], dir);
    assert!(!out.status.success());
}
