use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn podlrom(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_podlrom"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn podlrom")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = podlrom(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn manifest(dir: &Path, out: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(format!("{out}.manifest.json"))).expect("manifest");
    serde_json::from_str(&text).unwrap()
}

/// Quickstart config with a short training budget.
fn small_config(dir: &Path, epochs: usize) {
    ok(dir, &["template", "--problem", "pulse1d", "--out", "cfg.json"]);
    let mut c: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("cfg.json")).unwrap()).unwrap();
    c["problem"]["grid"] = 64.into();
    c["sampling"]["n_t"] = 10.into();
    c["sampling"]["train"]["counts"] = serde_json::json!([8]);
    c["train"]["max_epochs"] = epochs.into();
    c["train"]["batch_size"] = 16.into();
    std::fs::write(dir.join("cfg.json"), serde_json::to_string_pretty(&c).unwrap()).unwrap();
}

fn pipeline(dir: &Path) {
    ok(dir, &["gen", "--problem", "pulse1d", "--config", "cfg.json", "--out", "train.pdrs"]);
    ok(dir, &["gen", "--config", "cfg.json", "--split", "test", "--out", "test.pdrs"]);
    ok(dir, &["rsvd", "--snaps", "train.pdrs", "--config", "cfg.json", "--out", "basis.pdrb"]);
    ok(dir, &["train", "--snaps", "train.pdrs", "--basis", "basis.pdrb", "--config", "cfg.json", "--out", "model.pdrc"]);
    ok(dir, &["infer", "--ckpt", "model.pdrc", "--basis", "basis.pdrb", "--params", "test.pdrs", "--out", "approx.pdrs"]);
    ok(dir, &["eval", "--truth", "test.pdrs", "--approx", "approx.pdrs", "--out", "report.csv"]);
}

#[test]
fn quickstart_pipeline_writes_outputs_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d, 20);
    pipeline(d);

    let report = std::fs::read_to_string(d.join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("test_index,time_index,time,eps_mean,eps_median,eps_q1,eps_q3,eps_min,eps_max"));
    assert_eq!(lines.count(), 5 * 10);

    let m = manifest(d, "report.csv");
    assert_eq!(m["status"], "ok");
    assert!(m["results"]["eps_rel"].as_f64().unwrap() >= 0.0);

    let m = manifest(d, "model.pdrc");
    assert_eq!(m["command"], "train");
    assert_eq!(m["seeds"]["init"], 0);
    assert_eq!(m["seeds"]["shuffle"], 0);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["results"]["epochs_run"], 20);
    let history = std::fs::read_to_string(d.join("model.pdrc.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 21);
    assert!(d.join("model.pdrc.timing.json").exists());
    assert_eq!(manifest(d, "train.pdrs")["seeds"]["sampling"], 0);
}

#[test]
fn seed_flag_is_recorded_and_changes_the_basis_sketch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d, 1);
    ok(d, &["gen", "--config", "cfg.json", "--out", "train.pdrs"]);
    ok(d, &["rsvd", "--snaps", "train.pdrs", "--rank", "4", "--out", "a.pdrb"]);
    ok(d, &["rsvd", "--snaps", "train.pdrs", "--rank", "4", "--seed", "7", "--out", "b.pdrb"]);
    assert_eq!(manifest(d, "a.pdrb")["seeds"]["rsvd"], 0);
    assert_eq!(manifest(d, "b.pdrb")["seeds"]["rsvd"], 7);
    assert_ne!(std::fs::read(d.join("a.pdrb")).unwrap(), std::fs::read(d.join("b.pdrb")).unwrap());
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d, 1);
    let out = podlrom(d, &["train", "--snaps", "absent.pdrs", "--basis", "b.pdrb", "--config", "cfg.json", "--out", "m.pdrc"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.pdrs"));
    let m = manifest(d, "m.pdrc");
    assert_eq!(m["status"], "error");
    assert_eq!(m["exit_code"], 2);
    assert!(m["config_sha256"].is_string());

    let out = podlrom(d, &["gen", "--config", "nowhere.json", "--out", "x.pdrs"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.json"));
}

#[test]
fn bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d, 1);
    let mut c: Value = serde_json::from_str(&std::fs::read_to_string(d.join("cfg.json")).unwrap()).unwrap();
    c["train"]["learnig_rate"] = 0.1.into();
    std::fs::write(d.join("typo.json"), c.to_string()).unwrap();
    let out = podlrom(d, &["gen", "--config", "typo.json", "--out", "x.pdrs"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnig_rate"));

    let mut c: Value = serde_json::from_str(&std::fs::read_to_string(d.join("cfg.json")).unwrap()).unwrap();
    c["architecture"]["kernel"] = 4.into();
    std::fs::write(d.join("even.json"), c.to_string()).unwrap();
    assert_eq!(podlrom(d, &["gen", "--config", "even.json", "--out", "x.pdrs"]).status.code(), Some(2));

    let out = podlrom(d, &["gen", "--config", "cfg.json", "--problem", "adr", "--out", "x.pdrs"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("x.pdrs").exists());
}

#[test]
fn training_blow_up_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d, 30);
    let mut c: Value = serde_json::from_str(&std::fs::read_to_string(d.join("cfg.json")).unwrap()).unwrap();
    c["train"]["learning_rate"] = 1e200.into();
    std::fs::write(d.join("cfg.json"), c.to_string()).unwrap();
    ok(d, &["gen", "--config", "cfg.json", "--out", "train.pdrs"]);
    ok(d, &["rsvd", "--snaps", "train.pdrs", "--config", "cfg.json", "--out", "basis.pdrb"]);
    let out = podlrom(d, &["train", "--snaps", "train.pdrs", "--basis", "basis.pdrb", "--config", "cfg.json", "--out", "m.pdrc"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(manifest(d, "m.pdrc")["exit_code"], 1);
}

#[test]
fn warm_start_with_other_architecture_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d, 2);
    ok(d, &["gen", "--config", "cfg.json", "--out", "train.pdrs"]);
    ok(d, &["rsvd", "--snaps", "train.pdrs", "--config", "cfg.json", "--out", "basis.pdrb"]);
    ok(d, &["train", "--snaps", "train.pdrs", "--basis", "basis.pdrb", "--config", "cfg.json", "--out", "a.pdrc"]);
    ok(d, &["train", "--snaps", "train.pdrs", "--basis", "basis.pdrb", "--config", "cfg.json", "--warm-start", "a.pdrc", "--out", "b.pdrc"]);

    let mut c: Value = serde_json::from_str(&std::fs::read_to_string(d.join("cfg.json")).unwrap()).unwrap();
    c["architecture"]["latent"] = 3.into();
    std::fs::write(d.join("wide.json"), c.to_string()).unwrap();
    let out = podlrom(d, &["train", "--snaps", "train.pdrs", "--basis", "basis.pdrb", "--config", "wide.json", "--warm-start", "a.pdrc", "--out", "c.pdrc"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("architecture mismatch"));
}

#[test]
fn infer_accepts_csv_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d, 2);
    ok(d, &["gen", "--config", "cfg.json", "--out", "train.pdrs"]);
    ok(d, &["rsvd", "--snaps", "train.pdrs", "--config", "cfg.json", "--out", "basis.pdrb"]);
    ok(d, &["train", "--snaps", "train.pdrs", "--basis", "basis.pdrb", "--config", "cfg.json", "--out", "m.pdrc"]);
    std::fs::write(d.join("q.csv"), "t,mu\n0.1,0.3\n0.2,0.3\n0.3,0.3\n").unwrap();
    ok(d, &["infer", "--ckpt", "m.pdrc", "--basis", "basis.pdrb", "--params", "q.csv", "--out", "q.pdrs"]);
    let data = podlrom::io::load_dataset(&d.join("q.pdrs")).unwrap();
    assert_eq!(data.snapshots.matrix().shape(), (64, 3));
    assert_eq!(data.params.sample(2), (0.3, &[0.3][..]));

    std::fs::write(d.join("bad.csv"), "0.1,0.3\n0.2,x\n").unwrap();
    let out = podlrom(d, &["infer", "--ckpt", "m.pdrc", "--basis", "basis.pdrb", "--params", "bad.csv", "--out", "q2.pdrs"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn studies_and_benchmarks_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d, 2);
    ok(d, &["gen", "--config", "cfg.json", "--out", "train.pdrs"]);
    ok(d, &["gen", "--config", "cfg.json", "--split", "test", "--out", "test.pdrs"]);
    ok(d, &["study-n", "--snaps", "train.pdrs", "--test", "test.pdrs", "--config", "cfg.json", "--ranks", "16,4", "--out", "n.csv"]);
    let csv = std::fs::read_to_string(d.join("n.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n,eps_total,eps_projection,eps_coords,epochs");
    assert!(lines[1].starts_with("4,") && lines[2].starts_with("16,"));

    ok(d, &["study-ntrain", "--config", "cfg.json", "--test", "test.pdrs", "--sizes", "6,8", "--seeds", "0,1", "--out", "nt.json"]);
    let s: Value = serde_json::from_str(&std::fs::read_to_string(d.join("nt.json")).unwrap()).unwrap();
    assert_eq!(s["rows"].as_array().unwrap().len(), 2);
    assert_eq!(s["reference_slope"], -1.0);
    assert!(s["slope"].is_number());

    ok(d, &["rsvd", "--snaps", "train.pdrs", "--config", "cfg.json", "--out", "basis.pdrb"]);
    ok(d, &["train", "--snaps", "train.pdrs", "--basis", "basis.pdrb", "--config", "cfg.json", "--out", "m.pdrc"]);
    ok(d, &["bench", "--ckpt", "m.pdrc", "--basis", "basis.pdrb", "--test", "test.pdrs", "--config", "cfg.json", "--train-timing", "m.pdrc.timing.json", "--out", "bench.json"]);
    let b: Value = serde_json::from_str(&std::fs::read_to_string(d.join("bench.json")).unwrap()).unwrap();
    assert_eq!(b["repetitions"], 5);
    assert!(b["speedup"].is_number() && b["train_seconds"].is_number());
    assert!(b["note"].as_str().unwrap().contains("hardware"));

    ok(d, &["bench-svd", "--snaps", "train.pdrs", "--ranks", "4,16", "--out", "svd.json"]);
    let s: Value = serde_json::from_str(&std::fs::read_to_string(d.join("svd.json")).unwrap()).unwrap();
    assert_eq!(s["rsvd"].as_array().unwrap().len(), 2);
}

#[test]
fn rank_selection_picks_a_square() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d, 1);
    ok(d, &["gen", "--config", "cfg.json", "--out", "train.pdrs"]);
    ok(d, &["rsvd", "--snaps", "train.pdrs", "--rank", "64", "--select-tol", "1e-2", "--out", "b.pdrb"]);
    let n = manifest(d, "b.pdrb")["results"]["selected_rank"].as_u64().unwrap();
    assert!([4, 16, 64].contains(&n));
}
