use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedldp::checkpoint::{load_batch, load_params};

fn fedldp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedldp")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn synthetic_config(dir: &Path) -> PathBuf {
    let path = dir.join("synthetic.toml");
    let text = r#"
dataset = "synthetic_linear"
train_size = 80
test_size = 20
layer_dims = [2, 8, 2]
n_clients = 4
local_epochs = 1
batch_size = 10
learning_rate = 0.1
ldp_mode = "update_perturbation"
clip_radius = 1.0
rounds = 3
epsilon_grid = [1.0, "inf"]
n_repeats = 2
alpha = 0.1
master_seed = 11
output = "unused.csv"
"#;
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn certify_reports_agreement() {
    let out = fedldp(&["certify", "--instances", "40", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["passed"], true);
    assert_eq!(v["fuzz"]["instances"], 40);
    assert!(v["fuzz"]["disagreements"].as_array().unwrap().is_empty());
    let named = v["named"].as_array().unwrap();
    assert_eq!(named.len(), 4);
    assert_eq!(named[0]["record"]["ldp"], true);
    assert_eq!(named[1]["record"]["ldp"], false);
    assert_eq!(named[3]["record"]["e_robust"], false);
}

#[test]
fn thresholds_default_point() {
    let out = fedldp(&["thresholds", "--point=-0.5,0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!((v["alpha1"].as_f64().unwrap() - 0.56).abs() < 1e-12);
    assert!((v["alpha2"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["label"], 0);

    let coarse = json(&fedldp(&["thresholds", "--point", "-0.5,0", "--step", "0.04"]));
    assert!((coarse["alpha1"].as_f64().unwrap() - 0.58).abs() < 1e-12);
}

#[test]
fn thresholds_rejects_unlabelable_point() {
    let out = fedldp(&["thresholds", "--point=0.01,0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path());
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, std::fs::read_to_string(&cfg).unwrap() + "unknown_key = 1\n").unwrap();
    let out = fedldp(&["--config", bad.to_str().unwrap(), "sweep"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let missing = fedldp(&["--config", dir.path().join("nope.toml").to_str().unwrap(), "sweep"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mnist.toml");
    std::fs::write(&cfg, "dataset = \"mnist\"\ndata_dir = \"absent\"\ntrain_size = 20\ntest_size = 10\nlayer_dims = [784, 8, 10]\nn_clients = 2\nlocal_epochs = 1\nbatch_size = 8\nlearning_rate = 0.05\nldp_mode = \"off\"\nclip_radius = 1.0\nrounds = 1\nepsilon_grid = [\"inf\"]\nn_repeats = 1\nalpha = 0.1\nmaster_seed = 1\noutput = \"x.csv\"\n").unwrap();
    let out = fedldp(&["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_then_attack() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path());
    let log = dir.path().join("run/log.csv");
    let out = fedldp(&["--config", cfg.to_str().unwrap(), "--out", log.to_str().unwrap(), "train", "--epsilon", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().count(), 1 + 3);
    assert!(text.lines().nth(1).unwrap().ends_with(",2,update_perturbation,11"));
    let ckpt = log.with_extension("ckpt");
    assert_eq!(load_params(&ckpt).unwrap().layer_dims(), vec![2, 8, 2]);

    let adv = dir.path().join("adv.bin");
    let out = fedldp(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        adv.to_str().unwrap(),
        "attack",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--alpha",
        "0.05",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!(v["psi"].as_f64().unwrap() > 0.0);
    assert_eq!(v["alpha"], 0.05);
    let batch = load_batch(&adv).unwrap();
    assert_eq!((batch.len(), batch.dim()), (20, 2));

    std::fs::write(&ckpt, b"FLDPMLP\0junk").unwrap();
    let out = fedldp(&["--config", cfg.to_str().unwrap(), "attack", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sweep_writes_detail_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path());
    let detail = dir.path().join("sweep.csv");
    let run = || fedldp(&["--config", cfg.to_str().unwrap(), "--out", detail.to_str().unwrap(), "sweep"]);
    let out = run();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max psi at eps"));
    let first = std::fs::read(&detail).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 1 + 4 + 2);
    assert!(dir.path().join("sweep.summary.csv").exists());
    assert!(run().status.success());
    assert_eq!(std::fs::read(&detail).unwrap(), first);
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (path, seed) in [(&a, "1"), (&b, "2")] {
        let out =
            fedldp(&["--config", cfg.to_str().unwrap(), "--seed", seed, "--out", path.to_str().unwrap(), "sweep"]);
        assert!(out.status.success());
    }
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}
