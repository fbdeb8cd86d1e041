use std::path::Path;
use std::process::{Command, Output};

fn timemm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_timemm")).args(args).output().unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn synth_train_evaluate_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    let out = timemm(&["synth", "-o", data.to_str().unwrap(), "--users", "120", "--items", "80", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let conf = data.join("synth.conf");

    let run = root.join("run");
    let out = timemm(&[
        "--threads", "1", "train", "-c", conf.to_str().unwrap(), "-o", run.to_str().unwrap(),
        "--set", "epochs=2", "--set", "dim=8", "--set", "batch_size=512",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.txt", "checkpoint.tmmc", "history.csv", "metrics.csv"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    assert!(read(&run.join("history.csv")).starts_with("epoch,loss_rec,loss_div,recall20_valid\n"));

    let eval = root.join("eval");
    let ckpt = run.join("checkpoint.tmmc");
    let out = timemm(&["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "-o", eval.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(&eval.join("metrics.csv")), read(&run.join("metrics.csv")));

    let diag = root.join("diag");
    let out = timemm(&["diagnose", "--checkpoint", ckpt.to_str().unwrap(), "-o", diag.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["buckets.csv", "energy.csv", "mixing.csv", "modality_mixture.csv", "gating.csv"] {
        assert!(diag.join(f).exists(), "{f} missing");
    }
}

#[test]
fn oracle_check_passes() {
    let out = timemm(&["oracle-check", "--graphs", "5"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("spectral"));
}

#[test]
fn error_exit_codes() {
    assert_eq!(timemm(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(timemm(&["train", "--set", "lr=fast"]).status.code(), Some(1));
    assert_eq!(timemm(&["train", "--set", "bogus_key=1"]).status.code(), Some(1));
    assert_eq!(timemm(&["train", "--set", "interactions=/nonexistent/log.tsv"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tmmc");
    std::fs::write(&bad, b"garbage").unwrap();
    assert_eq!(timemm(&["evaluate", "--checkpoint", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(timemm(&["--help"]).status.code(), Some(0));
}
