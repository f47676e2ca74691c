use std::process::Command;

fn zobilevel(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_zobilevel")).args(args).env_remove("ZOBILEVEL_OUT").output().unwrap()
}

#[test]
fn run_then_validate_then_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("toy.toml");
    std::fs::write(&cfg, "experiment = \"toy_convex\"\n[schedules]\nn_iters = 50\n").unwrap();
    let out = tmp.path().join("bundle");
    let (cfg, out) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    let run = zobilevel(&["run", "--config", cfg, "--out", out, "--seed", "4"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("toy_convex_map_norm.svg"));
    let validate = zobilevel(&["validate", "--out", out]);
    assert!(validate.status.success(), "{}", String::from_utf8_lossy(&validate.stderr));
    let plot = zobilevel(&["plot", "--out", out]);
    assert!(plot.status.success());
}

#[test]
fn out_dir_defaults_to_environment_root() {
    let tmp = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_zobilevel"))
        .args(["run", "--experiment", "toy"])
        .env("ZOBILEVEL_OUT", tmp.path())
        .current_dir(tmp.path())
        .output()
        .unwrap();
    // The toy default is N = 2000, a couple of seconds.
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(tmp.path().join("toy_convex/summary.json").is_file());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "alpha = 1\n").unwrap();
    assert_eq!(zobilevel(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(zobilevel(&["run", "--experiment", "unknown"]).status.code(), Some(2));
    assert_eq!(zobilevel(&["selftest", "--threads", "0"]).status.code(), Some(2));
    let missing = tmp.path().join("nothing");
    assert_eq!(zobilevel(&["plot", "--out", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn selftest_passes() {
    let out = zobilevel(&["selftest", "--seed", "5"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 9);
}
