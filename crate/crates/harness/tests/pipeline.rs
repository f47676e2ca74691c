use std::fs;
use std::path::Path;
use std::time::Instant;

use zobilevel_harness::config::{ExperimentConfig, ExperimentKind};
use zobilevel_harness::experiment::{parse_validation_csv, revalidate, validation_to_csv, ResultBundle, RUN_CSV};
use zobilevel_harness::{emit_plots, run_experiment};

fn toy(dir: &Path, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::ToyConvex);
    cfg.schedules.n_iters = 100;
    cfg.seeds.algorithm = seed;
    cfg.out_dir = Some(dir.to_path_buf());
    cfg
}

fn small_denoise(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Denoise);
    cfg.denoise.n_x = 32;
    cfg.schedules.n_iters = 15;
    cfg.train = 4;
    cfg.validation = 6;
    cfg.out_dir = Some(dir.to_path_buf());
    cfg
}

fn small_oed(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Oed);
    cfg.oed.img_side = 8;
    cfg.oed.n_angles = 6;
    cfg.schedules.n_iters = 4;
    cfg.train = 3;
    cfg.validation = 3;
    cfg.out_dir = Some(dir.to_path_buf());
    cfg
}

#[test]
fn toy_smoke_writes_bundle_and_plots_quickly() {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let bundle = run_experiment(&toy(tmp.path(), 0)).unwrap();
    let plots = emit_plots(&bundle).unwrap();
    assert!(start.elapsed().as_secs_f64() < 5.0);
    for f in ["config.toml", "run.csv", "validation.csv", "summary.json", "timing.json"] {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
    let names: Vec<String> = plots.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["toy_convex_params.svg", "toy_convex_delta.svg", "toy_convex_map_norm.svg"]);
    let run = fs::read_to_string(tmp.path().join(RUN_CSV)).unwrap();
    assert!(run.starts_with("k,alpha,m,beta,eta,map_norm,delta_norm,y0,"));
    assert_eq!(run.lines().count(), 101);
    let loaded = ResultBundle::load(tmp.path()).unwrap();
    assert_eq!(loaded.summary, bundle.summary);
    assert_eq!(loaded.summary.run.n_iters, 100);
}

#[test]
fn reruns_are_byte_identical_except_timing() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        let bundle = run_experiment(&toy(dir, 3)).unwrap();
        emit_plots(&bundle).unwrap();
    }
    let mut compared = 0;
    for entry in walk(a.path()) {
        let rel = entry.strip_prefix(a.path()).unwrap();
        if rel.ends_with("timing.json") || rel.ends_with("config.toml") {
            continue;
        }
        assert_eq!(fs::read(&entry).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{}", rel.display());
        compared += 1;
    }
    assert_eq!(compared, 6);
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn different_seeds_give_different_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&toy(a.path(), 1)).unwrap();
    run_experiment(&toy(b.path(), 2)).unwrap();
    assert_ne!(fs::read(a.path().join(RUN_CSV)).unwrap(), fs::read(b.path().join(RUN_CSV)).unwrap());
}

#[test]
fn empty_run_record_is_an_error_and_writes_no_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = run_experiment(&toy(tmp.path(), 0)).unwrap();
    let header = fs::read_to_string(bundle.run_csv()).unwrap().lines().next().unwrap().to_string();
    fs::write(bundle.run_csv(), header + "\n").unwrap();
    assert_eq!(emit_plots(&bundle).unwrap_err().exit_code(), 1);
    assert!(!tmp.path().join("plots").exists());
}

#[test]
fn missing_bundle_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(ResultBundle::load(tmp.path()).unwrap_err().exit_code(), 1);
}

#[test]
fn denoise_bundle_has_four_figures_and_reproducible_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = run_experiment(&small_denoise(tmp.path())).unwrap();
    let plots = emit_plots(&bundle).unwrap();
    assert_eq!(plots.len(), 4);
    for p in &plots {
        let svg = fs::read_to_string(p).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"), "{}", p.display());
    }
    assert!(tmp.path().join("reconstruction.csv").is_file());
    assert!(!tmp.path().join("baseline_run.csv").exists());
    let stored = bundle.validation().unwrap();
    let names: Vec<&str> = stored.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names[..2], ["learned", "initial"]);
    assert_eq!(stored.len(), 6);
    assert!(stored.iter().all(|(_, e)| e.len() == 6 && e.iter().all(|v| v.is_finite() && *v >= 0.0)));
    let fresh = revalidate(&bundle).unwrap();
    assert_eq!(parse_validation_csv(&validation_to_csv(&fresh)).unwrap(), stored);
}

#[test]
fn oed_bundle_has_images_policy_and_baseline_run() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = run_experiment(&small_oed(tmp.path())).unwrap();
    let plots = emit_plots(&bundle).unwrap();
    assert_eq!(plots.len(), 5);
    for f in ["truth.pgm", "reconstruction.pgm", "sinogram.csv", "baseline_run.csv"] {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
    assert!(fs::read(tmp.path().join("truth.pgm")).unwrap().starts_with(b"P"));
    let names: Vec<String> = bundle.summary.methods.iter().map(|m| m.method.clone()).collect();
    assert_eq!(names, ["learned", "initial", "reg_only"]);
    assert!(bundle.summary.baseline_run.is_some());
}
