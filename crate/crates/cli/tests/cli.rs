use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use searchplan::autodiff::save_checkpoint;
use searchplan::rae::{RaeArch, RaeModel};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_searchplan"))
}

fn scratch(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("searchplan-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str], root: &Path) -> Output {
    bin().args(args).env("SEARCHPLAN_OUT_ROOT", root).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn help_lists_every_config_key() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for (k, _) in searchplan_cli::config::KEYS {
        assert!(text.contains(k), "missing {k}");
    }
    assert!(text.contains("Exit codes"));
}

#[test]
fn lstmae_without_encoder_is_a_config_error() {
    let d = scratch("noenc");
    let o = run(&["train-policy", "--arch", "LSTMAE_SAC", "--steps", "10", "--out", "p"], &d);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--encoder"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let d = scratch("badkey");
    std::fs::write(d.join("c.cfg"), "seed=1\nenv.step_sise=8\n").unwrap();
    let o = run(&["gen-pdm", "--config", "c.cfg", "--out", "m.txt"], &d);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("step_sise"));
}

#[test]
fn missing_output_is_a_config_error() {
    let d = scratch("noout");
    assert_eq!(code(&run(&["gen-pdm"], &d)), 2);
    std::fs::write(d.join("c.cfg"), "out_dir=from_cfg.txt\n").unwrap();
    let o = run(&["gen-pdm", "--config", "c.cfg"], &d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("from_cfg.txt").exists());
}

#[test]
fn missing_input_is_an_io_error() {
    let d = scratch("noinput");
    assert_eq!(code(&run(&["train-rae", "--data", "nope.txt", "--out", "r"], &d)), 3);
    assert_eq!(code(&run(&["gen-pdm", "--config", "nope.cfg", "--out", "m.txt"], &d)), 3);
}

#[test]
fn corrupted_checkpoint_fails_verification() {
    let d = scratch("ckpt");
    let arch = RaeArch { input: 2, enc_hidden: 4, latent: 3, dec_hidden: 4, dec_layers: 1 };
    let model = RaeModel::<f32>::new(arch, 1).unwrap();
    let good = d.join("good.ckpt");
    save_checkpoint(&model.store, &good).unwrap();
    let mut bytes = std::fs::read(&good).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(d.join("bad.ckpt"), bytes).unwrap();

    let ok = run(&["verify", "--suite", "geometry", "--checkpoint", "good.ckpt"], &d);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = run(&["verify", "--suite", "geometry", "--checkpoint", "bad.ckpt"], &d);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL checkpoint"));
}

#[test]
fn gen_paths_writes_one_line_per_path() {
    let d = scratch("paths");
    let o = run(&["gen-paths", "--n", "5", "--seed", "3", "--out", "paths.txt"], &d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(d.join("paths.txt")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 5);
    for r in rows {
        let v: Vec<f64> = r.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v.len() >= 4 && v.len().is_multiple_of(2));
        assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
    }
}

#[test]
fn gen_pdm_is_deterministic_per_seed() {
    let d = scratch("pdm");
    for (name, seed) in [("a.txt", "4"), ("b.txt", "4"), ("c.txt", "5")] {
        assert_eq!(code(&run(&["gen-pdm", "--seed", seed, "--out", name], &d)), 0);
    }
    let read = |n: &str| std::fs::read(d.join(n)).unwrap();
    assert_eq!(read("a.txt"), read("b.txt"));
    assert_ne!(read("a.txt"), read("c.txt"));
}

#[test]
fn eval_baseline_writes_summary_and_plots() {
    let d = scratch("eval");
    let o = run(&["eval", "--policy", "greedy", "--episodes", "3", "--plots", "2", "--out", "ev"], &d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ev = d.join("ev");
    assert_eq!(std::fs::read_to_string(ev.join("episodes.csv")).unwrap().lines().count(), 4);
    assert!(ev.join("summary.csv").exists());
    for k in 0..2 {
        let svg = std::fs::read_to_string(ev.join(format!("path_{k:03}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
        assert!(svg.contains("class=\"path\"") && svg.contains("pdm-contour"));
    }
    assert!(!ev.join("path_002.svg").exists());
}

#[test]
fn unknown_policy_name_is_rejected() {
    let d = scratch("badpolicy");
    let o = run(&["train-policy", "--arch", "FS_SAC_GRU", "--steps", "10", "--out", "p"], &d);
    assert_eq!(code(&o), 2);
}
