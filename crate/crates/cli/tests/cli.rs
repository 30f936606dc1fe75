use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stencilseer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stencilseer"))
        .args(args)
        .output()
        .expect("run binary")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn dir_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        let o = stencilseer(&["gen", "--family", "elliptic", "--seed", "7", "--out", dir_str(d)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let da = fs::read(a.join("dataset.bin")).unwrap();
    assert_eq!(da, fs::read(b.join("dataset.bin")).unwrap());
    let cfg = fs::read_to_string(a.join("resolved_config.txt")).unwrap();
    assert!(cfg.contains("family=elliptic\n"));
    assert!(cfg.contains("seed=7\n"));
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("dataset.bin "));
    assert!(manifest.contains("resolved_config.txt "));
}

#[test]
fn check_detects_tampering() {
    let t = tempfile::tempdir().unwrap();
    let d = dir_str(t.path());
    assert_eq!(code(&stencilseer(&["gen", "--family", "hyperbolic", "--n_samples", "3", "--out", d])), 0);
    assert_eq!(code(&stencilseer(&["gen", "--check", "--out", d])), 0);
    let p = t.path().join("dataset.bin");
    let mut bytes = fs::read(&p).unwrap();
    bytes[40] ^= 1;
    fs::write(&p, bytes).unwrap();
    let o = stencilseer(&["gen", "--check", "--out", d]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("mismatch: dataset.bin"));
}

#[test]
fn usage_errors_exit_1() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("bad.cfg");
    fs::write(&cfg, "family=elliptic\nepoch=3\n").unwrap();
    assert_eq!(code(&stencilseer(&["train", "--config", cfg.to_str().unwrap()])), 1);
    assert_eq!(code(&stencilseer(&["frobnicate"])), 1);
    assert_eq!(code(&stencilseer(&["gen", "--family", "sonic"])), 1);
    assert_eq!(code(&stencilseer(&["--help"])), 0);
}

#[test]
fn train_verify_and_export_pipeline() {
    let t = tempfile::tempdir().unwrap();
    let d = dir_str(t.path());
    let cfg = t.path().join("hyp.cfg");
    fs::write(
        &cfg,
        format!("# short run\nfamily=hyperbolic\nn_samples=6\nepochs=2\nsteps_per_epoch=20\nout_dir={d}\n"),
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let o = stencilseer(&["train", "--config", c]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(t.path().join("train_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3);
    assert!(fs::read_to_string(t.path().join("weights.txt"))
        .unwrap()
        .starts_with("stencilseer-weights v1 hyperbolic depth=1 widths=1 coupling=0"));

    let o = stencilseer(&["verify", "--config", c]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("similarity "));
    for f in ["stencil.txt", "similarity.txt", "activation.csv"] {
        assert!(t.path().join(f).exists(), "{f}");
    }

    let o = stencilseer(&["export-maps", "--config", c]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pgm = fs::read_to_string(t.path().join("map_l1_k0.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n# min="));
    assert!(t.path().join("sample_ch0.csv").exists());
    assert_eq!(code(&stencilseer(&["verify", "--check", "--config", c])), 0);

    // flags override the config file
    let o = stencilseer(&["train", "--config", c, "--epochs", "1"]);
    assert_eq!(code(&o), 0);
    let report = fs::read_to_string(t.path().join("train_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
}

#[test]
fn failed_run_leaves_no_partial_artifacts() {
    let t = tempfile::tempdir().unwrap();
    let d = dir_str(t.path());
    // no weights in the directory: verify fails before writing anything
    let o = stencilseer(&["probe", "scale", "--family", "elliptic", "--out", d]);
    assert_eq!(code(&o), 1);
    assert!(!t.path().join("probe_scale.csv").exists());
    assert!(!t.path().join("manifest.txt").exists());
    assert!(t.path().join("resolved_config.txt").exists());

    // a saturating factor invalidates the probe after the model loads
    fs::write(
        t.path().join("weights.txt"),
        "stencilseer-weights v1 elliptic depth=2 widths=1,1 coupling=0\n\
         layer=1 k=0 ch=0 0 -1 0 1\nlayer=2 k=0 ch=0 0 24 0 -24\n",
    )
    .unwrap();
    let o = stencilseer(&["probe", "scale", "--family", "elliptic", "--n_samples", "4", "--factor", "1e-9", "--out", d]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!t.path().join("probe_scale.csv").exists());
    assert!(!t.path().join("probe_scale.pgm").exists());
}
