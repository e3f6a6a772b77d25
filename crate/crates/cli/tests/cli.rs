use std::path::Path;
use std::process::{Command, Output};

use bmapest::phantom::{load_maps, ProbabilityMaps};

fn bmapest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bmapest")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bmapest(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synth phantom plus a t1ir observation in `dir`.
fn observed(dir: &Path, size: &str) {
    ok(&["phantom", "--synth", "--seed", "1", "--size", size, "--out", p(&dir.join("f.bmap"))]);
    ok(&["simulate", "--maps", p(&dir.join("f.bmap")), "--seq", "t1ir", "--out", p(&dir.join("obs"))]);
}

#[test]
fn zero_epochs_writes_initialization() {
    let d = tempfile::tempdir().unwrap();
    observed(d.path(), "8");
    let est = d.path().join("e.bmap");
    ok(&["estimate", "--obs", p(&d.path().join("obs")), "--seq", "t1ir", "--epochs", "0", "--out", p(&est)]);
    assert_eq!(load_maps(&est).unwrap(), ProbabilityMaps::constant(8, 8, 1.0 / 3.0));
}

#[test]
fn simulate_writes_stack_and_previews() {
    let d = tempfile::tempdir().unwrap();
    observed(d.path(), "8");
    let obs = d.path().join("obs");
    for f in ["contrasts.txt", "kspace.bmap", "images.bmap", "00_t1ir_e0.pgm", "03_t1ir_e3.pgm", "t1ir.seq"] {
        assert!(obs.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn pipeline_is_deterministic_across_threads() {
    let d = tempfile::tempdir().unwrap();
    observed(d.path(), "8");
    let obs = d.path().join("obs");
    let run = |threads: &str, tag: &str| {
        let est = d.path().join(format!("e{tag}.bmap"));
        let hist = d.path().join(format!("h{tag}.csv"));
        ok(&[
            "--threads", threads, "estimate", "--obs", p(&obs), "--seq", "t1ir", "--epochs", "5", "--out", p(&est),
            "--history", p(&hist),
        ]);
        (std::fs::read(est).unwrap(), std::fs::read_to_string(hist).unwrap())
    };
    let a = run("1", "a");
    let b = run("1", "b");
    let c = run("4", "c");
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert!(a.1.starts_with("epoch,loss\n"));
    assert_eq!(a.1.lines().count(), 6);
}

#[test]
fn metrics_of_truth_against_itself() {
    let d = tempfile::tempdir().unwrap();
    let f = d.path().join("f.bmap");
    ok(&["phantom", "--synth", "--size", "8", "--out", p(&f)]);
    let csv = d.path().join("m.csv");
    let out = ok(&["metrics", "--pred", p(&f), "--gt", p(&f), "--out", p(&csv)]);
    assert!(out.contains("csf,1.0000,inf,1.0000"), "{out}");
    assert!(csv.is_file());
}

#[test]
fn phantom_csv_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let (f, csv, g) = (d.path().join("f.bmap"), d.path().join("f.csv"), d.path().join("g.bmap"));
    ok(&["phantom", "--synth", "--seed", "3", "--size", "8", "--out", p(&f), "--csv", p(&csv)]);
    ok(&["phantom", "--from-csv", p(&csv), "--out", p(&g)]);
    assert_eq!(load_maps(&f).unwrap(), load_maps(&g).unwrap());
}

#[test]
fn gradcheck_gate_exits_zero() {
    let out = ok(&["gradcheck", "--size", "8"]);
    assert!(out.contains("max rel err") && out.contains("pass"), "{out}");
}

#[test]
fn ablate_prints_table() {
    let d = tempfile::tempdir().unwrap();
    let csv = d.path().join("t.csv");
    let cfg = d.path().join("run.cfg");
    std::fs::write(&cfg, "dummies = 20\n").unwrap();
    let out = ok(&[
        "ablate", "--kind", "loss_domain", "--subjects", "1", "--size", "8", "--epochs", "1", "--config", p(&cfg),
        "--out", p(&csv),
    ]);
    assert!(out.starts_with("configuration,csf_dice"), "{out}");
    assert_eq!(std::fs::read_to_string(csv).unwrap(), out);
}

#[test]
fn validation_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("missing.bmap");
    let out = bmapest(&["metrics", "--pred", p(&missing), "--gt", p(&missing)]);
    assert_eq!(out.status.code(), Some(1));

    let out = bmapest(&["estimate", "--obs", ".", "--out", "x.bmap", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("valid flags: --obs"));

    let out = bmapest(&["phantom", "--synth", "--size", "4", "--out", p(&d.path().join("f.bmap"))]);
    assert_eq!(out.status.code(), Some(1));

    let out = bmapest(&["phantom", "--synth", "--out", p(&d.path().join("no/such/dir/f.bmap"))]);
    assert_eq!(out.status.code(), Some(1));

    let cfg = d.path().join("bad.cfg");
    std::fs::write(&cfg, "epochs = 2\nwhatever = 1\n").unwrap();
    observed(d.path(), "8");
    let out = bmapest(&[
        "estimate", "--obs", p(&d.path().join("obs")), "--seq", "t1ir", "--config", p(&cfg), "--out",
        p(&d.path().join("e.bmap")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = bmapest(&["simulate", "--maps", p(&d.path().join("f.bmap")), "--seq", "t3", "--out", p(d.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t1ir, me_flash"));
}

#[test]
fn numerical_abort_exits_two() {
    let d = tempfile::tempdir().unwrap();
    observed(d.path(), "8");
    let cfg = d.path().join("run.cfg");
    std::fs::write(&cfg, "loss.weights = 1e300, 1e300, 1e300, 1e300\noptimizer = sgd\nlr = 1e300\n").unwrap();
    let out = bmapest(&[
        "estimate", "--obs", p(&d.path().join("obs")), "--seq", "t1ir", "--config", p(&cfg), "--epochs", "3",
        "--out", p(&d.path().join("e.bmap")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!d.path().join("e.bmap").exists());
}
