use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &["--sizes", "80,30,30", "--epochs", "2", "--batch-size", "16", "--ks", "1,2", "--seeds", "1,2"];

fn ecgnd(args: &[&str], extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecgnd")).args(args).args(extra).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ecgnd(args, SMALL);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    lines[0].to_string()
}

#[test]
fn gen_is_deterministic_and_requires_out() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen", "--seed", "7", "--out", p(&a)]);
    ok(&["gen", "--seed", "7", "--out", p(&b)]);
    for f in ["level1.ecgw", "level2.ecgw", "level3.ecgw"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let out = ecgnd(&["gen"], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn full_command_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let l1 = d.join("level1.ecgw");
    let (l2, l3) = (d.join("level2.ecgw"), d.join("level3.ecgw"));
    let ckpt = d.join("cae.ckpt");
    let det = d.join("detector.det");
    ok(&["gen", "--out", p(d)]);
    ok(&["train", "--data", p(&l1), "--out", p(d)]);
    assert_eq!(fs::read_to_string(d.join("history.csv")).unwrap().lines().count(), 3);
    ok(&["fit", "--checkpoint", p(&ckpt), "--data", p(&l1), "--out", p(d)]);
    let first = fs::read(&det).unwrap();
    ok(&["fit", "--checkpoint", p(&ckpt), "--data", p(&l1), "--out", p(d)]);
    assert_eq!(fs::read(&det).unwrap(), first);

    let scores = ok(&["score", "--checkpoint", p(&ckpt), "--detector", p(&det), "--data", p(&l2)]);
    let rows: Vec<&str> = scores.lines().collect();
    assert_eq!(rows[0], "index,label,score,noisiness");
    assert_eq!(rows.len(), 31);
    for r in &rows[1..] {
        let score: f64 = r.split(',').nth(2).unwrap().parse().unwrap();
        assert!(score <= 0.0);
    }
    let recon = d.join("recon.csv");
    ok(&["score", "--checkpoint", p(&ckpt), "--data", p(&l3), "--method", "recon", "--out", p(&recon)]);
    assert_eq!(fs::read_to_string(&recon).unwrap().lines().count(), 31);

    let table = ok(&["eval", "--checkpoint", p(&ckpt), "--detector", p(&det), "--level1", p(&l1), "--level2", p(&l2), "--level3", p(&l3), "--out", p(d)]);
    assert!(table.contains("ensemble"));
    let csv = fs::read_to_string(d.join("report.csv")).unwrap();
    assert!(csv.contains("# ks=1,2") && csv.contains("# sizes=80,30,30"));
    // recon, m=1, m=2, ensemble over two levels and two metrics
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 4 * 2 * 2);

    ok(&["pca", "--checkpoint", p(&ckpt), "--data", p(&l1), p(&l2), p(&l3), "--out", p(d)]);
    let pca = fs::read_to_string(d.join("pca.csv")).unwrap();
    assert_eq!(pca.lines().count(), 1 + 80 + 30 + 30);
    let l1_rows: Vec<(f64, f64)> = pca
        .lines()
        .skip(1)
        .filter(|l| l.ends_with("Level 1"))
        .map(|l| {
            let v: Vec<&str> = l.split(',').collect();
            (v[0].parse().unwrap(), v[1].parse().unwrap())
        })
        .collect();
    assert_eq!(l1_rows.len(), 80);
    assert!(l1_rows.iter().map(|r| r.0).sum::<f64>().abs() / 80.0 < 1e-6);
    assert!(l1_rows.iter().map(|r| r.1).sum::<f64>().abs() / 80.0 < 1e-6);

    let ft = d.join("ft");
    ok(&["finetune", "--checkpoint", p(&ckpt), "--data", p(&l1), "--level2", p(&l2), "--level3", p(&l3), "--out", p(&ft)]);
    for f in [20, 40, 60, 80, 100] {
        assert!(ft.join(format!("finetuned_{f}.ckpt")).exists());
    }
    let sweep = fs::read_to_string(ft.join("sweep.csv")).unwrap();
    assert!(sweep.lines().any(|l| l.starts_with("fraction,level,")));
    assert!(sweep.contains("100%,Level 3,auroc"));
}

#[test]
fn single_member_and_zero_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let l1 = d.join("level1.ecgw");
    ok(&["gen", "--out", p(d)]);
    let out = ecgnd(&["train", "--data", p(&l1), "--out", p(d), "--sizes", "80,30,30", "--epochs", "0"], &[]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(d.join("history.csv")).unwrap(), "epoch,train_loss,val_loss\n");
    let out = ecgnd(&["fit", "--checkpoint", p(&d.join("cae.ckpt")), "--data", p(&l1), "--out", p(d), "--ks", "3"], &[]);
    assert!(out.status.success());
    let det = ecgnd_det_members(&d.join("detector.det"));
    assert_eq!(det, 1);
}

/// Member count from the DET1 header: magic, version u16, member count u32.
fn ecgnd_det_members(path: &Path) -> u32 {
    let b = fs::read(path).unwrap();
    assert_eq!(&b[..4], b"DET1");
    u32::from_le_bytes(b[6..10].try_into().unwrap())
}

#[test]
fn errors_are_one_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let line = error_line(&ecgnd(&["train", "--data", p(&d.join("missing.ecgw")), "--out", p(d)], &[]));
    assert!(line.starts_with("error kind=invalid_argument message="), "{line}");

    ok(&["gen", "--out", p(d)]);
    let l1 = d.join("level1.ecgw");
    let nan = ecgnd(&["train", "--data", p(&l1), "--out", p(&d.join("nan")), "--lr", "1e300"], SMALL);
    assert!(error_line(&nan).starts_with("error kind=non_finite"));

    let bad = d.join("bad.cfg");
    fs::write(&bad, "epochs=3\nbogus=1\n").unwrap();
    let line = error_line(&ecgnd(&["gen", "--out", p(d), "--config", p(&bad)], &[]));
    assert!(line.starts_with("error kind=config"), "{line}");

    let garbage = d.join("garbage.ecgw");
    fs::write(&garbage, b"not a dataset").unwrap();
    let line = error_line(&ecgnd(&["train", "--data", p(&garbage), "--out", p(d)], &[]));
    assert!(line.starts_with("error kind=parse"), "{line}");

    let line = error_line(&ecgnd(&["score", "--checkpoint", p(&garbage), "--data", p(&l1), "--method", "nope"], &[]));
    assert!(line.starts_with("error kind=invalid_argument"), "{line}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.cfg");
    fs::write(&cfg, "sizes=40,20,20\nseed=3\n").unwrap();
    let a = d.join("a");
    let out = ecgnd(&["gen", "--config", p(&cfg), "--out", p(&a)], &[]);
    assert!(out.status.success());
    let b = d.join("b");
    let out = ecgnd(&["gen", "--config", p(&cfg), "--out", p(&b), "--seed", "4"], &[]);
    assert!(out.status.success());
    let la = fs::read(a.join("level1.ecgw")).unwrap();
    assert_ne!(la, fs::read(b.join("level1.ecgw")).unwrap());
    let c = d.join("c");
    assert!(ecgnd(&["gen", "--out", p(&c), "--sizes", "40,20,20", "--seed", "3"], &[]).status.success());
    assert_eq!(la, fs::read(c.join("level1.ecgw")).unwrap());
}
