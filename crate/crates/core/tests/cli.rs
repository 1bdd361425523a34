use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cipherdnn"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn cli")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn error_line(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(err.trim_end().lines().count(), 1, "not one line: {err:?}");
    err.trim_end().to_string()
}

#[test]
fn train_protect_full_infer_plaintext() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &["train", "--activation", "square2x", "--hidden", "4", "--pool", "4", "--epochs", "15", "--out", "sq.json", "--history", "hist.csv"],
        d,
    );
    assert!(std::fs::read_to_string(d.join("hist.csv")).unwrap().lines().count() == 16);
    let q = ok(&["quantize", "--model", "sq.json", "--scope", "full", "--level", "128", "--out", "q.json"], d);
    assert!(q.contains("depth="), "{q}");
    let p = ok(&["protect", "--model", "sq.json", "--scope", "full", "--level", "128", "--out", "sq.cdpk"], d);
    assert!(p.contains("scope=full"), "{p}");
    let i = ok(&["infer", "--package", "sq.cdpk", "--mode", "plaintext", "--count", "20", "--out", "r.bin"], d);
    assert!(i.contains("samples=20"), "{i}");
    let dec = ok(&["decrypt", "--response", "r.bin", "--out", "pred.csv", "--trace", "trace.csv"], d);
    assert!(dec.contains("accuracy="), "{dec}");
    let preds = std::fs::read_to_string(d.join("pred.csv")).unwrap();
    assert_eq!(preds.lines().count(), 21);
    let trace = std::fs::read_to_string(d.join("trace.csv")).unwrap();
    let ops: Vec<&str> = trace.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(ops, ["dense_ct_pt", "square_plus_two", "dense_ct_ct"]);
    assert!(!trace.lines().last().unwrap().split(',').nth(2).unwrap().is_empty());
}

#[test]
fn bad_level_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["protect", "--model", "m.json", "--level", "512"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error: kind=usage "));
}

#[test]
fn failures_are_one_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = run(&["protect", "--model", "nope.json"], d);
    assert_eq!(missing.status.code(), Some(1));
    assert!(error_line(&missing).starts_with("error: kind=io "));

    ok(&["train", "--pool", "4", "--hidden", "3", "--epochs", "2", "--out", "relu.json"], d);
    let relu_full = run(&["protect", "--model", "relu.json", "--scope", "full"], d);
    assert!(error_line(&relu_full).starts_with("error: kind=unsupported_layer "));

    let no_edge = run(&["deploy", "--package", "relu.json", "--addr", "127.0.0.1:1"], d);
    assert_ne!(no_edge.status.code(), Some(0));
    error_line(&no_edge);
}

#[test]
fn bench_writes_the_full_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &["bench", "--pool", "4", "--hidden", "2", "--epochs", "3", "--samples", "2", "--out", "report.csv", "--accuracy-out", "acc.csv"],
        d,
    );
    let csv = std::fs::read_to_string(d.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("variant,level,mode,stage,time_s_mean,bytes_mean,budget_bits_mean,runs,correct")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // 3 variants x 3 levels x (model encryption + 2 modes x (inference, decrypt))
    assert_eq!(rows.len(), 45);
    for r in &rows {
        assert_eq!(r.len(), 9);
        assert_eq!(r[7], "5");
        assert_eq!(r[8], "true");
    }
    for v in ["last_layer", "full_no_act", "full_square2x"] {
        for l in ["128", "192", "256"] {
            for m in ["plain", "encrypted"] {
                assert!(rows.iter().any(|r| r[0] == v && r[1] == l && r[2] == m && r[3] == "inference"));
            }
        }
    }
    let acc = std::fs::read_to_string(d.join("acc.csv")).unwrap();
    assert!(acc.starts_with("epoch,relu,square_plus_two,none"));
}
