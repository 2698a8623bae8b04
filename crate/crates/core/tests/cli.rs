use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dsie::EvalReport;

fn dsie(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsie")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dsie(args);
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

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

const TINY: [&str; 12] = [
    "--set",
    "dim=8",
    "--set",
    "max_epochs=2",
    "--set",
    "batch_size=32",
    "--set",
    "interests=3",
    "--set",
    "valid_topn=10",
    "--seed",
    "1",
];

#[test]
fn prepare_prints_stats_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw.tsv");
    let mut text = String::new();
    for u in 0..20 {
        for k in 0..5 {
            text.push_str(&format!(
                "user{u}\titem{}\t{}\tGames|Action\n",
                (u + k) % 7,
                100 * k + u
            ));
        }
    }
    text.push_str("loner\trare\t5\tMisc\n");
    fs::write(&raw, text).unwrap();

    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let stats = ok(&[
        "prepare",
        "--input",
        p(&raw),
        "--output",
        p(&a),
        "--min-feedback",
        "3",
        "--seed",
        "4",
    ]);
    ok(&[
        "prepare",
        "--input",
        p(&raw),
        "--output",
        p(&b),
        "--min-feedback",
        "3",
        "--seed",
        "4",
    ]);
    assert_eq!(stats, "users\t20\nitems\t7\ninteractions\t100\nmean_length\t5.000\n");
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn empty_input_is_a_domain_error() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("empty.tsv");
    fs::write(&raw, "").unwrap();
    let out = dsie(&["prepare", "--input", p(&raw), "--output", p(&tmp.path().join("c"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus empty after filtering"));
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(dsie(&["train", "--nope"]).status.code(), Some(2));
    assert_eq!(
        dsie(&["eval", "--corpus", "x", "--mode", "weird", "--baseline", "most-popular"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(dsie(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(dsie(&["--help"]).status.code(), Some(0));
}

#[test]
fn synth_train_eval_retrieve_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    ok(&[
        "synth",
        "--output",
        p(&corpus),
        "--users",
        "40",
        "--items",
        "30",
        "--min-len",
        "5",
        "--max-len",
        "9",
    ]);

    let ckpt = tmp.path().join("model.ckpt");
    let log = tmp.path().join("log.tsv");
    let mut args = vec!["train", "--corpus", p(&corpus), "--output", p(&ckpt), "--log", p(&log)];
    args.extend(TINY);
    ok(&args);
    let log_text = fs::read_to_string(&log).unwrap();
    assert!(log_text.starts_with("epoch\tmain\taux\tcontrastive\ttotal\tvalid_recall@10\n"));
    assert_eq!(log_text.lines().count(), 3);

    // identical inputs give an identical checkpoint
    let ckpt2 = tmp.path().join("model2.ckpt");
    args[4] = p(&ckpt2);
    ok(&args);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&ckpt2).unwrap());

    let report = tmp.path().join("report.tsv");
    let printed = ok(&[
        "eval",
        "--corpus",
        p(&corpus),
        "--checkpoint",
        p(&ckpt),
        "--mode",
        "novelty",
        "--topn",
        "5",
        "--report",
        p(&report),
    ]);
    let parsed = EvalReport::parse_tsv(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(EvalReport::parse_tsv(&printed).unwrap(), parsed);
    assert_eq!(parsed.len(), 1);
    assert_eq!(parsed[0].n, 5);
    assert_eq!(parsed[0].mode, dsie::Mode::Novelty);

    let base = ok(&[
        "eval",
        "--corpus",
        p(&corpus),
        "--baseline",
        "most-popular",
        "--split",
        "valid",
    ]);
    assert_eq!(EvalReport::parse_tsv(&base).unwrap()[0].n, 50);

    let top = ok(&[
        "retrieve",
        "--corpus",
        p(&corpus),
        "--checkpoint",
        p(&ckpt),
        "--items",
        "i3",
        "--topn",
        "4",
    ]);
    let lines: Vec<&str> = top.lines().collect();
    assert_eq!(lines.len(), 4);
    for (r, line) in lines.iter().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 3);
        assert_eq!(f[0], (r + 1).to_string());
        assert!(f[1].starts_with('i') && f[1] != "i3");
        f[2].parse::<f64>().unwrap();
    }
    assert_eq!(
        dsie(&[
            "retrieve",
            "--corpus",
            p(&corpus),
            "--checkpoint",
            p(&ckpt),
            "--items",
            "nope"
        ])
        .status
        .code(),
        Some(1)
    );

    let mut sweep = vec![
        "sweep",
        "--corpus",
        p(&corpus),
        "--param",
        "tau",
        "--values",
        "0.02,0.16",
        "--topn",
        "10",
    ];
    sweep.extend(TINY);
    let table = ok(&sweep);
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("param\tvalue\tseeds\tmode"));
    assert!(rows[1].starts_with("tau\t0.02\t1\tstandard\tvalid\t10\t"));
}

#[test]
fn checkpoint_refuses_a_different_catalog() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&[
        "synth",
        "--output",
        p(&a),
        "--users",
        "30",
        "--items",
        "20",
        "--min-len",
        "5",
        "--max-len",
        "8",
    ]);
    ok(&[
        "synth",
        "--output",
        p(&b),
        "--users",
        "30",
        "--items",
        "24",
        "--min-len",
        "5",
        "--max-len",
        "8",
    ]);
    let ckpt = tmp.path().join("m.ckpt");
    let mut args = vec!["train", "--corpus", p(&a), "--output", p(&ckpt)];
    args.extend(TINY);
    ok(&args);
    let out = dsie(&["eval", "--corpus", p(&b), "--checkpoint", p(&ckpt)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}
