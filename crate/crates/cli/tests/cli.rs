use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ktlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ktlab"))
        .args(args)
        .output()
        .unwrap()
}

fn code(args: &[&str]) -> i32 {
    ktlab(args).status.code().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = ktlab(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sample() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/sample.csv")
}

const TINY: [&str; 8] = [
    "--hp",
    "epochs=2",
    "--hp",
    "embedding_width=4",
    "--hp",
    "conv_channels=3,3,3",
    "--hp",
    "lstm_units=4",
];

#[test]
fn help_documents_every_flag() {
    let expected: [(&str, &[&str]); 7] = [
        (
            "synth",
            &["--students", "--skills", "--len", "--seed", "--out"],
        ),
        ("prepare", &["--in", "--out"]),
        ("split", &["--in", "--seed", "--out-dir"]),
        (
            "train",
            &[
                "--variant",
                "--train",
                "--val",
                "--out-model",
                "--hp",
                "--history",
            ],
        ),
        (
            "eval",
            &["--model", "--test", "--report", "--strict-causal"],
        ),
        ("gradcheck", &["--seed", "--variant"]),
        (
            "compare",
            &[
                "--variants",
                "--data-dir",
                "--seeds",
                "--seed",
                "--out",
                "--hp",
            ],
        ),
    ];
    for (cmd, flags) in expected {
        let out = ktlab(&[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{cmd}");
        let text = String::from_utf8(out.stdout).unwrap();
        for flag in flags {
            assert!(text.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["synth", "--students", "3"]), 1);
    assert_eq!(code(&["gradcheck", "--variant", "dkt-xl"]), 1);
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["split", "--in", s(&sample()), "--out-dir", s(&data)]);
    let train = data.join("train.csv");
    let val = data.join("val.csv");
    let model = dir.path().join("m.ckpt");
    let base = [
        "train",
        "--variant",
        "dkt",
        "--train",
        s(&train),
        "--val",
        s(&val),
        "--out-model",
        s(&model),
    ];
    assert_eq!(code(&[&base[..], &["--hp", "no_such_key=1"]].concat()), 1);
    assert_eq!(code(&[&base[..], &["--hp", "conv_keep=1.5"]].concat()), 1);
    assert_eq!(code(&[&base[..], &["--hp", "missing-equals"]].concat()), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.csv");
    assert_eq!(
        code(&["prepare", "--in", "/nonexistent/x.csv", "--out", s(&out)]),
        2
    );
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "student_id,skill_id,correct\na,1,1\na,2,7\n").unwrap();
    let err = ktlab(&["prepare", "--in", s(&bad), "--out", s(&out)]);
    assert_eq!(err.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&err.stderr).contains("line 3"));
    let fake = dir.path().join("fake.ckpt");
    fs::write(&fake, b"not a checkpoint").unwrap();
    let report = dir.path().join("r.json");
    assert_eq!(
        code(&[
            "eval",
            "--model",
            s(&fake),
            "--test",
            s(&sample()),
            "--report",
            s(&report)
        ]),
        2
    );
}

#[test]
fn prepare_removes_short_students() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.csv");
    ok(&["prepare", "--in", s(&sample()), "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert!(!text.lines().any(|l| l.starts_with("u03,")));
    assert!(text.lines().any(|l| l.starts_with("u20,")));
    assert!(dir.path().join("p.csv.manifest.json").exists());
}

#[test]
fn seeded_commands_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for f in [&a, &b] {
        ok(&[
            "synth",
            "--students",
            "12",
            "--skills",
            "5",
            "--len",
            "8",
            "--seed",
            "5",
            "--out",
            s(f),
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = dir.path().join("c.csv");
    ok(&[
        "synth",
        "--students",
        "12",
        "--skills",
        "5",
        "--len",
        "8",
        "--seed",
        "6",
        "--out",
        s(&c),
    ]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let prepared = dir.path().join("p.csv");
    ok(&["prepare", "--in", s(&sample()), "--out", s(&prepared)]);
    ok(&[
        "split",
        "--in",
        s(&prepared),
        "--seed",
        "2",
        "--out-dir",
        s(&data),
    ]);
    let model = dir.path().join("m.ckpt");
    let history = dir.path().join("h.json");
    let mut args = vec!["train", "--variant", "dkt-stdrl"];
    let (train, val, test) = (
        data.join("train.csv"),
        data.join("val.csv"),
        data.join("test.csv"),
    );
    args.extend([
        "--train",
        s(&train),
        "--val",
        s(&val),
        "--out-model",
        s(&model),
        "--history",
        s(&history),
    ]);
    args.extend(TINY);
    ok(&args);
    let hist: serde_json::Value = serde_json::from_slice(&fs::read(&history).unwrap()).unwrap();
    assert_eq!(hist.as_array().unwrap().len(), 2);

    let report = dir.path().join("r.json");
    ok(&[
        "eval",
        "--model",
        s(&model),
        "--test",
        s(&test),
        "--report",
        s(&report),
    ]);
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    for key in ["rmse", "auc", "acc", "r2", "count"] {
        assert!(r.get(key).is_some(), "{key}");
    }
    let again = dir.path().join("r2.json");
    ok(&[
        "eval",
        "--model",
        s(&model),
        "--test",
        s(&test),
        "--report",
        s(&again),
    ]);
    assert_eq!(fs::read(&report).unwrap(), fs::read(&again).unwrap());

    let unseen = dir.path().join("unseen.csv");
    fs::write(
        &unseen,
        "student_id,skill_id,correct\nz,geometry,1\nz,add,0\nz,add,1\n",
    )
    .unwrap();
    assert_eq!(
        code(&[
            "eval",
            "--model",
            s(&model),
            "--test",
            s(&unseen),
            "--report",
            s(&report)
        ]),
        2
    );

    let single = dir.path().join("single.csv");
    fs::write(
        &single,
        "student_id,skill_id,correct\nz,add,1\nz,sub,1\nz,mul,1\n",
    )
    .unwrap();
    let out = ktlab(&[
        "eval",
        "--model",
        s(&model),
        "--test",
        s(&single),
        "--report",
        s(&report),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert!(r["auc"].is_null() && r["rmse"].is_number());
}

#[test]
fn gradcheck_reports_small_error() {
    let out = ok(&["gradcheck", "--seed", "1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let err: f64 = text.rsplit(' ').next().unwrap().trim().parse().unwrap();
    assert!(err < 1e-4, "{text}");
}

#[test]
fn compare_emits_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    let data = dir.path().join("d");
    ok(&[
        "synth",
        "--students",
        "30",
        "--skills",
        "5",
        "--len",
        "10",
        "--seed",
        "1",
        "--out",
        s(&raw),
    ]);
    ok(&[
        "split",
        "--in",
        s(&raw),
        "--seed",
        "1",
        "--out-dir",
        s(&data),
    ]);
    let out = dir.path().join("cmp.csv");
    let mut args = vec![
        "compare",
        "--variants",
        "all",
        "--data-dir",
        s(&data),
        "--seeds",
        "2",
        "--out",
        s(&out),
    ];
    args.extend(TINY);
    ok(&args);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "variant,rmse,auc,acc,r2");
    assert_eq!(lines.len(), 8);
    for line in &lines[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 5);
        assert!(
            cells[1..].iter().all(|c| c.parse::<f64>().is_ok()),
            "{line}"
        );
    }
}
