mod common;

use std::path::Path;
use std::process::{Command, Output};

fn pgfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgfa"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn synthesize(dir: &Path) {
    let out = pgfa(&[
        "synthesize",
        "--samples",
        "24",
        "--seed",
        "2",
        "--out",
        &s(dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(code(&pgfa(&[])), 1);
    assert_eq!(code(&pgfa(&["train"])), 1);
    assert_eq!(code(&pgfa(&["run", "--bogus"])), 1);
    assert_eq!(code(&pgfa(&["--help"])), 0);
    assert_eq!(code(&pgfa(&["--version"])), 0);
    assert_eq!(code(&pgfa(&["gradcheck", "--configs", "0"])), 1);
}

#[test]
fn data_errors_exit_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.emb");
    std::fs::write(&bad, "PGFA-EMB1 d=3 n=2\nr0,a,1,2,3\nr1,b,1,2\n").unwrap();
    let out = pgfa(&[
        "align",
        "--features",
        &s(&bad),
        "--anchors",
        &s(&bad),
        "--out",
        &s(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.emb:3:"), "{err}");
    assert!(err.contains("read features"), "{err}");
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let out = pgfa(&["gradcheck"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for group in [
        "encoder.weight",
        "encoder.bias",
        "projection.weight",
        "projection.bias",
        "log_tau",
    ] {
        assert!(
            text.lines().any(|l| l.starts_with(&format!("{group},"))),
            "{text}"
        );
    }
    let bad = pgfa(&["gradcheck", "--corrupt", "projection.weight"]);
    assert_eq!(code(&bad), 3);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("projection.weight"));
}

#[test]
fn simulate_schema_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, out: &str| {
        let o = pgfa(&[
            "simulate-vmf",
            "--n",
            "10,50",
            "--trials",
            "3",
            "--held-out",
            "40",
            "--seed",
            seed,
            "--out",
            &s(&dir.path().join(out)),
        ]);
        assert_eq!(code(&o), 0);
        std::fs::read_to_string(dir.path().join(out).join("theorem.csv")).unwrap()
    };
    let a = run("1", "a");
    let b = run("2", "b");
    assert_eq!(
        a.lines().next(),
        Some("n,trial,agreement,mean_resultant_length,a_d_reference")
    );
    assert_eq!(a.lines().count(), 1 + 2 * 3);
    assert_eq!(b.lines().count(), a.lines().count());
    assert_ne!(a, b);
    for line in a.lines().skip(1) {
        let agreement: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&agreement));
    }
}

#[test]
fn staged_pipeline_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synthesize(&data);
    let f = s(&data.join("features.emb"));
    let a = s(&data.join("anchors.emb"));
    let m = s(&data.join("manifest.toml"));
    let p = |name: &str| s(&dir.path().join(name));

    assert_eq!(
        code(&pgfa(&[
            "train",
            "--features",
            &f,
            "--anchors",
            &a,
            "--manifest",
            &m,
            "--epochs",
            "4",
            "--out",
            &p("train")
        ])),
        0
    );
    let ckpt = p("train/model.ckpt");
    assert_eq!(
        code(&pgfa(&[
            "align",
            "--features",
            &f,
            "--anchors",
            &a,
            "--manifest",
            &m,
            "--checkpoint",
            &ckpt,
            "--out",
            &p("staged")
        ])),
        0
    );
    assert_eq!(
        code(&pgfa(&[
            "eval",
            "--features",
            &f,
            "--anchors",
            &a,
            "--manifest",
            &m,
            "--checkpoint",
            &ckpt,
            "--out",
            &p("staged")
        ])),
        0
    );
    assert_eq!(
        code(&pgfa(&[
            "run",
            "--features",
            &f,
            "--anchors",
            &a,
            "--manifest",
            &m,
            "--checkpoint",
            &ckpt,
            "--out",
            &p("full")
        ])),
        0
    );
    let read = |path: &str| std::fs::read(dir.path().join(path)).unwrap();
    assert_eq!(read("staged/labels.csv"), read("full/aligned/labels.csv"));
    assert_eq!(
        read("staged/eval_report.json"),
        read("full/aligned/eval_report.json")
    );
    assert_eq!(
        read("staged/confusion.csv"),
        read("full/aligned/confusion.csv")
    );
    assert_eq!(
        read("staged/prototype_report.txt"),
        read("full/prototype_report.txt")
    );
    assert_eq!(read("train/model.ckpt"), read("full/model.ckpt"));
}

#[test]
fn alpha_zero_run_matches_baseline_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synthesize(&data);
    let out = dir.path().join("out");
    let o = pgfa(&[
        "run",
        "--features",
        &s(&data.join("features.emb")),
        "--anchors",
        &s(&data.join("anchors.emb")),
        "--manifest",
        &s(&data.join("manifest.toml")),
        "--epochs",
        "2",
        "--alpha",
        "0",
        "--out",
        &s(&out),
    ]);
    assert_eq!(code(&o), 0);
    let tree = common::read_tree(&out);
    let get = |name: &str| &tree.iter().find(|(n, _)| n == name).unwrap().1;
    assert_eq!(get("baseline/labels.csv"), get("aligned/labels.csv"));
    let report = String::from_utf8(get("prototype_report.txt").clone()).unwrap();
    assert!(
        report.lines().skip(5).all(|l| l.ends_with(",0,true")),
        "{report}"
    );
}

#[test]
fn bad_alpha_and_unassigned_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synthesize(&data);
    let base = [
        "run".to_string(),
        "--features".into(),
        s(&data.join("features.emb")),
        "--anchors".into(),
        s(&data.join("anchors.emb")),
        "--out".into(),
        s(&dir.path().join("out")),
    ];
    let with = |extra: &[&str]| {
        let mut args: Vec<&str> = base.iter().map(String::as_str).collect();
        args.extend_from_slice(extra);
        pgfa(&args)
    };
    let m = s(&data.join("manifest.toml"));
    assert_eq!(code(&with(&["--manifest", &m, "--alpha", "1.5"])), 1);

    let partial = dir.path().join("partial.toml");
    std::fs::write(&partial, "seen = [\"c0\"]\nunseen = [\"c8\", \"c9\"]\n").unwrap();
    let o = with(&["--manifest", &s(&partial)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("c1"));
}
