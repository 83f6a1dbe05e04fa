use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn file(&self, name: &str, body: &str) -> PathBuf {
        let path = self.dir.path().join(name);
        fs::write(&path, body).unwrap();
        path
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn copyctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_copyctl"))
        .args(args)
        .env_remove("COPYCTL_THREADS")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn tsv_column(tsv: &str, name: &str) -> Vec<String> {
    let mut lines = tsv.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let idx = header
        .iter()
        .position(|h| *h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    lines
        .map(|l| l.split('\t').nth(idx).unwrap().to_string())
        .collect()
}

#[test]
fn analyze_fixture_json_and_tsv() {
    let w = Workspace::new();
    let (src, hyp, reference) = (
        w.file("src", "a b c\n"),
        w.file("hyp", "a x c .\n"),
        w.file("ref", "a y z\n"),
    );
    let json = stdout(&copyctl(&[
        "analyze",
        "--src",
        s(&src),
        "--hyp",
        s(&hyp),
        "--ref",
        s(&reference),
    ]));
    assert!(json.contains("\"ratio\": 0.666667"));
    assert!(json.contains("\"cer\": 0.500000"));
    assert!(json.contains("\"bleu\": 0.000000"));

    let tsv = stdout(&copyctl(&[
        "analyze",
        "--src",
        s(&src),
        "--hyp",
        s(&hyp),
        "--ref",
        s(&reference),
        "--format",
        "tsv",
    ]));
    assert_eq!(tsv_column(&tsv, "ratio"), ["0.666667"]);
    assert_eq!(tsv_column(&tsv, "cer"), ["0.500000"]);
    assert_eq!(tsv_column(&tsv, "high_overlap"), ["1"]);
}

#[test]
fn analyze_without_reference_omits_cer_and_bleu() {
    let w = Workspace::new();
    let (src, hyp) = (w.file("src", "a b c\n"), w.file("hyp", "a x c .\n"));
    let json = stdout(&copyctl(&["analyze", "--src", s(&src), "--hyp", s(&hyp)]));
    assert!(json.contains("\"cer\": null"), "{json}");
    assert!(json.contains("\"copy_errors\": null"), "{json}");
    assert!(!json.contains("bleu"), "{json}");
}

#[test]
fn flags_change_counting() {
    let w = Workspace::new();
    let src = w.file("src", "Der Marschall\n");
    let hyp = w.file("hyp", "der Mar@@ schall .\n");
    let base = [
        "analyze",
        "--src",
        s(&src),
        "--hyp",
        s(&hyp),
        "--format",
        "tsv",
    ];
    let plain = stdout(&copyctl(&base));
    assert_eq!(tsv_column(&plain, "copy_tokens"), ["0"]);

    let mut args = base.to_vec();
    args.extend(["--lowercase", "--merge-subwords"]);
    let merged = stdout(&copyctl(&args));
    assert_eq!(tsv_column(&merged, "copy_tokens"), ["2"]);
    assert_eq!(tsv_column(&merged, "ratio"), ["1.000000"]);

    args.push("--keep-punct-denominator");
    let kept = stdout(&copyctl(&args));
    assert_eq!(tsv_column(&kept, "total_tokens"), ["3"]);
    assert_eq!(tsv_column(&kept, "ratio"), ["0.666667"]);
}

#[test]
fn threshold_controls_high_overlap() {
    let w = Workspace::new();
    let src = w.file("src", "a b\na b c d\na b c d e\n");
    let hyp = w.file("hyp", "a b\na b x y\na v w x y\n");
    let count = |t: &str| {
        let out = stdout(&copyctl(&[
            "analyze",
            "--src",
            s(&src),
            "--hyp",
            s(&hyp),
            "--format",
            "tsv",
            "--threshold",
            t,
        ]));
        tsv_column(&out, "high_overlap")[0].clone()
    };
    assert_eq!(count("0.5"), "1");
    assert_eq!(count("0.1"), "3");
    assert_eq!(count("1"), "0");
}

#[test]
fn input_errors_exit_2() {
    let w = Workspace::new();
    let src = w.file("src", "a\nb\nc\n");
    let short = w.file("hyp", "a\nb\n");
    let out = copyctl(&["analyze", "--src", s(&src), "--hyp", s(&short)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("hyp") && err.contains("misaligned"), "{err}");

    let out = copyctl(&["analyze", "--src", s(&src), "--hyp", s(&w.path("missing"))]);
    assert_eq!(out.status.code(), Some(2));

    let empty = w.file("empty", "");
    let out = copyctl(&["analyze", "--src", s(&empty), "--hyp", s(&empty)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
}

#[test]
fn flags_are_validated_before_reading_files() {
    let missing = "/nonexistent/path";
    let cases: [&[&str]; 5] = [
        &[
            "analyze",
            "--src",
            missing,
            "--hyp",
            missing,
            "--threshold",
            "1.5",
        ],
        &[
            "decode",
            "--lexicon",
            missing,
            "--src",
            missing,
            "--alpha",
            "0",
        ],
        &[
            "decode",
            "--lexicon",
            missing,
            "--src",
            missing,
            "--beam",
            "0",
        ],
        &[
            "decode",
            "--lexicon",
            missing,
            "--src",
            missing,
            "--length-exp",
            "-1",
        ],
        &[
            "sweep",
            "--lexicon",
            missing,
            "--src",
            missing,
            "--ref",
            missing,
            "--alphas",
            "1,-2",
        ],
    ];
    for args in cases {
        let out = copyctl(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(!err.contains("No such file"), "{args:?}: {err}");
    }
    assert_eq!(copyctl(&["bogus"]).status.code(), Some(2));
}

#[test]
fn bad_thread_count_is_rejected() {
    let w = Workspace::new();
    let src = w.file("src", "a\n");
    for value in ["0", "many"] {
        let out = Command::new(env!("CARGO_BIN_EXE_copyctl"))
            .args(["analyze", "--src", s(&src), "--hyp", s(&src)])
            .env("COPYCTL_THREADS", value)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(2));
    }
    let out = Command::new(env!("CARGO_BIN_EXE_copyctl"))
        .args(["analyze", "--src", s(&src), "--hyp", s(&src)])
        .env("COPYCTL_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn pos_report_buckets() {
    let w = Workspace::new();
    let src = w.file("src", "Hussein Tantawi war in Kairo 2011\n");
    let hyp = w.file("hyp", "Hussein Tantawi was in Kairo 2011 .\n");
    let reference = w.file("ref", "Hussein Tantawi was in Cairo 2011 .\n");
    let pos = w.file("pos", "PROPN PROPN AUX ADP PROPN NUM PUNCT\n");
    let out = stdout(&copyctl(&[
        "pos",
        "--src",
        s(&src),
        "--hyp",
        s(&hyp),
        "--ref",
        s(&reference),
        "--pos",
        s(&pos),
        "--format",
        "tsv",
    ]));
    assert_eq!(
        tsv_column(&out, "bucket"),
        ["Total", "PROPN", "ADP", "NUM", "NOUN", "Others"]
    );
    assert_eq!(
        tsv_column(&out, "copy_tokens"),
        ["5", "3", "1", "1", "0", "0"]
    );
    assert_eq!(
        tsv_column(&out, "cer"),
        ["0.200000", "0.333333", "0.000000", "0.000000", "NA", "NA"]
    );
    assert_eq!(
        tsv_column(&out, "ratio_pct"),
        ["83.3%", "50.0%", "16.7%", "16.7%", "0.0%", "0.0%"]
    );

    let tagmap = w.file("tagmap", "PROPN\tName\nNUM\tName\n");
    let out = stdout(&copyctl(&[
        "pos",
        "--src",
        s(&src),
        "--hyp",
        s(&hyp),
        "--ref",
        s(&reference),
        "--pos",
        s(&pos),
        "--tagmap",
        s(&tagmap),
        "--format",
        "tsv",
    ]));
    assert_eq!(tsv_column(&out, "bucket"), ["Total", "Name", "Others"]);
    assert_eq!(tsv_column(&out, "copy_tokens"), ["5", "4", "1"]);

    let bad_pos = w.file("bad_pos", "PROPN\n");
    let out = copyctl(&[
        "pos",
        "--src",
        s(&src),
        "--hyp",
        s(&hyp),
        "--ref",
        s(&reference),
        "--pos",
        s(&bad_pos),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn group_report() {
    let w = Workspace::new();
    let src = w.file("src", "a b\nc d\ne f\n");
    let hyp = w.file("hyp", "a x\ny d\nu v w\n");
    let reference = w.file("ref", "a\nd\nu\n");
    let meta = w.file(
        "meta",
        "origin=src-ori\norigin=src-ori\tdomain=it\norigin=tgt-ori\n",
    );
    let out = stdout(&copyctl(&[
        "group",
        "--src",
        s(&src),
        "--hyp",
        s(&hyp),
        "--ref",
        s(&reference),
        "--meta",
        s(&meta),
        "--key",
        "origin",
        "--format",
        "tsv",
    ]));
    assert_eq!(tsv_column(&out, "origin"), ["src-ori", "tgt-ori"]);
    assert_eq!(tsv_column(&out, "ratio"), ["0.500000", "0.000000"]);
    assert_eq!(tsv_column(&out, "cer"), ["0.000000", "NA"]);

    let out = copyctl(&[
        "group",
        "--src",
        s(&src),
        "--hyp",
        s(&hyp),
        "--meta",
        s(&meta),
        "--key",
        "domain",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn curve_accepts_globs_in_order() {
    let w = Workspace::new();
    let src = w.file("src", "a b c\n");
    let reference = w.file("ref", "a b z\n");
    w.file("ck-1.hyp", "a b c\n");
    w.file("ck-2.hyp", "a q c\n");
    w.file("ck-3.hyp", "p q r\n");
    let pattern = format!("{}/ck-*.hyp", w.dir.path().display());
    let out = stdout(&copyctl(&[
        "curve",
        "--src",
        s(&src),
        "--ref",
        s(&reference),
        &pattern,
        "--format",
        "tsv",
    ]));
    assert_eq!(tsv_column(&out, "label"), ["ck-1", "ck-2", "ck-3"]);
    assert_eq!(
        tsv_column(&out, "ratio"),
        ["1.000000", "0.666667", "0.000000"]
    );
    assert_eq!(tsv_column(&out, "cer"), ["0.333333", "0.500000", "NA"]);

    let out = copyctl(&[
        "curve",
        "--src",
        s(&src),
        "--ref",
        s(&reference),
        &format!("{}/none-*", w.dir.path().display()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

const LEXICON: &str =
    "# toy lexicon\nHussein\tHussein:0.6,X:0.4\nTantawi → Tantawi:0.7, Y:0.3\n.\t.:1\n";

#[test]
fn decode_with_penalty_and_scores() {
    let w = Workspace::new();
    let lex = w.file("lex", LEXICON);
    let src = w.file("src", "Hussein Tantawi .\nTantawi Hussein\nUnbekannt\n");
    let scores = w.path("scores.tsv");

    let plain = stdout(&copyctl(&[
        "decode",
        "--lexicon",
        s(&lex),
        "--src",
        s(&src),
    ]));
    assert_eq!(plain, "Hussein Tantawi .\nTantawi Hussein\n<unk>\n");

    let penalized = stdout(&copyctl(&[
        "decode",
        "--lexicon",
        s(&lex),
        "--src",
        s(&src),
        "--alpha",
        "0.5",
        "--scores",
        s(&scores),
    ]));
    assert_eq!(penalized, "X Tantawi .\nTantawi X\n<unk>\n");
    let table = fs::read_to_string(&scores).unwrap();
    assert_eq!(tsv_column(&table, "copy_count"), ["1", "1", "0"]);
    assert_eq!(tsv_column(&table, "line"), ["1", "2", "3"]);
    let raw: f64 = tsv_column(&table, "raw_logprob")[0].parse().unwrap();
    assert!((raw - (0.4f64 * 0.7).ln()).abs() < 1e-6);

    let oracle = stdout(&copyctl(&[
        "decode",
        "--lexicon",
        s(&lex),
        "--src",
        s(&src),
        "--alpha",
        "0.5",
        "--oracle",
    ]));
    assert_eq!(oracle, penalized);

    let boosted = stdout(&copyctl(&[
        "decode",
        "--lexicon",
        s(&lex),
        "--src",
        s(&src),
        "--alpha",
        "0.3",
    ]));
    assert_eq!(boosted, "X Y .\nY X\n<unk>\n");
}

#[test]
fn decode_reports_bad_lexicon() {
    let w = Workspace::new();
    let lex = w.file("lex", "w\ta:0.6,b:0.5\n");
    let src = w.file("src", "w\n");
    let out = copyctl(&["decode", "--lexicon", s(&lex), "--src", s(&src)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lexicon") && err.contains("\"w\""), "{err}");
}

#[test]
fn sweep_table() {
    let w = Workspace::new();
    let lex = w.file("lex", LEXICON);
    let src = w.file("src", "Hussein Tantawi .\n");
    let reference = w.file("ref", "X Tantawi .\n");
    let out = stdout(&copyctl(&[
        "sweep",
        "--lexicon",
        s(&lex),
        "--src",
        s(&src),
        "--ref",
        s(&reference),
        "--alphas",
        "0.3,0.5,1.0",
        "--format",
        "tsv",
    ]));
    assert_eq!(out.lines().next().unwrap(), "alpha\tratio\tcer\tbleu");
    assert_eq!(
        tsv_column(&out, "ratio"),
        ["0.000000", "0.500000", "1.000000"]
    );
    assert_eq!(tsv_column(&out, "cer"), ["NA", "0.000000", "0.500000"]);
    // three tokens have no 4-grams, so unsmoothed BLEU is zero even for an exact match
    assert_eq!(tsv_column(&out, "bleu")[1], "0.000000");

    let json = stdout(&copyctl(&[
        "sweep",
        "--lexicon",
        s(&lex),
        "--src",
        s(&src),
        "--ref",
        s(&reference),
        "--alphas",
        "0.3,0.5,1.0",
    ]));
    assert!(json.contains("\"cer\": null"));
    assert!(json.contains("\"ratio\": 0.500000"));

    let short_ref = w.file("short", "");
    let out = copyctl(&[
        "sweep",
        "--lexicon",
        s(&lex),
        "--src",
        s(&src),
        "--ref",
        s(&short_ref),
        "--alphas",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_flag_writes_file() {
    let w = Workspace::new();
    let src = w.file("src", "a b\n");
    let out_path = w.path("report.json");
    let out = copyctl(&[
        "analyze",
        "--src",
        s(&src),
        "--hyp",
        s(&src),
        "--out",
        s(&out_path),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert!(fs::read_to_string(&out_path)
        .unwrap()
        .contains("\"ratio\": 1.000000"));
}
