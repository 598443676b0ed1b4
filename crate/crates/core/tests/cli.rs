use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn performa(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_performa"))
        .args(args)
        .env("PERFORMA_OUT", out)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: [&str; 4] = ["--set", "dataset.source.n_rows=120", "--set", "name=t"];

#[test]
fn missing_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = performa(&["run", "--config", "missing.toml"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.toml"));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&performa(&["frobnicate"], tmp.path())), 2);
    assert_eq!(code(&performa(&["run", "--no-such-flag"], tmp.path())), 2);
    assert_eq!(code(&performa(&[], tmp.path())), 2);
    assert_eq!(
        code(&performa(
            &["--jobs", "0", "gradcheck", "--cases", "1"],
            tmp.path()
        )),
        2
    );
}

#[test]
fn bad_overrides_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    for bad in [
        "rrm.delta=2",
        "rrm.no_such_key=1",
        "noequals",
        "grid.deltas=[]",
    ] {
        let o = performa(&["run", "--set", bad], tmp.path());
        assert_eq!(code(&o), 2, "{bad}");
    }
}

#[test]
fn bad_config_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "[rrm]\ndelta = \"high\"\n").unwrap();
    let o = performa(&["run", "--config", path.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn every_subcommand_documents_its_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 6] = [
        (
            "run",
            &[
                "--config",
                "--set",
                "--out",
                "--seed",
                "--delta",
                "--hidden-size",
                "--monte-carlo",
                "--cold-start",
                "--certify",
                "--jobs",
            ],
        ),
        (
            "sweep",
            &[
                "--config",
                "--set",
                "--out",
                "--seed",
                "--monte-carlo",
                "--cold-start",
                "--certify",
                "--jobs",
            ],
        ),
        (
            "certify",
            &["--config", "--set", "--out", "--seed", "--delta", "--pairs"],
        ),
        (
            "counterexample",
            &["--config", "--set", "--out", "--seed", "--steps"],
        ),
        ("gradcheck", &["--seed", "--cases"]),
        (
            "oracle",
            &[
                "--config",
                "--set",
                "--out",
                "--seed",
                "--delta",
                "--hidden-size",
            ],
        ),
    ];
    for (sub, flags) in cases {
        let o = performa(&[sub, "--help"], tmp.path());
        assert_eq!(code(&o), 0);
        let text = stdout(&o);
        for f in flags {
            assert!(text.contains(f), "{sub} --help lacks {f}");
        }
        assert!(text.contains("PERFORMA_OUT") || !flags.contains(&"--out"));
    }
}

#[test]
fn counterexample_oscillates_and_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = performa(
        &["counterexample", "--steps", "100", "--set", "name=ce"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(tmp.path().join("ce/counterexample.csv")).unwrap();
    assert_eq!(csv.lines().count(), 102);
    assert!(stdout(&o).contains("0.091084"));
}

#[test]
fn certify_passes_at_high_delta() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["certify", "--delta", "0.9", "--pairs", "500"];
    args.extend(SMALL);
    let o = performa(&args, tmp.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS"));
    let report = fs::read_to_string(tmp.path().join("t/certify.json")).unwrap();
    assert!(report.contains("\"all_pass\": true"));
}

#[test]
fn gradcheck_and_oracle_succeed() {
    let tmp = tempfile::tempdir().unwrap();
    let o = performa(&["gradcheck", "--cases", "20"], tmp.path());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("failures 0"));
    let mut args = vec!["oracle", "--delta", "0.9"];
    args.extend(SMALL);
    let o = performa(&args, tmp.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn run_is_byte_reproducible_and_honours_out() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("o{k}"));
        let mut args = vec![
            "run",
            "--delta",
            "0.7",
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend(SMALL);
        let o = performa(&args, tmp.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let dir = out.join("t");
        let trace = fs::read(dir.join("trace_0.7_6_0.csv")).unwrap();
        let report = fs::read(dir.join("report.json")).unwrap();
        let svg = fs::read(dir.join("fig_risk_0.7.svg")).unwrap();
        outputs.push((trace, report, svg));
    }
    assert_eq!(outputs[0], outputs[1]);
    // --out wins over PERFORMA_OUT, so nothing landed in the env directory.
    assert!(!tmp.path().join("t").exists());
}
