//! Golden `--help` output. Set `BLESS=1` to regenerate the files.

use std::path::PathBuf;
use std::process::Command;

const SUBCOMMANDS: [&str; 9] = [
    "fit",
    "impute",
    "select-graph",
    "bootstrap",
    "sensitivity",
    "simulate",
    "count-trees",
    "sample-tree",
    "validate-graph",
];

fn help(sub: Option<&str>) -> String {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_treetilt"));
    cmd.env("COLUMNS", "100");
    if let Some(s) = sub {
        cmd.arg(s);
    }
    let o = cmd.arg("--help").output().unwrap();
    assert!(o.status.success());
    String::from_utf8(o.stdout).unwrap()
}

fn check(name: &str, text: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.txt"));
    if std::env::var_os("BLESS").is_some() {
        std::fs::write(&path, text).unwrap();
        return;
    }
    let want =
        std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}; run with BLESS=1", path.display()));
    assert_eq!(text, want, "help for {name} changed; rerun with BLESS=1 if intended");
}

#[test]
fn root_help() {
    let text = help(None);
    for s in SUBCOMMANDS {
        assert!(text.contains(s), "{s}");
    }
    check("root", &text);
}

#[test]
fn subcommand_help() {
    for s in SUBCOMMANDS {
        let text = help(Some(s));
        assert!(text.contains("--config") && text.contains("--workers"), "{s}");
        check(s, &text);
    }
}

#[test]
fn help_lists_every_flag() {
    let expect: [(&str, &[&str]); 4] = [
        (
            "fit",
            &[
                "--data",
                "--tree",
                "--family",
                "--N",
                "--k",
                "--k-range",
                "--seed",
                "--out",
            ],
        ),
        ("impute", &["--data", "--model", "--m", "--method", "--seed", "--out"]),
        ("bootstrap", &["--b", "--level", "--ci", "--block-threshold", "--seed"]),
        ("simulate", &["--study", "--n-grid", "--u", "--b", "--seed", "--out"]),
    ];
    for (sub, flags) in expect {
        let text = help(Some(sub));
        for f in flags {
            assert!(text.contains(f), "{sub} {f}");
        }
    }
}
