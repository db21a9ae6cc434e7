use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use treetilt::simharness::{generate, GeneratorConfig};
use treetilt::IncompleteDataset;

fn treetilt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treetilt"))
        .args(args)
        .output()
        .expect("run treetilt")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_design_data(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let (data, _) = generate(&GeneratorConfig::appendix_b(), n, seed).unwrap();
    let path = dir.join("data.csv");
    data.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    path
}

fn read_dataset(path: &Path) -> IncompleteDataset {
    IncompleteDataset::from_csv(std::fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn count_trees_d3() {
    let o = treetilt(&["count-trees", "--d", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "189");
}

#[test]
fn count_trees_over_pattern_set() {
    // 10 and 01 each have the single parent 11; 00 has three choices
    let o = treetilt(&["count-trees", "--patterns", "11,10,01,00"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "3");
}

#[test]
fn validate_graph_two_parents_exits_2() {
    let dir = TempDir::new().unwrap();
    let t = dir.path().join("t.json");
    std::fs::write(
        &t,
        r#"{"d": 2, "edges": [["10", "11"], ["01", "11"], ["00", "10"], ["00", "01"]]}"#,
    )
    .unwrap();
    let o = treetilt(&["validate-graph", "--tree", p(&t)]);
    assert_eq!(o.status.code(), Some(2));
    let out = stdout(&o);
    assert!(out.contains("single-parent"), "{out}");
    assert!(out.contains("00"), "{out}");
}

#[test]
fn validate_graph_accepts_tree() {
    let dir = TempDir::new().unwrap();
    let t = dir.path().join("t.json");
    std::fs::write(&t, r#"{"d": 2, "edges": [["10", "11"], ["01", "11"], ["00", "10"]]}"#).unwrap();
    let o = treetilt(&["validate-graph", "--tree", p(&t)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("valid tree graph: 4 patterns, 3 edges"));
}

#[test]
fn malformed_csv_exits_1_with_location() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "x1,x2,x3\n1,2,3\n4,abc,6\n").unwrap();
    let o = treetilt(&[
        "fit",
        "--data",
        p(&data),
        "--family",
        "binomial-product",
        "--N",
        "17",
        "--tree",
        "ccmv",
        "--seed",
        "1",
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("row") && err.contains("column"), "{err}");

    std::fs::write(&data, "x1,x2,x3\n1,2,3\n4,5\n").unwrap();
    let o = treetilt(&[
        "fit",
        "--data",
        p(&data),
        "--family",
        "binomial-product",
        "--N",
        "17",
        "--tree",
        "ccmv",
        "--seed",
        "1",
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn randomized_commands_require_seed() {
    let o = treetilt(&["sample-tree", "--d", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--seed"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(treetilt(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(treetilt(&["count-trees", "--bogus"]).status.code(), Some(1));
}

#[test]
fn sample_tree_is_deterministic() {
    let a = treetilt(&["sample-tree", "--d", "3", "--seed", "11"]);
    let b = treetilt(&["sample-tree", "--d", "3", "--seed", "11"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let dir = TempDir::new().unwrap();
    let t = dir.path().join("t.json");
    std::fs::write(&t, &a.stdout).unwrap();
    assert!(treetilt(&["validate-graph", "--tree", p(&t)]).status.success());
}

#[test]
fn sample_tree_from_point_mass() {
    let dir = TempDir::new().unwrap();
    let pmf = dir.path().join("pmf.json");
    std::fs::write(
        &pmf,
        r#"[{"tree": {"d": 2, "edges": [["10", "11"], ["01", "11"], ["00", "01"]]}, "weight": 1.0}]"#,
    )
    .unwrap();
    let out = dir.path().join("tree.json");
    let o = treetilt(&[
        "sample-tree",
        "--d",
        "2",
        "--pmf",
        p(&pmf),
        "--seed",
        "3",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tree: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(tree["edges"]
        .as_array()
        .unwrap()
        .iter()
        .any(|e| e[0] == "00" && e[1] == "01"));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tree.json.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 3);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn config_file_merges_under_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"d": 2}"#).unwrap();
    let o = treetilt(&["count-trees", "--config", p(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "3");

    let o = treetilt(&["count-trees", "--config", p(&cfg), "--d", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "189");

    std::fs::write(&cfg, r#"{"d": 2, "depth": 4}"#).unwrap();
    let o = treetilt(&["count-trees", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("depth"));
}

#[test]
fn fit_then_impute_preserves_observed_cells() {
    let dir = TempDir::new().unwrap();
    let data = write_design_data(dir.path(), 2000, 21);
    let model = dir.path().join("model.json");
    let o = treetilt(&[
        "fit",
        "--data",
        p(&data),
        "--family",
        "binomial-product",
        "--N",
        "17",
        "--k",
        "5",
        "--tree",
        "ccmv",
        "--restarts",
        "2",
        "--seed",
        "5",
        "--out",
        p(&model),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mj: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(mj["provenance"]["seed"], 5);
    assert!(mj["provenance"]["config_hash"].is_string());

    let out = dir.path().join("imp");
    let o = treetilt(&[
        "impute",
        "--data",
        p(&data),
        "--model",
        p(&model),
        "--m",
        "20",
        "--seed",
        "9",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let input = read_dataset(&data);
    for m in 1..=20 {
        let done = read_dataset(&out.join(format!("imputed_{m}.csv")));
        assert_eq!(done.len(), input.len());
        for (a, b) in input.rows().iter().zip(done.rows()) {
            for (x, y) in a.iter().zip(b) {
                assert!(y.is_some());
                if let Some(x) = x {
                    assert_eq!(Some(*x), *y);
                }
            }
        }
    }
    let prov: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["seed"], 9);
    assert_eq!(prov["outputs"].as_array().unwrap().len(), 20);

    let again = dir.path().join("imp2");
    treetilt(&[
        "impute",
        "--data",
        p(&data),
        "--model",
        p(&model),
        "--m",
        "20",
        "--seed",
        "9",
        "--out",
        p(&again),
    ]);
    assert_eq!(
        std::fs::read(out.join("imputed_7.csv")).unwrap(),
        std::fs::read(again.join("imputed_7.csv")).unwrap()
    );
}

#[test]
fn select_graph_and_sensitivity() {
    let dir = TempDir::new().unwrap();
    let data = write_design_data(dir.path(), 1500, 8);
    let sel = dir.path().join("sel");
    let o = treetilt(&[
        "select-graph",
        "--data",
        p(&data),
        "--method",
        "energy",
        "--out",
        p(&sel),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["tree.json", "scores.csv", "manifest.json"] {
        assert!(sel.join(f).exists(), "{f}");
    }
    let tree = sel.join("tree.json");
    assert!(treetilt(&["validate-graph", "--tree", p(&tree)]).status.success());

    let model = dir.path().join("model.json");
    let o = treetilt(&[
        "fit",
        "--data",
        p(&data),
        "--family",
        "binomial-product",
        "--N",
        "17",
        "--k",
        "2",
        "--tree",
        p(&tree),
        "--restarts",
        "2",
        "--seed",
        "1",
        "--out",
        p(&model),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let grid = dir.path().join("grid.json");
    std::fs::write(
        &grid,
        r#"{"rho": [[0,0,0],[0.1,0,0]], "trees": {"ccmv": "ccmv", "lncmv": "lncmv"}}"#,
    )
    .unwrap();
    let csv = dir.path().join("sweep.csv");
    let o = treetilt(&[
        "sensitivity",
        "--data",
        p(&data),
        "--model",
        p(&model),
        "--grid",
        p(&grid),
        "--coordinate",
        "1",
        "--out",
        p(&csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "tree_id,rho1,rho2,rho3,value,status");
    assert_eq!(lines.len(), 5);
    assert!(dir.path().join("sweep.csv.meta.json").exists());
}

#[test]
fn bootstrap_writes_draws_and_summary() {
    let dir = TempDir::new().unwrap();
    let data = write_design_data(dir.path(), 1500, 3);
    let out = dir.path().join("boot");
    let o = treetilt(&[
        "bootstrap",
        "--data",
        p(&data),
        "--tree",
        "ccmv",
        "--family",
        "binomial-product",
        "--N",
        "17",
        "--k",
        "1",
        "--restarts",
        "1",
        "--b",
        "10",
        "--seed",
        "2",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let draws = std::fs::read_to_string(out.join("draws.csv")).unwrap();
    assert_eq!(draws.lines().count(), 11);
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(s["block_check"]["pairs"].is_array());
    assert!(!s["intervals"].as_array().unwrap().is_empty());
}

#[test]
fn simulate_kde_mnar_small() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim");
    let o = treetilt(&[
        "simulate",
        "--study",
        "kde-mnar",
        "--iterations",
        "1",
        "--n",
        "600",
        "--seed",
        "4",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["densities.csv", "summary.csv", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}
