use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};
use treetilt::expfam::silverman;
use treetilt::fitting::{fit_full, select_k_bic, EmConfig, FitConfig, FittedFullModel, ModelJson};
use treetilt::graphselect::{select_child_based, select_energy, select_parent_based, SelectConfig};
use treetilt::impute::{impute_conjugate, impute_rejection_from_model, RejectionConfig};
use treetilt::inference::{bootstrap, covariance_block_check, BootstrapConfig, CiMethod};
use treetilt::io::atomic_write;
use treetilt::odds::OddsConfig;
use treetilt::rng::{derive_key, seeded};
use treetilt::sensitivity::{sweep, sweep_csv, SweepFunctional, SweepSpec};
use treetilt::simharness::{
    coverage_csv, kde_mar_mechanism, kde_mnar_mechanism, mse_csv, recovery_csv, run_consistency, run_coverage,
    run_kde_study, run_recovery, standardize, synthetic_continuous, GeneratorConfig, GeneratorJson, KdeStudyConfig,
    StudyConfig,
};
use treetilt::treegraph::{
    build_ccmv, build_lncmv, build_rncmv, count_trees, count_trees_over, sample_tree_pmf, sample_tree_uniform,
    validate, GraphJson,
};
use treetilt::{Family, IncompleteDataset, MissingPattern, PatternGraph, TreeGraph};

use crate::args::*;
use crate::config::{write_json, RunInfo};
use crate::{usage, CliError};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fit(a) => fit(a),
        Command::Impute(a) => impute(a),
        Command::SelectGraph(a) => select_graph(a),
        Command::Bootstrap(a) => run_bootstrap(a),
        Command::Sensitivity(a) => sensitivity(a),
        Command::Simulate(a) => simulate(a),
        Command::CountTrees(a) => count(a),
        Command::SampleTree(a) => sample(a),
        Command::ValidateGraph(a) => validate_graph(a),
    }
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| usage(format!("missing required flag --{flag}")))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| usage(format!("cannot open {}: {e}", path.display())))
}

fn read_data(path: &Path) -> Result<IncompleteDataset> {
    IncompleteDataset::from_csv(open(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_model(path: &Path) -> Result<FittedFullModel> {
    Ok(FittedFullModel::from_json(&read_json::<ModelJson>(path)?)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, text.as_bytes())?;
    Ok(())
}

/// Writes a single output file and its `<file>.meta.json` sidecar.
fn write_with_meta(path: &Path, text: &str, info: &RunInfo) -> Result<()> {
    write_text(path, text)?;
    let mut meta = path.as_os_str().to_owned();
    meta.push(".meta.json");
    let mut v = info.provenance();
    v["outputs"] = json!([file_name(path)]);
    write_json(&PathBuf::from(meta), &v)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn parse_list<T: std::str::FromStr>(s: &str, flag: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| usage(format!("--{flag}: cannot parse {t:?}")))
        })
        .collect()
}

/// One value repeated over `d` columns, or exactly `d` values.
fn per_column<T: std::str::FromStr + Clone>(s: &str, d: usize, flag: &str) -> Result<Vec<T>> {
    let v = parse_list::<T>(s, flag)?;
    match v.len() {
        1 => Ok(vec![v[0].clone(); d]),
        n if n == d => Ok(v),
        n => Err(usage(format!("--{flag}: got {n} values for {d} columns"))),
    }
}

fn parse_patterns(s: &str) -> Result<BTreeSet<MissingPattern>> {
    let set = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<MissingPattern>()
                .map_err(|e| usage(format!("--patterns: {e}")))
        })
        .collect::<Result<BTreeSet<_>>>()?;
    let dims: BTreeSet<usize> = set.iter().map(|p| p.dim()).collect();
    if dims.len() > 1 {
        return Err(usage("--patterns: patterns differ in length"));
    }
    Ok(set)
}

fn pattern_set(d: Option<usize>, patterns: &Option<String>) -> Result<BTreeSet<MissingPattern>> {
    match (d, patterns) {
        (Some(d), None) => {
            if !(1..=8).contains(&d) {
                return Err(usage("--d must be between 1 and 8"));
            }
            Ok(MissingPattern::all(d)?.into_iter().collect())
        }
        (None, Some(p)) => parse_patterns(p),
        _ => Err(usage("give exactly one of --d or --patterns")),
    }
}

fn build_family(m: &ModelArgs, data: &IncompleteDataset) -> Result<Family> {
    let d = data.dim();
    let kind = required(&m.family, "family")?;
    let family = match kind {
        FamilyKind::GaussianDiag => Family::GaussianDiag { d },
        FamilyKind::Beta => Family::Beta { d },
        FamilyKind::Dirichlet => Family::Dirichlet { d },
        FamilyKind::BinomialProduct => Family::BinomialProduct {
            trials: per_column(&required(&m.trials, "N")?, d, "N")?,
        },
        FamilyKind::NegativeBinomial => Family::NegativeBinomial {
            r: per_column(&required(&m.nb_r, "nb-r")?, d, "nb-r")?,
        },
        FamilyKind::Pareto => {
            let scale = match &m.scale {
                Some(s) => per_column(s, d, "scale")?,
                None => (0..d)
                    .map(|j| data.rows().iter().filter_map(|r| r[j]).fold(f64::INFINITY, f64::min))
                    .collect(),
            };
            Family::Pareto { scale }
        }
        FamilyKind::GaussianKde => {
            let bandwidth = match &m.bandwidth {
                Some(s) => per_column(s, d, "bandwidth")?,
                None => silverman(&data.complete_rows()),
            };
            Family::GaussianKde { bandwidth }
        }
    };
    family.validate()?;
    Ok(family)
}

fn em_config(m: &ModelArgs) -> EmConfig {
    let mut em = EmConfig::default();
    if let Some(r) = m.restarts {
        em.restarts = r;
    }
    if let Some(t) = m.tol {
        em.tol = t;
    }
    if let Some(i) = m.max_iter {
        em.max_iter = i;
    }
    em
}

fn odds_config(m: &ModelArgs) -> OddsConfig {
    let mut odds = OddsConfig::default();
    if let Some(r) = m.min_rows {
        odds.min_rows = r;
    }
    if let Some(r) = m.ridge {
        odds.ridge = r;
    }
    odds.freeze_quadratic = m.freeze_quadratic;
    odds
}

fn parse_k_range(s: &str) -> Result<Vec<usize>> {
    let bad = || usage(format!("--k-range: expected LO..HI, got {s:?}"));
    let (lo, hi) = s.split_once("..").ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo == 0 || hi < lo {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

/// Resolves K (possibly by BIC) and returns the fit configuration plus the
/// BIC table when one was computed.
fn fit_config(
    m: &ModelArgs,
    data: &IncompleteDataset,
    family: &Family,
    seed: u64,
) -> Result<(FitConfig, Vec<(usize, f64)>)> {
    let em = em_config(m);
    let (k, table) = match (&m.k_range, m.k) {
        (Some(r), _) if !matches!(family, Family::GaussianKde { .. }) => select_k_bic(
            &data.complete_rows(),
            family,
            &parse_k_range(r)?,
            &em,
            derive_key(seed, &[0xB1C]),
        )?,
        (_, Some(0)) => return Err(usage("--k must be at least 1")),
        (_, k) => (k.unwrap_or(1), vec![]),
    };
    Ok((
        FitConfig {
            k,
            em,
            odds: odds_config(m),
        },
        table,
    ))
}

fn resolve_tree(spec: &str, data: &IncompleteDataset) -> Result<TreeGraph> {
    let pats = data.pattern_set();
    let tree = match spec {
        "ccmv" => build_ccmv(&pats)?,
        "lncmv" => build_lncmv(&pats)?,
        "rncmv" => build_rncmv(&pats)?,
        path => TreeGraph::from_json(&read_json::<GraphJson>(Path::new(path))?)?,
    };
    if tree.dim() != data.dim() {
        return Err(CliError::Model(format!(
            "tree has d = {} but the data have {} columns",
            tree.dim(),
            data.dim()
        )));
    }
    Ok(tree)
}

fn report_warnings(ws: &[String]) {
    for w in ws {
        eprintln!("warning: {w}");
    }
}

fn fit(a: FitArgs) -> Result<()> {
    let seed = required(&a.seed, "seed")?;
    let out = required(&a.out, "out")?;
    let data = read_data(&required(&a.data, "data")?)?;
    let tree = resolve_tree(&required(&a.tree, "tree")?, &data)?;
    let family = build_family(&a.model, &data)?;
    let (cfg, bic) = fit_config(&a.model, &data, &family, seed)?;
    let info = RunInfo::new("fit", &a, Some(seed))?;
    let model = fit_full(&data, &tree, &family, &cfg, seed)?;
    report_warnings(&model.warnings);
    for (r, e) in model.derived_errors() {
        eprintln!("warning: pattern {r}: {e}");
    }
    let mut j = model.to_json();
    let mut prov = info.provenance();
    prov["k"] = json!(cfg.k);
    if !bic.is_empty() {
        prov["bic"] = json!(bic);
    }
    j.provenance = Some(prov);
    write_json(&out, &j)?;
    eprintln!(
        "fitted {} with K = {} under a {}-edge tree",
        family.name(),
        cfg.k,
        tree.edge_count()
    );
    Ok(())
}

fn impute(a: ImputeArgs) -> Result<()> {
    let seed = required(&a.seed, "seed")?;
    let m = required(&a.m, "m")?;
    if m == 0 {
        return Err(usage("--m must be at least 1"));
    }
    let out = required(&a.out, "out")?;
    let data = read_data(&required(&a.data, "data")?)?;
    let model = read_model(&required(&a.model, "model")?)?;
    let info = RunInfo::new("impute", &a, Some(seed))?;
    let set = match a.method {
        ImputeMethod::Conjugate => impute_conjugate(&data, &model, m, seed)?,
        ImputeMethod::Rejection => {
            let mut cfg = RejectionConfig::default();
            if let Some(n) = a.max_attempts {
                cfg.max_attempts = n;
            }
            impute_rejection_from_model(&data, &model, m, &cfg, seed)?
        }
    };
    create_dir(&out)?;
    let mut outputs = Vec::with_capacity(m);
    for i in 0..m {
        let name = format!("imputed_{}.csv", i + 1);
        let mut buf = Vec::new();
        set.write_csv(i, &mut buf)?;
        atomic_write(&out.join(&name), &buf)?;
        outputs.push(name);
    }
    let mut v = info.provenance();
    v["outputs"] = json!(outputs);
    v["imputation"] = serde_json::to_value(&set.provenance).map_err(treetilt::Error::from)?;
    write_json(&out.join("provenance.json"), &v)?;
    eprintln!("wrote {m} imputations to {}", out.display());
    Ok(())
}

fn select_graph(a: SelectArgs) -> Result<()> {
    let method = required(&a.method, "method")?;
    let out = required(&a.out, "out")?;
    let data = read_data(&required(&a.data, "data")?)?;
    let needs_seed = matches!(method, SelectMethod::Parent | SelectMethod::Child);
    let seed = if needs_seed {
        Some(required(&a.seed, "seed")?)
    } else {
        a.seed
    };
    let info = RunInfo::new("select-graph", &a, seed)?;
    let pats = data.pattern_set();
    let scfg = || -> Result<SelectConfig> {
        let mut c = SelectConfig {
            em: em_config(&a.model),
            ..Default::default()
        };
        if let Some(k) = a.model.k {
            c.k = k;
        }
        if let Some(r) = a.model.min_rows {
            c.min_rows = r;
        }
        Ok(c)
    };
    let (tree, scores) = match method {
        SelectMethod::Ccmv => (build_ccmv(&pats)?, None),
        SelectMethod::Lncmv => (build_lncmv(&pats)?, None),
        SelectMethod::Rncmv => (build_rncmv(&pats)?, None),
        SelectMethod::Energy => {
            let (t, s) = select_energy(&data, &scfg()?)?;
            (t, Some(s))
        }
        SelectMethod::Parent | SelectMethod::Child => {
            let family = build_family(&a.model, &data)?;
            let seed = seed.unwrap();
            let (t, s) = if method == SelectMethod::Parent {
                select_parent_based(&data, &family, &scfg()?, seed)?
            } else {
                select_child_based(&data, &family, &scfg()?, seed)?
            };
            (t, Some(s))
        }
    };
    create_dir(&out)?;
    write_json(&out.join("tree.json"), &tree.to_json())?;
    let mut outputs = vec!["tree.json".to_string()];
    if let Some(s) = &scores {
        report_warnings(&s.warnings);
        write_text(&out.join("scores.csv"), &s.to_csv())?;
        outputs.push("scores.csv".into());
    }
    info.write_manifest(&out, &outputs)?;
    println!("{tree}");
    Ok(())
}

fn run_bootstrap(a: BootstrapArgs) -> Result<()> {
    let seed = required(&a.seed, "seed")?;
    let out = required(&a.out, "out")?;
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(usage("--level must lie in (0, 1)"));
    }
    let data = read_data(&required(&a.data, "data")?)?;
    let tree = resolve_tree(&required(&a.tree, "tree")?, &data)?;
    let family = build_family(&a.model, &data)?;
    let (fit, _) = fit_config(&a.model, &data, &family, seed)?;
    let mut cfg = BootstrapConfig::default();
    if let Some(b) = a.b {
        cfg.b = b;
    }
    if let Some(r) = a.retries {
        cfg.retries = r;
    }
    let info = RunInfo::new("bootstrap", &a, Some(seed))?;
    let (_, draws) = bootstrap(&data, &tree, &family, &fit, &cfg, seed)?;
    let method = match a.ci {
        CiKind::Normal => CiMethod::Normal,
        CiKind::Percentile => CiMethod::Percentile,
    };
    let block = covariance_block_check(&draws, &tree, a.block_threshold);
    create_dir(&out)?;
    write_text(&out.join("draws.csv"), &draws.to_csv())?;
    let failed: Vec<Value> = draws
        .failed
        .iter()
        .map(|(i, e)| json!({"replicate": i, "error": e}))
        .collect();
    let summary = json!({
        "provenance": info.provenance(),
        "replicates": draws.draws.len(),
        "failed": failed,
        "level": a.level,
        "ci": method,
        "intervals": draws.intervals(a.level, method),
        "block_check": block,
    });
    write_json(&out.join("summary.json"), &summary)?;
    info.write_manifest(&out, &["draws.csv".into(), "summary.json".into()])?;
    if !block.passed() {
        eprintln!(
            "warning: {} block pair(s) masked independent exceed |corr| {}",
            block.violations.len(),
            a.block_threshold
        );
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    #[serde(default)]
    rho: Vec<Vec<f64>>,
    #[serde(default)]
    trees: BTreeMap<String, TreeSource>,
    functional: Option<SweepFunctional>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TreeSource {
    Named(String),
    Graph(GraphJson),
}

fn sensitivity(a: SensitivityArgs) -> Result<()> {
    let out = required(&a.out, "out")?;
    let data = read_data(&required(&a.data, "data")?)?;
    let base = read_model(&required(&a.model, "model")?)?;
    let grid: GridFile = match &a.grid {
        Some(p) => read_json(p)?,
        None => GridFile {
            rho: vec![],
            trees: BTreeMap::new(),
            functional: None,
        },
    };
    let functional = match (a.coordinate, grid.functional) {
        (Some(c), _) => SweepFunctional::Mean { coordinate: c },
        (None, Some(f)) => f,
        (None, None) => return Err(usage("give --coordinate or a functional in the grid file")),
    };
    let pats = base.tree.patterns().clone();
    let mut trees = Vec::new();
    for (id, src) in grid.trees {
        let t = match src {
            TreeSource::Named(n) => match n.as_str() {
                "ccmv" => build_ccmv(&pats)?,
                "lncmv" => build_lncmv(&pats)?,
                "rncmv" => build_rncmv(&pats)?,
                other => return Err(usage(format!("tree {id:?}: unknown tree {other:?}"))),
            },
            TreeSource::Graph(g) => TreeGraph::from_json(&g)?,
        };
        trees.push((id, t));
    }
    let spec = SweepSpec { rho: grid.rho, trees };
    let info = RunInfo::new("sensitivity", &a, None)?;
    let rows = sweep(&data, &base, &spec, &functional, &FitConfig::default())?;
    write_with_meta(&out, &sweep_csv(&rows, base.family.dim()), &info)?;
    let failed = rows.iter().filter(|r| r.value.is_none()).count();
    if failed > 0 {
        eprintln!("warning: {failed} of {} cells failed", rows.len());
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let study = required(&a.study, "study")?;
    let seed = required(&a.seed, "seed")?;
    let out = required(&a.out, "out")?;
    let info = RunInfo::new("simulate", &a, Some(seed))?;
    let mut outputs: Vec<(String, String)> = Vec::new();
    let mut details = json!({});
    match study {
        StudyKind::Consistency | StudyKind::Coverage | StudyKind::Recovery => {
            let mut cfg = StudyConfig::default();
            if let Some(g) = &a.n_grid {
                cfg.n_grid = parse_list(g, "n-grid")?;
            }
            if let Some(u) = a.u {
                cfg.u = u;
            }
            if let Some(b) = a.b {
                cfg.b = b;
            }
            if let Some(k) = a.k {
                cfg.k = k;
            }
            if let Some(r) = a.restarts {
                cfg.em_restarts = r;
            }
            if let Some(c) = a.confidence {
                cfg.confidence = c;
            }
            let gen = match &a.generator {
                Some(p) => GeneratorConfig::from_json(&read_json::<GeneratorJson>(p)?)?,
                None => GeneratorConfig::appendix_b(),
            };
            details["study_config"] = serde_json::to_value(&cfg).map_err(treetilt::Error::from)?;
            details["generator"] = serde_json::to_value(gen.to_json()?).map_err(treetilt::Error::from)?;
            match study {
                StudyKind::Consistency => {
                    outputs.push(("mse.csv".into(), mse_csv(&run_consistency(&gen, &cfg, seed)?)))
                }
                StudyKind::Coverage => {
                    outputs.push(("coverage.csv".into(), coverage_csv(&run_coverage(&gen, &cfg, seed)?)))
                }
                _ => outputs.push(("recovery.csv".into(), recovery_csv(&run_recovery(&gen, &cfg, seed)?))),
            }
        }
        StudyKind::KdeMnar | StudyKind::KdeMar => {
            let mut cfg = KdeStudyConfig::default();
            if let Some(i) = a.iterations {
                cfg.iterations = i;
            }
            if let Some(n) = a.n {
                cfg.n = n;
            }
            let complete = match &a.data {
                Some(p) => {
                    let ds = read_data(p)?;
                    if ds.complete_rows().len() != ds.len() {
                        return Err(usage(format!("{}: the KDE studies need complete data", p.display())));
                    }
                    ds.complete_rows()
                }
                None => synthetic_continuous(cfg.n, derive_key(seed, &[0xDA7A])),
            };
            let complete = standardize(&complete);
            let mar = study == StudyKind::KdeMar;
            let mech = if mar {
                kde_mar_mechanism()
            } else {
                kde_mnar_mechanism()?
            };
            details["study_config"] = serde_json::to_value(&cfg).map_err(treetilt::Error::from)?;
            details["rows"] = json!(complete.len());
            let report = run_kde_study(&complete, &mech, mar, &cfg, seed)?;
            outputs.push(("densities.csv".into(), report.densities_csv()));
            outputs.push(("summary.csv".into(), report.summary_csv()));
            if mar {
                outputs.push(("trees.csv".into(), report.trees_csv()));
            }
        }
    }
    create_dir(&out)?;
    for (name, text) in &outputs {
        write_text(&out.join(name), text)?;
    }
    let mut v = info.provenance();
    v["outputs"] = json!(outputs.iter().map(|(n, _)| n).collect::<Vec<_>>());
    v["study"] = details;
    write_json(&out.join("config.json"), &v)?;
    Ok(())
}

fn count(a: CountArgs) -> Result<()> {
    let n = match (a.d, &a.patterns) {
        (Some(d), None) => {
            if d == 0 || d > 16 {
                return Err(usage("--d must be between 1 and 16"));
            }
            count_trees(d)?
        }
        _ => count_trees_over(&pattern_set(a.d, &a.patterns)?)?,
    };
    println!("{n}");
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PmfEntry {
    tree: GraphJson,
    weight: f64,
}

fn sample(a: SampleArgs) -> Result<()> {
    let seed = required(&a.seed, "seed")?;
    let pats = pattern_set(a.d, &a.patterns)?;
    let mut rng = seeded(seed);
    let tree = match &a.pmf {
        None => sample_tree_uniform(&pats, &mut rng)?,
        Some(p) => {
            let entries: Vec<PmfEntry> = read_json(p)?;
            let mut pmf = BTreeMap::new();
            for e in entries {
                *pmf.entry(TreeGraph::from_json(&e.tree)?).or_insert(0.0) += e.weight;
            }
            sample_tree_pmf(&pats, &pmf, &mut rng)?
        }
    };
    let mut text = serde_json::to_string_pretty(&tree.to_json()).map_err(treetilt::Error::from)?;
    text.push('\n');
    match &a.out {
        Some(out) => write_with_meta(out, &text, &RunInfo::new("sample-tree", &a, Some(seed))?)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn validate_graph(a: ValidateArgs) -> Result<()> {
    let path = required(&a.tree, "tree")?;
    let g = PatternGraph::from_json(&read_json::<GraphJson>(&path)?)?;
    let report = validate(&g);
    if !report.is_ok() {
        for v in &report.violations {
            println!("violation: {v}");
        }
        return Err(CliError::Model(format!(
            "{} is not a tree graph ({} violation(s))",
            path.display(),
            report.violations.len()
        )));
    }
    let tree = TreeGraph::from_json(&g.to_json())?;
    println!(
        "valid tree graph: {} patterns, {} edges, depth {}",
        tree.patterns().len(),
        tree.edge_count(),
        tree.depth()
    );
    let moral = tree.sibling_moral_graph();
    for c in &moral.cliques {
        let names: Vec<String> = c.iter().map(|p| p.to_string()).collect();
        println!("clique: {}", names.join(" "));
    }
    Ok(())
}
