//! Data generation from known tree-graph mechanisms and the simulation
//! studies built on it.
//!
//! Parametric generators draw `R` from the target pattern marginals and then
//! `x` from the pattern's tilted mixture; intercepts are fixed in closed form
//! so that the implied marginals equal the targets exactly. The KDE studies
//! start from a complete continuous dataset and impose missingness through a
//! multinomial-logit selection model whose intercepts are solved numerically.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{kde_fit, normal_log_pdf, silverman, Family, MixtureModel};
use crate::fitting::{fit_full, EmConfig, FitConfig, FittedFullModel, ParamGroup};
use crate::graphselect::{select_child_based, select_energy, select_parent_based, SelectConfig};
use crate::inference::{bootstrap, BootstrapConfig, CiMethod};
use crate::numeric::{log_sum_exp, normal_quantile};
use crate::odds::{EdgeOddsJson, EdgeOddsModel};
use crate::par::map_indexed;
use crate::pattern::{format_value, IncompleteDataset, MissingPattern};
use crate::rng::{derive_key, stream};
use crate::treegraph::{GraphJson, TreeGraph};

fn pat(s: &str) -> MissingPattern {
    s.parse().expect("valid pattern literal")
}

/// Known full-data law: complete-case mixture, tree, per-edge log-odds
/// coefficients on the sufficient statistics, and pattern marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub truth: MixtureModel,
    pub tree: TreeGraph,
    /// Edge coefficients indexed by child, over the full statistic vector.
    pub edge_coefficients: BTreeMap<MissingPattern, Vec<f64>>,
    pub pattern_probs: BTreeMap<MissingPattern, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorJson {
    pub truth: MixtureModel,
    pub tree: GraphJson,
    /// Intercepts are ignored (they are solved from `pattern_probs`).
    pub edges: Vec<EdgeOddsJson>,
    pub pattern_probs: BTreeMap<String, f64>,
}

impl GeneratorConfig {
    /// Binomial-product design with three variables: 17 trials each, three
    /// components, six patterns, and logistic edge odds.
    pub fn appendix_b() -> Self {
        let mut pm = BTreeMap::new();
        for (c, p) in [
            ("110", "111"),
            ("101", "111"),
            ("100", "101"),
            ("010", "110"),
            ("001", "101"),
        ] {
            pm.insert(pat(c), pat(p));
        }
        let pats: Vec<MissingPattern> = ["111", "110", "101", "100", "010", "001"]
            .iter()
            .map(|s| pat(s))
            .collect();
        let tree = TreeGraph::from_parent_map(3, pats, pm).expect("valid tree");
        Self::appendix_b_with_tree(tree).expect("valid design")
    }

    /// The same design with another tree over the same patterns; each child
    /// keeps its edge coefficients.
    pub fn appendix_b_with_tree(tree: TreeGraph) -> Result<Self> {
        let family = Family::BinomialProduct { trials: vec![17; 3] };
        let truth = MixtureModel::from_mean_params(
            family,
            vec![0.3, 0.5, 0.2],
            &[vec![0.70, 0.75, 0.70], vec![0.50, 0.50, 0.40], vec![0.20, 0.30, 0.10]],
        )?;
        let coef: BTreeMap<MissingPattern, Vec<f64>> = [
            ("110", vec![0.1, 0.1, 0.0]),
            ("101", vec![0.3, 0.0, 0.1]),
            ("100", vec![-0.1, 0.0, 0.0]),
            ("010", vec![0.0, 0.1, 0.0]),
            ("001", vec![0.0, 0.0, 0.1]),
        ]
        .into_iter()
        .map(|(p, c)| (pat(p), c))
        .collect();
        let probs = [
            ("111", 0.3),
            ("110", 0.2),
            ("101", 0.1),
            ("100", 0.15),
            ("010", 0.15),
            ("001", 0.1),
        ]
        .into_iter()
        .map(|(p, v)| (pat(p), v))
        .collect();
        let cfg = Self {
            truth,
            tree,
            edge_coefficients: coef,
            pattern_probs: probs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn family(&self) -> &Family {
        self.truth.family()
    }

    pub fn validate(&self) -> Result<()> {
        let fam = self.family();
        if fam.dim() != self.tree.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.tree.dim(),
                got: fam.dim(),
            });
        }
        let mut total = 0.0;
        for r in self.tree.patterns() {
            let p = self.pattern_probs.get(r).copied().unwrap_or(0.0);
            if !(p > 0.0) {
                return Err(Error::Config(format!("pattern {r} needs a positive probability")));
            }
            total += p;
        }
        if self.pattern_probs.keys().any(|r| !self.tree.contains(r)) {
            return Err(Error::Config(
                "pattern probability given for a pattern outside the tree".into(),
            ));
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("pattern probabilities sum to {total}, not 1")));
        }
        for (c, p) in self.tree.parent_map() {
            let v = self
                .edge_coefficients
                .get(c)
                .ok_or_else(|| Error::Config(format!("no coefficients for edge {c}<-{p}")))?;
            EdgeOddsModel::new(fam, *c, *p, 0.0, v.clone())?;
        }
        Ok(())
    }

    /// The true full model: edge intercepts solved in closed form so that
    /// `P(R = r)` equals the targets, and every pattern's tilted mixture.
    pub fn oracle(&self) -> Result<FittedFullModel> {
        self.validate()?;
        let fam = self.family().clone();
        let src = self.tree.source();
        let p_src = self.pattern_probs[&src];
        // composed coefficients and log P(r)/P(1_d) intercepts against 1_d
        let mut lam: BTreeMap<MissingPattern, Vec<f64>> = BTreeMap::new();
        let mut lam0: BTreeMap<MissingPattern, f64> = BTreeMap::new();
        for r in self.tree.patterns() {
            let mut c = vec![0.0; fam.n_stats()];
            for s in self.tree.path_to_source(r)?.iter().filter(|s| !s.is_complete()) {
                for (a, b) in c.iter_mut().zip(&self.edge_coefficients[s]) {
                    *a += b;
                }
            }
            let mut terms = Vec::with_capacity(self.truth.k());
            for (w, eta) in self.truth.weights().iter().zip(self.truth.components()) {
                let e2: Vec<f64> = eta.iter().zip(&c).map(|(a, b)| a + b).collect();
                if let Some((j, why)) = fam.domain_error(&e2) {
                    return Err(Error::Config(format!(
                        "pattern {r}: composed odds leave the family domain at coordinate {}: {why}",
                        j + 1
                    )));
                }
                terms.push(w.ln() + fam.log_partition(&e2) - fam.log_partition(eta));
            }
            let l0 = if r.is_complete() {
                0.0
            } else {
                (self.pattern_probs[r] / p_src).ln() - log_sum_exp(&terms)
            };
            lam.insert(*r, c);
            lam0.insert(*r, l0);
        }
        let mut edges = BTreeMap::new();
        for (c, p) in self.tree.parent_map() {
            let e = EdgeOddsModel::new(&fam, *c, *p, lam0[c] - lam0[p], self.edge_coefficients[c].clone())?;
            edges.insert(*c, e);
        }
        let mut truth = self.truth.clone();
        truth.canonicalize();
        FittedFullModel::assemble(self.tree.clone(), truth, edges, self.pattern_probs.clone())
    }

    pub fn to_json(&self) -> Result<GeneratorJson> {
        let oracle = self.oracle()?;
        Ok(GeneratorJson {
            truth: self.truth.clone(),
            tree: self.tree.to_json(),
            edges: oracle.edges.values().map(|e| e.to_json(self.family())).collect(),
            pattern_probs: self.pattern_probs.iter().map(|(r, p)| (r.to_string(), *p)).collect(),
        })
    }

    pub fn from_json(j: &GeneratorJson) -> Result<Self> {
        let tree = TreeGraph::from_json(&j.tree)?;
        let fam = j.truth.family();
        let mut coef = BTreeMap::new();
        for e in &j.edges {
            let m = EdgeOddsModel::from_json(fam, e)?;
            if tree.parent(&m.child) != Some(m.parent) {
                return Err(Error::Config(format!(
                    "edge {}<-{} is not in the tree",
                    m.child, m.parent
                )));
            }
            coef.insert(m.child, m.coefficients);
        }
        let mut probs = BTreeMap::new();
        for (k, v) in &j.pattern_probs {
            probs.insert(k.parse::<MissingPattern>()?, *v);
        }
        let cfg = Self {
            truth: j.truth.clone(),
            tree,
            edge_coefficients: coef,
            pattern_probs: probs,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `n` rows: pattern from the marginals, then values from that pattern's
/// tilted mixture. Returns the data and the true model.
pub fn generate(cfg: &GeneratorConfig, n: usize, seed: u64) -> Result<(IncompleteDataset, FittedFullModel)> {
    let oracle = cfg.oracle()?;
    let pats: Vec<MissingPattern> = cfg.pattern_probs.keys().copied().collect();
    let cum: Vec<f64> = cfg
        .pattern_probs
        .values()
        .scan(0.0, |a, p| {
            *a += p;
            Some(*a)
        })
        .collect();
    let models: Vec<&MixtureModel> = pats.iter().map(|r| oracle.derived(r)).collect::<Result<_>>()?;
    let mut rng = stream(seed, &[0x6E4]);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
        let i = cum.iter().position(|c| u < *c).unwrap_or(pats.len() - 1);
        let x = models[i].sample(&mut rng);
        let r = pats[i];
        rows.push((0..x.len()).map(|j| r.is_observed(j).then_some(x[j])).collect());
    }
    Ok((IncompleteDataset::from_rows(rows)?, oracle))
}

// ---------------------------------------------------------------------------
// x-first mechanisms

/// Multinomial-logit selection with `1_d` as baseline:
/// `log P(R = r | x) / P(R = 1_d | x) = a_r + b_r . x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionLogits {
    pub patterns: Vec<MissingPattern>,
    pub slopes: Vec<Vec<f64>>,
    /// Target marginals for `patterns`; `1_d` receives the remainder.
    pub targets: Vec<f64>,
}

impl SelectionLogits {
    /// Tree-structured linear odds: each pattern's slope is the sum of the
    /// edge slopes on its path from `1_d`.
    pub fn from_tree(
        tree: &TreeGraph,
        edge_slopes: &BTreeMap<MissingPattern, Vec<f64>>,
        targets: &BTreeMap<MissingPattern, f64>,
    ) -> Result<Self> {
        let d = tree.dim();
        let mut patterns = Vec::new();
        let mut slopes = Vec::new();
        let mut t = Vec::new();
        for r in tree.patterns().iter().filter(|r| !r.is_complete()) {
            let mut b = vec![0.0; d];
            for s in tree.path_to_source(r)?.iter().filter(|s| !s.is_complete()) {
                let e = edge_slopes
                    .get(s)
                    .ok_or_else(|| Error::Config(format!("no slopes for edge into {s}")))?;
                for j in s.missing() {
                    if e[j] != 0.0 {
                        return Err(Error::Config(format!(
                            "edge into {s} uses missing coordinate {}",
                            j + 1
                        )));
                    }
                }
                for (a, v) in b.iter_mut().zip(e) {
                    *a += v;
                }
            }
            patterns.push(*r);
            slopes.push(b);
            t.push(
                *targets
                    .get(r)
                    .ok_or_else(|| Error::Config(format!("no target for {r}")))?,
            );
        }
        Ok(Self {
            patterns,
            slopes,
            targets: t,
        })
    }

    fn probs(&self, a: &[f64], x: &[f64], out: &mut [f64]) {
        let mut lz = vec![0.0; self.patterns.len() + 1];
        for (i, b) in self.slopes.iter().enumerate() {
            lz[i + 1] = a[i] + b.iter().zip(x).map(|(u, v)| u * v).sum::<f64>();
        }
        let m = log_sum_exp(&lz);
        for (o, l) in out.iter_mut().zip(&lz) {
            *o = (l - m).exp();
        }
    }

    /// Intercepts such that the average selection probabilities over `xs`
    /// equal the targets to `1e-10`.
    pub fn solve_intercepts(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let k = self.patterns.len();
        let t0 = 1.0 - self.targets.iter().sum::<f64>();
        if !(t0 > 0.0) || self.targets.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config(
                "selection targets must be positive and sum below 1".into(),
            ));
        }
        let mut a: Vec<f64> = self.targets.iter().map(|t| (t / t0).ln()).collect();
        let mut buf = vec![0.0; k + 1];
        let mut resid = vec![0.0; k + 1];
        for _ in 0..10_000 {
            let mut mean = vec![0.0; k + 1];
            for x in xs {
                self.probs(&a, x, &mut buf);
                for (m, b) in mean.iter_mut().zip(&buf) {
                    *m += b;
                }
            }
            for m in &mut mean {
                *m /= xs.len() as f64;
            }
            resid[0] = mean[0] - t0;
            for i in 0..k {
                resid[i + 1] = mean[i + 1] - self.targets[i];
            }
            if resid.iter().all(|r| r.abs() < 1e-10) {
                return Ok(a);
            }
            for i in 0..k {
                a[i] += (self.targets[i] / mean[i + 1]).ln() - (t0 / mean[0]).ln();
            }
        }
        Err(Error::Fit(format!(
            "selection intercepts did not converge; residuals {}",
            resid.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>().join(", ")
        )))
    }

    /// Masks each row of `xs` with a pattern drawn from the selection model.
    pub fn impose(&self, xs: &[Vec<f64>], intercepts: &[f64], seed: u64) -> Result<IncompleteDataset> {
        let d = xs.first().map_or(0, Vec::len);
        let full = MissingPattern::complete(d);
        let mut rng = stream(seed, &[0x5E1]);
        let mut buf = vec![0.0; self.patterns.len() + 1];
        let rows = xs
            .iter()
            .map(|x| {
                self.probs(intercepts, x, &mut buf);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut r = full;
                for (i, p) in buf.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        r = if i == 0 { full } else { self.patterns[i - 1] };
                        break;
                    }
                }
                (0..d).map(|j| r.is_observed(j).then_some(x[j])).collect()
            })
            .collect();
        IncompleteDataset::from_rows(rows)
    }
}

/// Deepest tree over `{111, 110, 101, 001}`: `110, 101 <- 111`, `001 <- 101`.
pub fn kde_tree() -> TreeGraph {
    let mut pm = BTreeMap::new();
    pm.insert(pat("110"), pat("111"));
    pm.insert(pat("101"), pat("111"));
    pm.insert(pat("001"), pat("101"));
    TreeGraph::from_parent_map(
        3,
        ["111", "110", "101", "001"].iter().map(|s| pat(s)).collect::<Vec<_>>(),
        pm,
    )
    .expect("valid tree")
}

/// MNAR mechanism for the KDE study: linear odds on [`kde_tree`].
pub fn kde_mnar_mechanism() -> Result<SelectionLogits> {
    let slopes = [
        ("110", vec![0.5, -0.4, 0.0]),
        ("101", vec![-0.5, 0.0, 0.4]),
        ("001", vec![0.0, 0.0, 0.6]),
    ]
    .into_iter()
    .map(|(p, v)| (pat(p), v))
    .collect();
    let targets = [("110", 0.3), ("101", 0.2), ("001", 0.2)]
        .into_iter()
        .map(|(p, v)| (pat(p), v))
        .collect();
    SelectionLogits::from_tree(&kde_tree(), &slopes, &targets)
}

/// Linear selection for the MAR KDE study: each pattern's odds against
/// `1_d` depend on its own observed coordinates only.
pub fn kde_mar_mechanism() -> SelectionLogits {
    SelectionLogits {
        patterns: vec![pat("110"), pat("101"), pat("001")],
        slopes: vec![vec![0.6, -0.3, 0.0], vec![-0.6, 0.0, 0.3], vec![0.0, 0.0, 0.8]],
        targets: vec![0.3, 0.2, 0.2],
    }
}

/// Column-wise standardization to mean 0 and standard deviation 1.
pub fn standardize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    let cols: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let c: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let m = crate::numeric::mean(&c);
            let s = crate::numeric::sd(&c);
            (m, if s > 0.0 { s } else { 1.0 })
        })
        .collect();
    rows.iter()
        .map(|r| r.iter().zip(&cols).map(|(v, (m, s))| (v - m) / s).collect())
        .collect()
}

/// Skewed, correlated three-variable continuous data, standardized.
pub fn synthetic_continuous(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let fam = Family::GaussianDiag { d: 3 };
    let base = MixtureModel::from_mean_params(
        fam,
        vec![0.55, 0.3, 0.15],
        &[
            vec![-0.4, 0.5, 0.0, 0.6, -0.5, 0.4],
            vec![0.6, 0.8, 0.4, 1.0, 0.3, 0.7],
            vec![1.4, 1.2, 1.5, 0.5, 1.6, 1.0],
        ],
    )
    .expect("valid mixture");
    let mut rng = stream(seed, &[0xC0]);
    let z = base.sample_n(n, &mut rng);
    let rows: Vec<Vec<f64>> = z
        .iter()
        .map(|v| vec![v[0], 0.4 * v[0] + v[1], -0.3 * v[1] + v[2] + 0.2 * v[0]])
        .collect();
    standardize(&rows)
}

// ---------------------------------------------------------------------------
// studies

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Consistency,
    Coverage,
    Recovery,
    KdeMnar,
    KdeMar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub n_grid: Vec<usize>,
    /// Outer replicates per grid cell.
    pub u: usize,
    /// Bootstrap replicates (coverage only).
    pub b: usize,
    /// Mixture components of the fitted models.
    pub k: usize,
    pub em_restarts: usize,
    pub confidence: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![500, 1000, 2000, 5000, 10000],
            u: 50,
            b: 200,
            k: 3,
            em_restarts: 10,
            confidence: 0.95,
        }
    }
}

impl StudyConfig {
    fn fit_config(&self) -> FitConfig {
        FitConfig {
            k: self.k,
            em: EmConfig {
                restarts: self.em_restarts,
                ..Default::default()
            },
            ..Default::default()
        }
    }
}

/// Parameter groups reported by the studies.
pub const GROUPS: [&str; 4] = ["theta", "w", "beta", "beta0"];

fn group_name(g: ParamGroup) -> &'static str {
    match g {
        ParamGroup::Theta => "theta",
        ParamGroup::Weight => "w",
        ParamGroup::Coefficient => "beta",
        ParamGroup::Intercept => "beta0",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseRow {
    pub n: usize,
    pub group: String,
    /// Mean squared error times 100, over parameters and replicates.
    pub mse_x100: f64,
    pub replicates: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub n: usize,
    pub group: String,
    pub coverage: f64,
    pub intervals: usize,
    pub replicates: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryRow {
    pub n: usize,
    pub method: String,
    pub tree: String,
    pub count: usize,
    pub is_true: bool,
}

/// A named CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub csv: String,
}

fn replicate_seed(seed: u64, n: usize, u: usize) -> u64 {
    derive_key(seed, &[n as u64, u as u64])
}

/// Squared errors of one fit against the truth, by group.
fn squared_errors(fit: &FittedFullModel, truth: &FittedFullModel) -> Result<BTreeMap<&'static str, Vec<f64>>> {
    let tp: BTreeMap<String, (ParamGroup, f64)> = truth
        .parameters()
        .into_iter()
        .map(|p| (p.name, (p.group, p.value)))
        .collect();
    let mut out: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for p in fit.parameters() {
        let (g, v) = tp
            .get(&p.name)
            .ok_or_else(|| Error::Fit(format!("parameter {} has no true value", p.name)))?;
        out.entry(group_name(*g)).or_default().push((p.value - v).powi(2));
    }
    Ok(out)
}

/// MSE x 100 of the point estimates under the true tree.
pub fn run_consistency(gen: &GeneratorConfig, cfg: &StudyConfig, seed: u64) -> Result<Vec<MseRow>> {
    let fit_cfg = cfg.fit_config();
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        let reps = map_indexed(cfg.u, |u| -> Result<BTreeMap<&'static str, Vec<f64>>> {
            let s = replicate_seed(seed, n, u);
            let (data, truth) = generate(gen, n, s)?;
            let fit = fit_full(&data, &gen.tree, gen.family(), &fit_cfg, derive_key(s, &[1]))?;
            squared_errors(&fit, &truth)
        });
        let failed = reps.iter().filter(|r| r.is_err()).count();
        let ok: Vec<_> = reps.into_iter().filter_map(|r| r.ok()).collect();
        for g in GROUPS {
            let all: Vec<f64> = ok.iter().filter_map(|m| m.get(g)).flatten().copied().collect();
            if all.is_empty() {
                continue;
            }
            rows.push(MseRow {
                n,
                group: g.into(),
                mse_x100: 100.0 * all.iter().sum::<f64>() / all.len() as f64,
                replicates: ok.len(),
                failed,
            });
        }
    }
    Ok(rows)
}

/// Fraction of normal bootstrap intervals covering the truth.
pub fn run_coverage(gen: &GeneratorConfig, cfg: &StudyConfig, seed: u64) -> Result<Vec<CoverageRow>> {
    let fit_cfg = cfg.fit_config();
    let bcfg = BootstrapConfig {
        b: cfg.b,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        let reps = map_indexed(cfg.u, |u| -> Result<BTreeMap<&'static str, (usize, usize)>> {
            let s = replicate_seed(seed, n, u);
            let (data, truth) = generate(gen, n, s)?;
            let (_, draws) = bootstrap(&data, &gen.tree, gen.family(), &fit_cfg, &bcfg, derive_key(s, &[2]))?;
            let tv: BTreeMap<String, f64> = truth.parameters().into_iter().map(|p| (p.name, p.value)).collect();
            let mut out: BTreeMap<&'static str, (usize, usize)> = BTreeMap::new();
            for (info, iv) in draws
                .params
                .iter()
                .zip(draws.intervals(cfg.confidence, CiMethod::Normal))
            {
                let t = tv[&info.name];
                let e = out.entry(group_name(info.group)).or_default();
                e.1 += 1;
                if iv.lower <= t && t <= iv.upper {
                    e.0 += 1;
                }
            }
            Ok(out)
        });
        let failed = reps.iter().filter(|r| r.is_err()).count();
        let ok: Vec<_> = reps.into_iter().filter_map(|r| r.ok()).collect();
        for g in GROUPS {
            let (hit, tot) = ok
                .iter()
                .filter_map(|m| m.get(g))
                .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
            if tot == 0 {
                continue;
            }
            rows.push(CoverageRow {
                n,
                group: g.into(),
                coverage: hit as f64 / tot as f64,
                intervals: tot,
                replicates: ok.len(),
                failed,
            });
        }
    }
    Ok(rows)
}

/// Frequencies of the trees learned by parent- and child-based selection.
pub fn run_recovery(gen: &GeneratorConfig, cfg: &StudyConfig, seed: u64) -> Result<Vec<RecoveryRow>> {
    let scfg = SelectConfig {
        k: cfg.k,
        em: EmConfig {
            restarts: cfg.em_restarts,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        let reps = map_indexed(cfg.u, |u| -> Result<(TreeGraph, TreeGraph)> {
            let s = replicate_seed(seed, n, u);
            let (data, _) = generate(gen, n, s)?;
            let (tp, _) = select_parent_based(&data, gen.family(), &scfg, derive_key(s, &[3]))?;
            let (tc, _) = select_child_based(&data, gen.family(), &scfg, derive_key(s, &[3]))?;
            Ok((tp, tc))
        });
        let mut counts: BTreeMap<(&str, TreeGraph), usize> = BTreeMap::new();
        let mut failed = 0;
        for r in reps {
            match r {
                Ok((tp, tc)) => {
                    *counts.entry(("parent", tp)).or_default() += 1;
                    *counts.entry(("child", tc)).or_default() += 1;
                }
                Err(_) => failed += 1,
            }
        }
        for ((method, tree), count) in counts {
            rows.push(RecoveryRow {
                n,
                method: method.into(),
                is_true: tree == gen.tree,
                tree: tree.to_string(),
                count,
            });
        }
        if failed > 0 {
            rows.push(RecoveryRow {
                n,
                method: "failed".into(),
                tree: String::new(),
                count: failed,
                is_true: false,
            });
        }
    }
    Ok(rows)
}

/// Fraction of replicates where `method` learned the true tree.
pub fn recovery_rate(rows: &[RecoveryRow], n: usize, method: &str, u: usize) -> f64 {
    rows.iter()
        .filter(|r| r.n == n && r.method == method && r.is_true)
        .map(|r| r.count)
        .sum::<usize>() as f64
        / u as f64
}

pub fn mse_csv(rows: &[MseRow]) -> String {
    let mut s = String::from("n,group,mse_x100,replicates,failed\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.n,
            r.group,
            format_value(r.mse_x100),
            r.replicates,
            r.failed
        ));
    }
    s
}

pub fn coverage_csv(rows: &[CoverageRow]) -> String {
    let mut s = String::from("n,group,coverage,intervals,replicates,failed\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n,
            r.group,
            format_value(r.coverage),
            r.intervals,
            r.replicates,
            r.failed
        ));
    }
    s
}

pub fn recovery_csv(rows: &[RecoveryRow]) -> String {
    let mut s = String::from("n,method,tree,count,is_true\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},\"{}\",{},{}\n",
            r.n, r.method, r.tree, r.count, r.is_true
        ));
    }
    s
}

// ---------------------------------------------------------------------------
// KDE studies

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeStudyConfig {
    pub iterations: usize,
    /// Rows of synthetic data when no dataset is supplied.
    pub n: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
}

impl Default for KdeStudyConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            n: 4898,
            grid_min: -4.0,
            grid_max: 4.0,
            grid_points: 161,
        }
    }
}

pub const KDE_ESTIMATORS: [&str; 4] = ["oracle", "tree-graph", "complete-case", "available-case"];

#[derive(Debug, Clone, PartialEq)]
pub struct KdeStudyReport {
    pub grid: Vec<f64>,
    /// `(pattern, dim, estimator) -> density on the grid`, averaged over
    /// iterations.
    pub densities: BTreeMap<(MissingPattern, usize, String), Vec<f64>>,
    /// Mean L1 distance to the oracle density per cell.
    pub l1: BTreeMap<(MissingPattern, usize, String), f64>,
    /// Learned-tree frequencies (MAR study only).
    pub learned_trees: BTreeMap<String, usize>,
    pub iterations: usize,
}

impl KdeStudyReport {
    pub fn densities_csv(&self) -> String {
        let mut s = String::from("pattern,dim,estimator,x,density\n");
        for ((r, j, e), v) in &self.densities {
            for (x, y) in self.grid.iter().zip(v) {
                s.push_str(&format!(
                    "{r},{},{e},{},{}\n",
                    j + 1,
                    format_value(*x),
                    format_value(*y)
                ));
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("pattern,dim,estimator,mean,l1_to_oracle\n");
        let dx = self.grid[1] - self.grid[0];
        for ((r, j, e), v) in &self.densities {
            let mass: f64 = v.iter().sum::<f64>() * dx;
            let m: f64 = self.grid.iter().zip(v).map(|(x, y)| x * y).sum::<f64>() * dx / mass;
            let l1 = self.l1.get(&(*r, *j, e.clone())).copied().unwrap_or(0.0);
            s.push_str(&format!("{r},{},{e},{},{}\n", j + 1, format_value(m), format_value(l1)));
        }
        s
    }

    pub fn trees_csv(&self) -> String {
        let mut s = String::from("tree,count\n");
        for (t, c) in &self.learned_trees {
            s.push_str(&format!("\"{t}\",{c}\n"));
        }
        s
    }
}

/// Marginal density of coordinate `j` of a Gaussian-family mixture.
fn gaussian_marginal(m: &MixtureModel, j: usize, grid: &[f64]) -> Vec<f64> {
    let r = m.family().stat_range(j);
    let comps: Vec<(f64, f64, f64)> = m
        .weights()
        .iter()
        .zip(m.components())
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, eta)| {
            let var = -0.5 / eta[r.start + 1];
            (w.ln(), eta[r.start] * var, var)
        })
        .collect();
    grid.iter()
        .map(|x| {
            let t: Vec<f64> = comps
                .iter()
                .map(|(lw, mu, v)| lw + normal_log_pdf(*x, *mu, *v))
                .collect();
            log_sum_exp(&t).exp()
        })
        .collect()
}

fn kde_1d(values: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
    Ok(gaussian_marginal(&kde_fit(&rows, None)?, 0, grid))
}

/// Marginal KDE comparison under an imposed selection mechanism. With
/// `mar`, the tree is learned by energy selection each iteration; otherwise
/// the generating tree is used.
pub fn run_kde_study(
    complete: &[Vec<f64>],
    mechanism: &SelectionLogits,
    mar: bool,
    cfg: &KdeStudyConfig,
    seed: u64,
) -> Result<KdeStudyReport> {
    if cfg.grid_points < 2 || !(cfg.grid_max > cfg.grid_min) {
        return Err(Error::Config("KDE grid needs at least two points and max > min".into()));
    }
    let d = complete.first().map_or(0, Vec::len);
    if d != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: d });
    }
    let grid: Vec<f64> = (0..cfg.grid_points)
        .map(|i| cfg.grid_min + (cfg.grid_max - cfg.grid_min) * i as f64 / (cfg.grid_points - 1) as f64)
        .collect();
    let dx = grid[1] - grid[0];
    let intercepts = mechanism.solve_intercepts(complete)?;
    let fit_cfg = FitConfig {
        odds: crate::odds::OddsConfig {
            freeze_quadratic: true,
            ..Default::default()
        },
        ..Default::default()
    };
    type Cell = ((MissingPattern, usize, String), Vec<f64>);
    let iters = map_indexed(cfg.iterations, |it| -> Result<(Vec<Cell>, String)> {
        let s = derive_key(seed, &[0x4DE, it as u64]);
        let data = mechanism.impose(complete, &intercepts, s)?;
        let tree = if mar {
            select_energy(&data, &SelectConfig::default())?.0
        } else {
            kde_tree()
        };
        let cc = data.complete_rows();
        let fam = Family::GaussianKde {
            bandwidth: silverman(&cc),
        };
        let model = fit_full(&data, &tree, &fam, &fit_cfg, s)?;
        let mut cells = Vec::new();
        for r in &mechanism.patterns {
            let idx = data.indices_with_pattern(r);
            let truth_rows: Vec<Vec<f64>> = idx.iter().map(|&i| complete[i].clone()).collect();
            let oracle = kde_fit(&truth_rows, None)?;
            let derived = model.derived(r)?;
            for j in 0..3 {
                let avail: Vec<f64> = data.rows().iter().filter_map(|row| row[j]).collect();
                let est = [
                    ("oracle", gaussian_marginal(&oracle, j, &grid)),
                    ("tree-graph", gaussian_marginal(derived, j, &grid)),
                    ("complete-case", gaussian_marginal(&model.cc_model, j, &grid)),
                    ("available-case", kde_1d(&avail, &grid)?),
                ];
                for (name, v) in est {
                    cells.push(((*r, j, name.to_string()), v));
                }
            }
        }
        Ok((cells, tree.to_string()))
    });
    let mut densities: BTreeMap<(MissingPattern, usize, String), Vec<f64>> = BTreeMap::new();
    let mut l1: BTreeMap<(MissingPattern, usize, String), f64> = BTreeMap::new();
    let mut learned = BTreeMap::new();
    let n_it = iters.len() as f64;
    for it in iters {
        let (cells, tree) = it?;
        *learned.entry(tree).or_insert(0) += 1;
        let oracle: BTreeMap<(MissingPattern, usize), Vec<f64>> = cells
            .iter()
            .filter(|((_, _, e), _)| e == "oracle")
            .map(|((r, j, _), v)| ((*r, *j), v.clone()))
            .collect();
        for ((r, j, e), v) in cells {
            let o = &oracle[&(r, j)];
            let dist: f64 = v.iter().zip(o).map(|(a, b)| (a - b).abs()).sum::<f64>() * dx;
            *l1.entry((r, j, e.clone())).or_insert(0.0) += dist / n_it;
            let acc = densities.entry((r, j, e)).or_insert_with(|| vec![0.0; grid.len()]);
            for (a, b) in acc.iter_mut().zip(&v) {
                *a += b / n_it;
            }
        }
    }
    Ok(KdeStudyReport {
        grid,
        densities,
        l1,
        learned_trees: if mar { learned } else { BTreeMap::new() },
        iterations: cfg.iterations,
    })
}

/// z for a two-sided interval at `level`.
pub fn z_value(level: f64) -> f64 {
    normal_quantile(0.5 + level / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_matches_targets_and_normalizes() {
        let g = GeneratorConfig::appendix_b();
        let o = g.oracle().unwrap();
        let fam = g.family();
        // implied P(r) = P(1_d) * E_cc[odds_r]
        let supp: Vec<Vec<f64>> = (0..18)
            .flat_map(|a| (0..18).flat_map(move |b| (0..18).map(move |c| vec![a as f64, b as f64, c as f64])))
            .collect();
        for r in g.tree.patterns() {
            let c = o.composed(r).unwrap();
            let mut e = 0.0;
            let mut mass = 0.0;
            for x in &supp {
                let p = o.cc_model.log_density(x).unwrap().exp();
                e += p * c.log_odds(fam, x).exp();
                mass += o.derived(r).unwrap().log_density(x).unwrap().exp();
            }
            assert!((0.3 * e - g.pattern_probs[r]).abs() < 1e-12, "{r}");
            assert!((mass - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic_and_frequencies_match() {
        let g = GeneratorConfig::appendix_b();
        let (a, _) = generate(&g, 2000, 5).unwrap();
        let (b, _) = generate(&g, 2000, 5).unwrap();
        let mut wa = Vec::new();
        let mut wb = Vec::new();
        a.write_csv(&mut wa).unwrap();
        b.write_csv(&mut wb).unwrap();
        assert_eq!(wa, wb);
        let (big, _) = generate(&g, 100_000, 9).unwrap();
        for (r, c) in big.pattern_counts() {
            assert!((c as f64 / 1e5 - g.pattern_probs[&r]).abs() < 0.01, "{r}");
        }
    }

    #[test]
    fn generator_json_round_trip() {
        let g = GeneratorConfig::appendix_b();
        let j = serde_json::to_string(&g.to_json().unwrap()).unwrap();
        let back = GeneratorConfig::from_json(&serde_json::from_str(&j).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn selection_intercepts_hit_targets() {
        let xs = synthetic_continuous(3000, 1);
        for mech in [kde_mnar_mechanism().unwrap(), kde_mar_mechanism()] {
            let a = mech.solve_intercepts(&xs).unwrap();
            let mut mean = vec![0.0; 4];
            let mut buf = vec![0.0; 4];
            for x in &xs {
                mech.probs(&a, x, &mut buf);
                for (m, b) in mean.iter_mut().zip(&buf) {
                    *m += b / xs.len() as f64;
                }
            }
            for (m, t) in mean[1..].iter().zip(&mech.targets) {
                assert!((m - t).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn standardized_columns() {
        let xs = synthetic_continuous(5000, 2);
        for j in 0..3 {
            let c: Vec<f64> = xs.iter().map(|r| r[j]).collect();
            assert!(crate::numeric::mean(&c).abs() < 1e-12);
            assert!((crate::numeric::sd(&c) - 1.0).abs() < 1e-12);
        }
    }
}
