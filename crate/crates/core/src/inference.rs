//! Empirical bootstrap for model parameters and for functionals computed on
//! multiply imputed data, plus the block-covariance check.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::Family;
use crate::fitting::{fit_full, fit_full_with, FitConfig, FittedFullModel, ParamGroup, Parameter};
use crate::impute::impute_conjugate;
use crate::numeric::{normal_quantile, quantile, sd};
use crate::par::map_indexed;
use crate::pattern::{format_value, IncompleteDataset, MissingPattern};
use crate::rng::{derive_key, stream};
use crate::treegraph::TreeGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub b: usize,
    /// Extra attempts for a replicate whose resample loses a pattern.
    pub retries: usize,
    /// Failed-replicate fraction above which the bootstrap errors.
    pub max_failed_fraction: f64,
    /// Refit EM from the point estimate instead of random restarts.
    pub warm_start: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            b: 200,
            retries: 3,
            max_failed_fraction: 0.1,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    /// estimate plus or minus `z * SE`
    Normal,
    Percentile,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamInfo {
    pub name: String,
    pub group: ParamGroup,
    pub block: MissingPattern,
}

/// Bootstrap replicates of the flat parameter vector (and optionally a
/// functional).
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    pub params: Vec<ParamInfo>,
    pub estimate: Vec<f64>,
    /// One row per successful replicate, in replicate order.
    pub draws: Vec<Vec<f64>>,
    /// Replicate index of each row of `draws`.
    pub replicate: Vec<usize>,
    pub failed: Vec<(usize, String)>,
    pub functional_estimate: Option<f64>,
    pub functional: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interval {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

impl BootstrapDraws {
    pub fn b(&self) -> usize {
        self.draws.len()
    }

    /// Replicate standard deviation of each parameter.
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.params.len())
            .map(|j| {
                let col: Vec<f64> = self.draws.iter().map(|d| d[j]).collect();
                if col.len() < 2 {
                    0.0
                } else {
                    sd(&col)
                }
            })
            .collect()
    }

    fn interval(name: &str, est: f64, col: &[f64], level: f64, method: CiMethod) -> Interval {
        let se = if col.len() < 2 { 0.0 } else { sd(col) };
        let (lower, upper) = match method {
            CiMethod::Normal => {
                let z = normal_quantile(0.5 + level / 2.0);
                (est - z * se, est + z * se)
            }
            CiMethod::Percentile => {
                let a = (1.0 - level) / 2.0;
                (quantile(col, a), quantile(col, 1.0 - a))
            }
        };
        Interval {
            name: name.to_string(),
            estimate: est,
            se,
            lower,
            upper,
        }
    }

    pub fn intervals(&self, level: f64, method: CiMethod) -> Vec<Interval> {
        self.params
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let col: Vec<f64> = self.draws.iter().map(|d| d[j]).collect();
                Self::interval(&p.name, self.estimate[j], &col, level, method)
            })
            .collect()
    }

    pub fn functional_interval(&self, level: f64, method: CiMethod) -> Option<Interval> {
        let est = self.functional_estimate?;
        let col = self.functional.as_ref()?;
        Some(Self::interval("S", est, col, level, method))
    }

    /// Wide CSV: one row per successful replicate.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("replicate");
        for p in &self.params {
            s.push(',');
            s.push_str(&p.name);
        }
        if self.functional.is_some() {
            s.push_str(",S");
        }
        s.push('\n');
        for (i, row) in self.draws.iter().enumerate() {
            s.push_str(&(self.replicate[i] + 1).to_string());
            for v in row {
                s.push(',');
                s.push_str(&format_value(*v));
            }
            if let Some(f) = &self.functional {
                s.push(',');
                s.push_str(&format_value(f[i]));
            }
            s.push('\n');
        }
        s
    }
}

fn param_info(ps: &[Parameter]) -> Vec<ParamInfo> {
    ps.iter()
        .map(|p| ParamInfo {
            name: p.name.clone(),
            group: p.group,
            block: p.block,
        })
        .collect()
}

fn resample<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    idx.sort_unstable();
    idx
}

struct Replicate {
    values: Vec<f64>,
    functional: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn run_replicates(
    data: &IncompleteDataset,
    est: &FittedFullModel,
    family: &Family,
    fit: &FitConfig,
    cfg: &BootstrapConfig,
    seed: u64,
    extra: &(dyn Fn(&IncompleteDataset, &FittedFullModel, u64) -> Result<f64> + Sync),
    with_functional: bool,
) -> Result<BootstrapDraws> {
    if cfg.b < 2 {
        return Err(Error::Config("bootstrap needs B >= 2".into()));
    }
    let tree = &est.tree;
    let params = est.parameters();
    let names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
    let results = map_indexed(cfg.b, |b| -> std::result::Result<Replicate, String> {
        let mut last = String::new();
        for attempt in 0..=cfg.retries {
            let mut rng = stream(seed, &[0xB0, b as u64, attempt as u64]);
            let sample = data.select(&resample(data.len(), &mut rng));
            let key = derive_key(seed, &[0xF1, b as u64, attempt as u64]);
            let init = cfg.warm_start.then_some(&est.cc_model);
            let mut m = match fit_full_with(&sample, tree, family, fit, key, init) {
                Ok(m) => m,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            m.rho = est.rho.clone();
            m.perturb_mode = est.perturb_mode;
            if m.rho.iter().any(|v| *v != 0.0) {
                if let Err(e) = m.recompute_derived() {
                    last = e.to_string();
                    continue;
                }
            }
            let ps = m.parameters();
            if ps.len() != names.len() || ps.iter().zip(&names).any(|(p, n)| p.name != *n) {
                last = "replicate parameter layout differs from the estimate".into();
                continue;
            }
            let functional = if with_functional {
                match extra(&sample, &m, key) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        last = e.to_string();
                        continue;
                    }
                }
            } else {
                None
            };
            return Ok(Replicate {
                values: ps.iter().map(|p| p.value).collect(),
                functional,
            });
        }
        Err(last)
    });
    let mut draws = Vec::new();
    let mut replicate = Vec::new();
    let mut failed = Vec::new();
    let mut fvals = Vec::new();
    for (b, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => {
                draws.push(r.values);
                replicate.push(b);
                if let Some(f) = r.functional {
                    fvals.push(f);
                }
            }
            Err(e) => failed.push((b, e)),
        }
    }
    if failed.len() as f64 > cfg.max_failed_fraction * cfg.b as f64 {
        return Err(Error::Fit(format!(
            "{} of {} bootstrap replicates failed (first: {}); consider pruning rare patterns \
             with a representor tree",
            failed.len(),
            cfg.b,
            failed[0].1
        )));
    }
    if draws.len() < 2 {
        return Err(Error::Fit("fewer than two bootstrap replicates succeeded".into()));
    }
    Ok(BootstrapDraws {
        params: param_info(&params),
        estimate: params.iter().map(|p| p.value).collect(),
        draws,
        replicate,
        failed,
        functional_estimate: None,
        functional: with_functional.then_some(fvals),
    })
}

/// Parameter bootstrap around a given point estimate.
pub fn bootstrap_from(
    data: &IncompleteDataset,
    estimate: &FittedFullModel,
    fit: &FitConfig,
    cfg: &BootstrapConfig,
    seed: u64,
) -> Result<BootstrapDraws> {
    let none = |_: &IncompleteDataset, _: &FittedFullModel, _: u64| Ok(0.0);
    run_replicates(data, estimate, &estimate.family, fit, cfg, seed, &none, false)
}

/// Fits the model and bootstraps its parameters.
pub fn bootstrap(
    data: &IncompleteDataset,
    tree: &TreeGraph,
    family: &Family,
    fit: &FitConfig,
    cfg: &BootstrapConfig,
    seed: u64,
) -> Result<(FittedFullModel, BootstrapDraws)> {
    let est = fit_full(data, tree, family, fit, derive_key(seed, &[0xE5]))?;
    let draws = bootstrap_from(data, &est, fit, cfg, seed)?;
    Ok((est, draws))
}

/// Statistical functional of a completed dataset.
pub type Functional<'a> = dyn Fn(&[Vec<f64>]) -> f64 + Sync + 'a;

/// Bootstrap with multiple imputation: each replicate is refitted, imputed
/// `m` times, and `s` is evaluated on the pooled completed rows.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_mi(
    data: &IncompleteDataset,
    tree: &TreeGraph,
    family: &Family,
    fit: &FitConfig,
    cfg: &BootstrapConfig,
    m: usize,
    s: &Functional<'_>,
    seed: u64,
) -> Result<(FittedFullModel, BootstrapDraws)> {
    if m == 0 {
        return Err(Error::Config("bootstrap_mi needs M >= 1".into()));
    }
    let est = fit_full(data, tree, family, fit, derive_key(seed, &[0xE5]))?;
    let eval = |d: &IncompleteDataset, model: &FittedFullModel, key: u64| -> Result<f64> {
        let imp = impute_conjugate(d, model, m, key)?;
        Ok(s(&imp.pooled()))
    };
    let mut draws = run_replicates(data, &est, family, fit, cfg, seed, &eval, true)?;
    draws.functional_estimate = Some(eval(data, &est, derive_key(seed, &[0x1A]))?);
    Ok((est, draws))
}

/// Which pairs of parameter blocks may be correlated: a block pair is
/// masked independent exactly when its patterns are neither parent and
/// child nor siblings.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceBlockMask {
    pub blocks: Vec<MissingPattern>,
    pub dependent: Vec<Vec<bool>>,
}

impl CovarianceBlockMask {
    pub fn from_tree(tree: &TreeGraph) -> Self {
        let g = tree.sibling_moral_graph();
        let blocks: Vec<MissingPattern> = tree.patterns().iter().copied().collect();
        let dependent = blocks
            .iter()
            .map(|a| blocks.iter().map(|b| a == b || g.adjacent(a, b)).collect())
            .collect();
        Self { blocks, dependent }
    }

    pub fn is_dependent(&self, a: &MissingPattern, b: &MissingPattern) -> bool {
        let i = self.blocks.iter().position(|x| x == a);
        let j = self.blocks.iter().position(|x| x == b);
        match (i, j) {
            (Some(i), Some(j)) => self.dependent[i][j],
            _ => false,
        }
    }

    /// Block pairs masked independent.
    pub fn independent_pairs(&self) -> Vec<(MissingPattern, MissingPattern)> {
        let mut out = Vec::new();
        for i in 0..self.blocks.len() {
            for j in i + 1..self.blocks.len() {
                if !self.dependent[i][j] {
                    out.push((self.blocks[i], self.blocks[j]));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockPair {
    pub a: MissingPattern,
    pub b: MissingPattern,
    pub masked_independent: bool,
    pub max_abs_corr: f64,
    pub worst: (String, String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCheckReport {
    pub threshold: f64,
    pub pairs: Vec<BlockPair>,
    /// Largest |corr| over block pairs masked independent (0 if none).
    pub max_masked_abs_corr: f64,
    pub violations: Vec<BlockPair>,
}

impl BlockCheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const DEFAULT_BLOCK_THRESHOLD: f64 = 0.1;

fn corr(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Largest absolute cross-correlation between parameters of each pair of
/// distinct blocks; pairs masked independent above `threshold` are flagged.
/// Constant parameters carry no correlation and are skipped.
pub fn covariance_block_check(draws: &BootstrapDraws, tree: &TreeGraph, threshold: f64) -> BlockCheckReport {
    let mask = CovarianceBlockMask::from_tree(tree);
    let cols: Vec<Vec<f64>> = (0..draws.params.len())
        .map(|j| draws.draws.iter().map(|d| d[j]).collect())
        .collect();
    let mut by_block: BTreeMap<MissingPattern, Vec<usize>> = BTreeMap::new();
    for (j, p) in draws.params.iter().enumerate() {
        by_block.entry(p.block).or_default().push(j);
    }
    let blocks: Vec<MissingPattern> = by_block.keys().copied().collect();
    let mut pairs = Vec::new();
    for (i, a) in blocks.iter().enumerate() {
        for b in &blocks[i + 1..] {
            let mut best = (0.0, (String::new(), String::new()));
            for &p in &by_block[a] {
                for &q in &by_block[b] {
                    if let Some(c) = corr(&cols[p], &cols[q]) {
                        if c.abs() > best.0 {
                            best = (c.abs(), (draws.params[p].name.clone(), draws.params[q].name.clone()));
                        }
                    }
                }
            }
            pairs.push(BlockPair {
                a: *a,
                b: *b,
                masked_independent: !mask.is_dependent(a, b),
                max_abs_corr: best.0,
                worst: best.1,
            });
        }
    }
    let violations: Vec<BlockPair> = pairs
        .iter()
        .filter(|p| p.masked_independent && p.max_abs_corr >= threshold)
        .cloned()
        .collect();
    let max_masked_abs_corr = pairs
        .iter()
        .filter(|p| p.masked_independent)
        .map(|p| p.max_abs_corr)
        .fold(0.0, f64::max);
    BlockCheckReport {
        threshold,
        pairs,
        max_masked_abs_corr,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::EmConfig;
    use crate::treegraph::{build_ccmv, build_lncmv};

    fn p(s: &str) -> MissingPattern {
        s.parse().unwrap()
    }

    #[test]
    fn ccmv_masks_nothing_and_chain_masks_distant_edges() {
        let pats = ["111", "110", "101", "100", "010", "001"]
            .iter()
            .map(|s| p(s))
            .collect();
        let m = CovarianceBlockMask::from_tree(&build_ccmv(&pats).unwrap());
        assert!(m.independent_pairs().is_empty());
        let m = CovarianceBlockMask::from_tree(&build_lncmv(&pats).unwrap());
        assert!(m.independent_pairs().contains(&(p("010"), p("101"))));
        let chain: std::collections::BTreeSet<_> = ["111", "110", "100", "000"].iter().map(|s| p(s)).collect();
        let t = build_lncmv(&chain).unwrap();
        let m = CovarianceBlockMask::from_tree(&t);
        // only consecutive edges are dependent
        let ind = m.independent_pairs();
        assert_eq!(ind.len(), 3);
        assert!(ind.contains(&(p("000"), p("110"))));
        assert!(ind.contains(&(p("000"), p("111"))));
        assert!(ind.contains(&(p("100"), p("111"))));
    }

    fn toy(n: usize) -> IncompleteDataset {
        let rows = (0..n)
            .map(|i| {
                let a = (i % 5) as f64;
                let b = ((i * 7) % 4) as f64;
                if i % 3 == 0 {
                    vec![Some(a), None]
                } else {
                    vec![Some(a), Some(b)]
                }
            })
            .collect();
        IncompleteDataset::from_rows(rows).unwrap()
    }

    #[test]
    fn tiny_b_and_interval_order() {
        let d = toy(90);
        let tree = build_ccmv(&d.pattern_set()).unwrap();
        let fam = Family::BinomialProduct { trials: vec![4, 4] };
        let fit = FitConfig {
            em: EmConfig {
                restarts: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let cfg = BootstrapConfig {
            b: 2,
            ..Default::default()
        };
        let (_, draws) = bootstrap(&d, &tree, &fam, &fit, &cfg, 3).unwrap();
        assert_eq!(draws.b(), 2);
        let cfg = BootstrapConfig {
            b: 30,
            ..Default::default()
        };
        let (_, draws) = bootstrap(&d, &tree, &fam, &fit, &cfg, 3).unwrap();
        let i90 = draws.intervals(0.90, CiMethod::Normal);
        let i95 = draws.intervals(0.95, CiMethod::Normal);
        for (a, b) in i90.iter().zip(&i95) {
            assert!(b.lower <= a.lower && a.upper <= b.upper);
        }
        assert!(draws.to_csv().lines().count() == 31);
    }

    #[test]
    fn identical_rows_give_zero_variance() {
        let d = IncompleteDataset::from_rows(
            (0..40)
                .map(|i| {
                    if i % 2 == 0 {
                        vec![Some(2.0), Some(1.0)]
                    } else {
                        vec![Some(2.0), None]
                    }
                })
                .collect(),
        )
        .unwrap();
        let tree = build_ccmv(&d.pattern_set()).unwrap();
        let fam = Family::BinomialProduct { trials: vec![4, 4] };
        let (_, draws) = bootstrap(
            &d,
            &tree,
            &fam,
            &FitConfig::default(),
            &BootstrapConfig {
                b: 5,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let se = draws.standard_errors();
        for (pinfo, s) in draws.params.iter().zip(se) {
            if pinfo.group != ParamGroup::Intercept {
                assert!(s < 1e-6, "{} {s}", pinfo.name);
            }
        }
    }

    #[test]
    fn vanishing_pattern_fails_loudly() {
        let mut rows: Vec<Vec<Option<f64>>> = (0..200).map(|i| vec![Some((i % 4) as f64), Some(1.0)]).collect();
        for _ in 0..5 {
            rows.push(vec![Some(1.0), None]);
        }
        let d = IncompleteDataset::from_rows(rows).unwrap();
        let tree = build_ccmv(&d.pattern_set()).unwrap();
        let fam = Family::BinomialProduct { trials: vec![4, 4] };
        let cfg = BootstrapConfig {
            b: 20,
            retries: 0,
            ..Default::default()
        };
        let e = bootstrap(&d, &tree, &fam, &FitConfig::default(), &cfg, 1);
        let msg = e.unwrap_err().to_string();
        assert!(msg.contains("representor"), "{msg}");
    }
}
