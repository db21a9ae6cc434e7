//! Data-driven tree-graph selection.
//!
//! Parent-based selection fits one model per observed pattern and gives each
//! pattern the potential parent whose model, marginalized to the pattern's
//! coordinates, scores its rows best. Child-based selection reverses the
//! roles. Energy selection compares empirical distributions directly.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{kde_fit, Family, MixtureModel};
use crate::fitting::{fit_cc_em, EmConfig};
use crate::par::map_indexed;
use crate::pattern::{potential_parents, IncompleteDataset, MissingPattern};
use crate::treegraph::TreeGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    ParentLikelihood,
    ChildLikelihood,
    Energy,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::ParentLikelihood => "parent",
            Metric::ChildLikelihood => "child",
            Metric::Energy => "energy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    /// Mixture components for each per-pattern model.
    pub k: usize,
    pub em: EmConfig,
    /// Patterns with fewer rows fall back to the CCMV parent and are not
    /// used as candidates.
    pub min_rows: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            k: 1,
            em: EmConfig::default(),
            min_rows: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub child: MissingPattern,
    pub candidate: MissingPattern,
    /// Larger is better: mean log-likelihood, or minus the energy distance.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentScoreTable {
    pub metric: Metric,
    pub rows: Vec<ScoreRow>,
    pub chosen: BTreeMap<MissingPattern, MissingPattern>,
    pub warnings: Vec<String>,
}

impl AlignmentScoreTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("child,candidate,score,chosen\n");
        for r in &self.rows {
            let chosen = self.chosen.get(&r.child) == Some(&r.candidate);
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.child,
                r.candidate,
                crate::pattern::format_value(r.score),
                chosen
            ));
        }
        s
    }
}

/// Argmax with ties going to the lexicographically smallest candidate.
fn pick(scores: &[(MissingPattern, f64)]) -> Option<MissingPattern> {
    let mut best: Option<(MissingPattern, f64)> = None;
    for &(s, v) in scores {
        match best {
            None => best = Some((s, v)),
            Some((bs, bv)) => {
                if v > bv || (v == bv && s < bs) {
                    best = Some((s, v));
                }
            }
        }
    }
    best.map(|b| b.0)
}

/// Per-pattern models over each pattern's observed coordinates.
fn fit_pattern_models(
    data: &IncompleteDataset,
    family: &Family,
    cfg: &SelectConfig,
    seed: u64,
    warnings: &mut Vec<String>,
) -> Result<BTreeMap<MissingPattern, MixtureModel>> {
    let counts = data.pattern_counts();
    let pats: Vec<MissingPattern> = counts
        .iter()
        .filter(|(r, n)| **n >= cfg.min_rows.max(1) && r.n_observed() > 0)
        .map(|(r, _)| *r)
        .collect();
    let fits = map_indexed(pats.len(), |i| -> Result<MixtureModel> {
        let r = pats[i];
        let coords = r.observed();
        let rows = data.restricted(&r, &coords);
        let fam = family.restrict(&coords)?;
        match fam {
            Family::GaussianKde { .. } => kde_fit(&rows, None),
            _ => Ok(fit_cc_em(&rows, &fam, cfg.k, &cfg.em, crate::rng::derive_key(seed, &[r.mask()]))?.model),
        }
    });
    let mut out = BTreeMap::new();
    for (r, f) in pats.into_iter().zip(fits) {
        match f {
            Ok(m) => {
                out.insert(r, m);
            }
            Err(e @ Error::InvalidModel(_)) => return Err(e),
            Err(e) => warnings.push(format!("pattern {r} excluded: {e}")),
        }
    }
    Ok(out)
}

/// Mean log density of `rows` (over `r`'s observed coordinates) under a
/// model fitted on pattern `s`'s coordinates.
fn mean_marginal_loglik(model: &MixtureModel, s: &MissingPattern, r: &MissingPattern, rows: &[Vec<f64>]) -> f64 {
    let s_coords = s.observed();
    let r_coords = r.observed();
    let pos: Vec<Option<usize>> = s_coords.iter().map(|j| r_coords.iter().position(|c| c == j)).collect();
    let mut cache: HashMap<Vec<u64>, f64> = HashMap::new();
    let mut total = 0.0;
    for row in rows {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        let v = *cache.entry(key).or_insert_with(|| {
            let x: Vec<Option<f64>> = pos.iter().map(|p| p.map(|i| row[i])).collect();
            model.log_density_observed(&x).unwrap_or(f64::NEG_INFINITY)
        });
        total += v;
    }
    total / rows.len() as f64
}

fn assemble(
    data: &IncompleteDataset,
    metric: Metric,
    rows: Vec<ScoreRow>,
    mut chosen: BTreeMap<MissingPattern, MissingPattern>,
    mut warnings: Vec<String>,
    min_rows: usize,
) -> Result<(TreeGraph, AlignmentScoreTable)> {
    let pats = data.pattern_set();
    let d = data.dim();
    let source = MissingPattern::complete(d);
    if !pats.contains(&source) {
        return Err(Error::InvalidGraph("no complete cases in the data".into()));
    }
    let counts = data.pattern_counts();
    for r in pats.iter().filter(|r| **r != source) {
        if !chosen.contains_key(r) {
            if counts[r] < min_rows.max(1) {
                warnings.push(format!(
                    "pattern {r} has {} rows (< {min_rows}); parent set to {source}",
                    counts[r]
                ));
            }
            chosen.insert(*r, source);
        }
    }
    let tree = TreeGraph::from_parent_map(d, pats, chosen.clone())?;
    Ok((
        tree,
        AlignmentScoreTable {
            metric,
            rows,
            chosen,
            warnings,
        },
    ))
}

fn candidates(r: &MissingPattern, pats: &std::collections::BTreeSet<MissingPattern>) -> Result<Vec<MissingPattern>> {
    potential_parents(r, pats.iter().copied())
}

/// Parent-based likelihood alignment.
pub fn select_parent_based(
    data: &IncompleteDataset,
    family: &Family,
    cfg: &SelectConfig,
    seed: u64,
) -> Result<(TreeGraph, AlignmentScoreTable)> {
    let mut warnings = Vec::new();
    let models = fit_pattern_models(data, family, cfg, seed, &mut warnings)?;
    let pats = data.pattern_set();
    let mut rows = Vec::new();
    let mut chosen = BTreeMap::new();
    for r in pats.iter().filter(|r| !r.is_complete()) {
        if data.indices_with_pattern(r).len() < cfg.min_rows.max(1) {
            continue;
        }
        let xr = data.restricted(r, &r.observed());
        let mut scores = Vec::new();
        for s in candidates(r, &pats)? {
            let Some(m) = models.get(&s) else { continue };
            let v = mean_marginal_loglik(m, &s, r, &xr);
            scores.push((s, v));
            rows.push(ScoreRow {
                child: *r,
                candidate: s,
                score: v,
            });
        }
        let p = pick(&scores).ok_or_else(|| Error::Fit(format!("pattern {r}: every candidate parent was excluded")))?;
        chosen.insert(*r, p);
    }
    assemble(data, Metric::ParentLikelihood, rows, chosen, warnings, cfg.min_rows)
}

/// Child-based likelihood alignment: `score(r, s)` is the mean log density
/// of the candidate parent's rows, restricted to `r`'s coordinates, under
/// the model fitted on `r`.
pub fn select_child_based(
    data: &IncompleteDataset,
    family: &Family,
    cfg: &SelectConfig,
    seed: u64,
) -> Result<(TreeGraph, AlignmentScoreTable)> {
    let mut warnings = Vec::new();
    let models = fit_pattern_models(data, family, cfg, seed, &mut warnings)?;
    let pats = data.pattern_set();
    let counts = data.pattern_counts();
    let mut rows = Vec::new();
    let mut chosen = BTreeMap::new();
    for r in pats.iter().filter(|r| !r.is_complete()) {
        let Some(m) = models.get(r) else { continue };
        let coords = r.observed();
        let mut scores = Vec::new();
        for s in candidates(r, &pats)? {
            if counts[&s] < cfg.min_rows.max(1) {
                continue;
            }
            let xs = data.restricted(&s, &coords);
            let v = mean_marginal_loglik(m, r, r, &xs);
            scores.push((s, v));
            rows.push(ScoreRow {
                child: *r,
                candidate: s,
                score: v,
            });
        }
        let p = pick(&scores).ok_or_else(|| Error::Fit(format!("pattern {r}: every candidate parent was excluded")))?;
        chosen.insert(*r, p);
    }
    assemble(data, Metric::ChildLikelihood, rows, chosen, warnings, cfg.min_rows)
}

/// Energy-distance alignment: each pattern takes the potential parent whose
/// rows, restricted to the pattern's coordinates, are closest in energy
/// distance.
pub fn select_energy(data: &IncompleteDataset, cfg: &SelectConfig) -> Result<(TreeGraph, AlignmentScoreTable)> {
    let pats = data.pattern_set();
    let counts = data.pattern_counts();
    let mut rows = Vec::new();
    let mut chosen = BTreeMap::new();
    for r in pats.iter().filter(|r| !r.is_complete()) {
        if counts[r] < cfg.min_rows.max(1) {
            continue;
        }
        let coords = r.observed();
        let xr = Atoms::from_rows(&data.restricted(r, &coords));
        let mut scores = Vec::new();
        for s in candidates(r, &pats)? {
            if counts[&s] < cfg.min_rows.max(1) {
                continue;
            }
            let xs = Atoms::from_rows(&data.restricted(&s, &coords));
            let v = -energy_distance_atoms(&xr, &xs);
            scores.push((s, v));
            rows.push(ScoreRow {
                child: *r,
                candidate: s,
                score: v,
            });
        }
        if let Some(p) = pick(&scores) {
            chosen.insert(*r, p);
        }
    }
    assemble(data, Metric::Energy, rows, chosen, Vec::new(), cfg.min_rows)
}

/// Distinct points with multiplicities.
#[derive(Debug, Clone)]
pub struct Atoms {
    pub points: Vec<Vec<f64>>,
    pub counts: Vec<f64>,
}

impl Atoms {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let mut idx: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut points = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        for r in rows {
            let key: Vec<u64> = r.iter().map(|v| v.to_bits()).collect();
            match idx.get(&key) {
                Some(&i) => counts[i] += 1.0,
                None => {
                    idx.insert(key, points.len());
                    points.push(r.clone());
                    counts.push(1.0);
                }
            }
        }
        Self { points, counts }
    }

    pub fn n(&self) -> f64 {
        self.counts.iter().sum()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn cross_sum(a: &Atoms, b: &Atoms) -> f64 {
    let mut s = 0.0;
    for (pa, ca) in a.points.iter().zip(&a.counts) {
        for (pb, cb) in b.points.iter().zip(&b.counts) {
            s += ca * cb * dist(pa, pb);
        }
    }
    s
}

pub fn energy_distance_atoms(x: &Atoms, y: &Atoms) -> f64 {
    let (nx, ny) = (x.n(), y.n());
    2.0 * cross_sum(x, y) / (nx * ny) - cross_sum(x, x) / (nx * nx) - cross_sum(y, y) / (ny * ny)
}

/// Sample energy distance (V-statistic form).
pub fn energy_distance(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Config("energy distance needs two nonempty samples".into()));
    }
    let d = xs[0].len();
    if xs.iter().chain(ys).any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: xs.iter().chain(ys).map(Vec::len).find(|l| *l != d).unwrap(),
        });
    }
    Ok(energy_distance_atoms(&Atoms::from_rows(xs), &Atoms::from_rows(ys)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PermutationTest {
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
}

/// Two-sample permutation test on the energy distance. Sums run over distinct
/// atoms, so each permutation costs one quadratic form in the atom counts.
pub fn energy_permutation_test<R: Rng + ?Sized>(
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    permutations: usize,
    rng: &mut R,
) -> Result<PermutationTest> {
    let stat = energy_distance(xs, ys)?;
    let mut pooled_rows: Vec<Vec<f64>> = xs.to_vec();
    pooled_rows.extend_from_slice(ys);
    let pooled = Atoms::from_rows(&pooled_rows);
    let a = pooled.points.len();
    // packed strict lower triangle: row i holds d(i, 0..i)
    let offset = |i: usize| i * (i.saturating_sub(1)) / 2;
    let mut dm = vec![0.0; offset(a)];
    for i in 1..a {
        for j in 0..i {
            dm[offset(i) + j] = dist(&pooled.points[i], &pooled.points[j]);
        }
    }
    let quad = |u: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 1..a {
            if u[i] == 0.0 {
                continue;
            }
            let row = &dm[offset(i)..offset(i) + i];
            s += u[i] * row.iter().zip(&u[..i]).map(|(d, w)| d * w).sum::<f64>();
        }
        2.0 * s
    };
    // with c = cx + cy: cx.D.cy = cx.Dc - cx.D.cx and cy.D.cy = c.Dc - 2 cx.Dc + cx.D.cx
    let mut dc = vec![0.0; a];
    for i in 1..a {
        for j in 0..i {
            let v = dm[offset(i) + j];
            dc[i] += v * pooled.counts[j];
            dc[j] += v * pooled.counts[i];
        }
    }
    let cdc: f64 = dc.iter().zip(&pooled.counts).map(|(x, c)| x * c).sum();
    let nx = xs.len() as u64;
    let ny = ys.len() as f64;
    let nxf = nx as f64;
    let mut exceed = 0usize;
    let key = |r: &Vec<f64>| -> Vec<u64> { r.iter().map(|v| v.to_bits()).collect() };
    let index: HashMap<Vec<u64>, usize> = pooled.points.iter().enumerate().map(|(i, p)| (key(p), i)).collect();
    let mut labels: Vec<usize> = pooled_rows.iter().map(|r| index[&key(r)]).collect();
    for _ in 0..permutations {
        labels.shuffle(rng);
        let mut cx = vec![0.0; a];
        for &i in &labels[..nx as usize] {
            cx[i] += 1.0;
        }
        let xdx = quad(&cx);
        let xdc: f64 = cx.iter().zip(&dc).map(|(x, v)| x * v).sum();
        let xdy = xdc - xdx;
        let ydy = cdc - 2.0 * xdc + xdx;
        let d = 2.0 * xdy / (nxf * ny) - xdx / (nxf * nxf) - ydy / (ny * ny);
        if d >= stat - 1e-12 * stat.abs() {
            exceed += 1;
        }
    }
    Ok(PermutationTest {
        statistic: stat,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        permutations,
    })
}
