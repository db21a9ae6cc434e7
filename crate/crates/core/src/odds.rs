//! Selection-odds models on tree edges and their composition along paths.
//!
//! An edge model is a logistic regression of "row has the child pattern"
//! against "row has the parent pattern" on the sufficient statistics of the
//! child's observed coordinates. Composed odds for a pattern sum the edge
//! coefficients on the path from `1_d`.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::Family;
use crate::pattern::{IncompleteDataset, MissingPattern};
use crate::treegraph::TreeGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerOddsMethod {
    /// Per-pattern shape MLEs on the child's coordinates; coefficient is
    /// `alpha_parent - alpha_child`.
    MleDifference,
    /// Logistic regression on `log x`, as for the other families.
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OddsConfig {
    pub min_rows: usize,
    pub ridge: f64,
    pub separation_ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Gaussian families only: drop the `x^2` statistics (mean-shift tilts).
    pub freeze_quadratic: bool,
    pub power_method: PowerOddsMethod,
}

impl Default for OddsConfig {
    fn default() -> Self {
        Self {
            min_rows: 5,
            ridge: 1e-6,
            separation_ridge: 1e-2,
            max_iter: 100,
            tol: 1e-10,
            freeze_quadratic: false,
            power_method: PowerOddsMethod::MleDifference,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeOddsModel {
    pub child: MissingPattern,
    pub parent: MissingPattern,
    pub intercept: f64,
    /// Indexed by the full statistic vector; zero on statistics of the
    /// child's missing coordinates.
    pub coefficients: Vec<f64>,
    /// Set when near-separation forced the stronger ridge.
    pub separation: bool,
}

impl EdgeOddsModel {
    /// Edge model with known coefficients (used by generators and tests).
    pub fn new(
        family: &Family,
        child: MissingPattern,
        parent: MissingPattern,
        intercept: f64,
        coefficients: Vec<f64>,
    ) -> Result<Self> {
        if coefficients.len() != family.n_stats() {
            return Err(Error::DimensionMismatch {
                expected: family.n_stats(),
                got: coefficients.len(),
            });
        }
        for j in child.missing() {
            if family.stat_range(j).any(|i| coefficients[i] != 0.0) {
                return Err(Error::InvalidModel(format!(
                    "edge {child}<-{parent}: coefficient on missing coordinate {}",
                    j + 1
                )));
            }
        }
        Ok(Self {
            child,
            parent,
            intercept,
            coefficients,
            separation: false,
        })
    }

    /// `log P(R=child|x) / P(R=parent|x)` at a complete vector.
    pub fn log_odds(&self, family: &Family, x: &[f64]) -> f64 {
        self.intercept + dot(&self.coefficients, &family.stats(x))
    }

    pub fn to_json(&self, family: &Family) -> EdgeOddsJson {
        let names = family.stat_names();
        EdgeOddsJson {
            child: self.child,
            parent: self.parent,
            intercept: self.intercept,
            coefficients: active_stats(family, &self.child)
                .into_iter()
                .map(|i| (names[i].clone(), self.coefficients[i]))
                .collect(),
            separation: self.separation,
        }
    }

    pub fn from_json(family: &Family, j: &EdgeOddsJson) -> Result<Self> {
        let names = family.stat_names();
        let mut coef = vec![0.0; family.n_stats()];
        for (name, v) in &j.coefficients {
            let i = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::InvalidModel(format!("unknown statistic name {name:?}")))?;
            coef[i] = *v;
        }
        let mut m = Self::new(family, j.child, j.parent, j.intercept, coef)?;
        m.separation = j.separation;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeOddsJson {
    pub child: MissingPattern,
    pub parent: MissingPattern,
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
    #[serde(default)]
    pub separation: bool,
}

/// Statistic indices over the child's observed coordinates.
pub fn active_stats(family: &Family, child: &MissingPattern) -> Vec<usize> {
    child
        .observed()
        .into_iter()
        .flat_map(|j| family.stat_range(j))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits the edge `parent -> child` from the rows of both patterns.
pub fn fit_edge(
    data: &IncompleteDataset,
    child: MissingPattern,
    parent: MissingPattern,
    family: &Family,
    config: &OddsConfig,
) -> Result<EdgeOddsModel> {
    if !parent.dominates(&child)? {
        return Err(Error::InvalidGraph(format!("{parent} does not dominate {child}")));
    }
    let coords = child.observed();
    let xc = data.restricted(&child, &coords);
    let xp = data.restricted(&parent, &coords);
    for (p, rows) in [(child, &xc), (parent, &xp)] {
        if rows.len() < config.min_rows.max(1) {
            return Err(Error::TooFewRows {
                pattern: p.to_string(),
                rows: rows.len(),
                required: config.min_rows.max(1),
            });
        }
    }
    let mut stats: Vec<usize> = active_stats(family, &child);
    if config.freeze_quadratic && family.is_gaussian() {
        stats.retain(|i| i % 2 == 0);
    }
    if matches!(family, Family::Pareto { .. }) && config.power_method == PowerOddsMethod::MleDifference {
        return pareto_mle_difference(family, child, parent, &coords, &xc, &xp);
    }
    // feature rows over the child's coordinates, restricted to `stats`
    let features = |row: &[f64]| -> Result<Vec<f64>> {
        let mut full = vec![0.0; family.n_stats()];
        for (&j, &v) in coords.iter().zip(row) {
            family.coord_log_base(j, v)?;
            let r = family.stat_range(j);
            family.coord_stats(j, v, &mut full[r]);
        }
        Ok(stats.iter().map(|&i| full[i]).collect())
    };
    let mut groups: HashMap<Vec<u64>, (Vec<f64>, f64, f64)> = HashMap::new();
    for (rows, is_child) in [(&xc, true), (&xp, false)] {
        for row in rows.iter() {
            let f = features(row)?;
            let key = f.iter().map(|v| v.to_bits()).collect();
            let e = groups.entry(key).or_insert((f, 0.0, 0.0));
            if is_child {
                e.1 += 1.0;
            } else {
                e.2 += 1.0;
            }
        }
    }
    let mut groups: Vec<(Vec<f64>, f64, f64)> = groups.into_values().collect();
    groups.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let fit = logistic_grouped(&groups, config)?;
    let mut coefficients = vec![0.0; family.n_stats()];
    for (&i, b) in stats.iter().zip(&fit.coef) {
        coefficients[i] = *b;
    }
    Ok(EdgeOddsModel {
        child,
        parent,
        intercept: fit.intercept,
        coefficients,
        separation: fit.separation,
    })
}

fn pareto_mle_difference(
    family: &Family,
    child: MissingPattern,
    parent: MissingPattern,
    coords: &[usize],
    xc: &[Vec<f64>],
    xp: &[Vec<f64>],
) -> Result<EdgeOddsModel> {
    let Family::Pareto { scale } = family else {
        unreachable!()
    };
    let shape = |rows: &[Vec<f64>], c: usize, j: usize| -> Result<f64> {
        let mut s = 0.0;
        for r in rows {
            family.coord_log_base(j, r[c])?;
            s += (r[c] / scale[j]).ln();
        }
        if !(s > 0.0) {
            return Err(Error::Fit(format!(
                "pareto shape for coordinate {} is unbounded (all values at the scale)",
                j + 1
            )));
        }
        Ok(rows.len() as f64 / s)
    };
    let mut coefficients = vec![0.0; family.n_stats()];
    let mut intercept = (xc.len() as f64 / xp.len() as f64).ln();
    for (c, &j) in coords.iter().enumerate() {
        let ac = shape(xc, c, j)?;
        let ap = shape(xp, c, j)?;
        coefficients[family.linear_stat(j)] = ap - ac;
        intercept += (ac / ap).ln() + (ac - ap) * scale[j].ln();
    }
    Ok(EdgeOddsModel {
        child,
        parent,
        intercept,
        coefficients,
        separation: false,
    })
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub separation: bool,
    pub iterations: usize,
}

/// Penalized logistic regression on grouped rows `(features, n_success,
/// n_failure)`. Features are standardized internally; the ridge applies to
/// standardized slopes, never the intercept.
pub fn logistic_grouped(groups: &[(Vec<f64>, f64, f64)], config: &OddsConfig) -> Result<LogisticFit> {
    let p = groups.first().map_or(0, |g| g.0.len());
    let total: f64 = groups.iter().map(|g| g.1 + g.2).sum();
    let mut center = vec![0.0; p];
    let mut scale = vec![1.0; p];
    for k in 0..p {
        let m = groups.iter().map(|g| (g.1 + g.2) * g.0[k]).sum::<f64>() / total;
        let v = groups.iter().map(|g| (g.1 + g.2) * (g.0[k] - m).powi(2)).sum::<f64>() / total;
        center[k] = m;
        scale[k] = if v > 0.0 { v.sqrt() } else { 1.0 };
    }
    let z: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            std::iter::once(1.0)
                .chain((0..p).map(|k| (g.0[k] - center[k]) / scale[k]))
                .collect()
        })
        .collect();
    let run = |lambda: f64| irls(&z, groups, lambda, config);
    let (beta, iters, ok) = run(config.ridge)?;
    let separated = !ok || beta.iter().skip(1).any(|b| b.abs() > 25.0);
    let (beta, iters, separation) = if separated {
        let (b, it, _) = run(config.separation_ridge)?;
        (b, it, true)
    } else {
        (beta, iters, false)
    };
    let coef: Vec<f64> = (0..p).map(|k| beta[k + 1] / scale[k]).collect();
    let intercept = beta[0] - coef.iter().zip(&center).map(|(b, c)| b * c).sum::<f64>();
    Ok(LogisticFit {
        intercept,
        coef,
        separation,
        iterations: iters,
    })
}

fn irls(
    z: &[Vec<f64>],
    groups: &[(Vec<f64>, f64, f64)],
    lambda: f64,
    config: &OddsConfig,
) -> Result<(Vec<f64>, usize, bool)> {
    let q = z[0].len();
    let mut beta = vec![0.0; q];
    // intercept starts at the marginal log-odds
    let s: f64 = groups.iter().map(|g| g.1).sum();
    let f: f64 = groups.iter().map(|g| g.2).sum();
    beta[0] = ((s + 0.5) / (f + 0.5)).ln();
    for it in 1..=config.max_iter {
        let mut h = DMatrix::<f64>::zeros(q, q);
        let mut g = DVector::<f64>::zeros(q);
        for (zi, grp) in z.iter().zip(groups) {
            let n = grp.1 + grp.2;
            let eta: f64 = dot(zi, &beta);
            let mu = crate::numeric::sigmoid(eta);
            let w = n * mu * (1.0 - mu);
            let resid = grp.1 - n * mu;
            for a in 0..q {
                g[a] += zi[a] * resid;
                for b in a..q {
                    h[(a, b)] += w * zi[a] * zi[b];
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        for a in 1..q {
            h[(a, a)] += lambda;
            g[a] -= lambda * beta[a];
        }
        // tiny jitter keeps the intercept row positive definite when all
        // fitted probabilities saturate
        h[(0, 0)] += 1e-12;
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => return Ok((beta, it, false)),
        };
        let max_step = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // damp very long Newton steps
        let damp = if max_step > 5.0 { 5.0 / max_step } else { 1.0 };
        for a in 0..q {
            beta[a] += damp * step[a];
        }
        if !beta.iter().all(|b| b.is_finite()) {
            return Err(Error::Fit("logistic regression diverged".into()));
        }
        if max_step * damp < config.tol {
            return Ok((beta, it, true));
        }
    }
    Ok((beta, config.max_iter, false))
}

/// Selection odds of `target` against `1_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedOdds {
    pub target: MissingPattern,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl ComposedOdds {
    pub fn log_odds(&self, family: &Family, x: &[f64]) -> f64 {
        self.intercept + dot(&self.coefficients, &family.stats(x))
    }
}

/// Sums the edge models along the path from `1_d` to `target`.
pub fn compose(
    tree: &TreeGraph,
    edges: &BTreeMap<MissingPattern, EdgeOddsModel>,
    family: &Family,
    target: &MissingPattern,
) -> Result<ComposedOdds> {
    let path = tree.path_to_source(target)?;
    let mut intercept = 0.0;
    let mut coefficients = vec![0.0; family.n_stats()];
    for r in path.iter().skip(1) {
        let e = edges
            .get(r)
            .ok_or_else(|| Error::InvalidModel(format!("no fitted edge model for pattern {r}")))?;
        if Some(e.parent) != tree.parent(r) {
            return Err(Error::InvalidModel(format!(
                "edge model for {r} has parent {}, tree has {}",
                e.parent,
                tree.parent(r).unwrap()
            )));
        }
        intercept += e.intercept;
        for (c, v) in coefficients.iter_mut().zip(&e.coefficients) {
            *c += v;
        }
    }
    Ok(ComposedOdds {
        target: *target,
        intercept,
        coefficients,
    })
}
