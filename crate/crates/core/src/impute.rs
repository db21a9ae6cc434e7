//! Multiple imputation from a fitted full-data model.
//!
//! Conjugate imputation draws the missing coordinates from the conditional
//! of the pattern's derived mixture. Rejection imputation proposes from the
//! complete-case conditional and accepts with probability `odds / U_r`, for
//! odds models that have no closed-form tilt.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{Family, MixtureModel};
use crate::fitting::FittedFullModel;
use crate::odds::ComposedOdds;
use crate::par::map_indexed;
use crate::pattern::{IncompleteDataset, MissingPattern};
use crate::rng::stream;

/// Default per-row, per-imputation proposal cap for rejection sampling.
pub const DEFAULT_MAX_ATTEMPTS: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_hash: String,
    pub tree_hash: String,
    pub seed: u64,
    pub method: String,
}

/// `m` completed copies of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationSet {
    pub names: Vec<String>,
    /// `completed[m][i]` is row `i` of imputation `m`.
    pub completed: Vec<Vec<Vec<f64>>>,
    pub provenance: Provenance,
}

impl ImputationSet {
    pub fn m(&self) -> usize {
        self.completed.len()
    }

    pub fn write_csv<W: std::io::Write>(&self, m: usize, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.names)?;
        for row in &self.completed[m] {
            wr.write_record(row.iter().map(|v| crate::pattern::format_value(*v)))?;
        }
        wr.flush()?;
        Ok(())
    }

    /// All imputations stacked into one dataset.
    pub fn pooled(&self) -> Vec<Vec<f64>> {
        self.completed.iter().flatten().cloned().collect()
    }
}

/// Hashes identifying the model and its tree.
pub fn model_hashes(model: &FittedFullModel) -> Result<(String, String)> {
    Ok((
        crate::io::json_hash(&model.to_json())?,
        crate::io::json_hash(&model.tree.to_json())?,
    ))
}

fn check_rows(data: &IncompleteDataset, ok: impl Fn(&MissingPattern) -> bool) -> Result<()> {
    let bad: Vec<usize> = (0..data.len())
        .filter(|&i| {
            let r = data.pattern(i);
            !r.is_complete() && !ok(&r)
        })
        .collect();
    if bad.is_empty() {
        return Ok(());
    }
    let shown: Vec<String> = bad.iter().take(20).map(|i| (i + 1).to_string()).collect();
    Err(Error::InvalidModel(format!(
        "{} row(s) have a pattern without a usable pattern model (rows {}{})",
        bad.len(),
        shown.join(", "),
        if bad.len() > 20 { ", ..." } else { "" }
    )))
}

fn transpose(rows: Vec<Vec<Vec<f64>>>, m: usize) -> Vec<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<Vec<f64>>> = (0..m).map(|_| Vec::with_capacity(rows.len())).collect();
    for per_row in rows {
        for (k, x) in per_row.into_iter().enumerate() {
            out[k].push(x);
        }
    }
    out
}

/// Closed-form imputation: row `i`, copy `m` uses the stream `(seed, i, m)`.
pub fn impute_conjugate(
    data: &IncompleteDataset,
    model: &FittedFullModel,
    m: usize,
    seed: u64,
) -> Result<ImputationSet> {
    if data.dim() != model.family.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.family.dim(),
            got: data.dim(),
        });
    }
    check_rows(data, |r| model.derived(r).is_ok())?;
    let rows = map_indexed(data.len(), |i| -> Result<Vec<Vec<f64>>> {
        let row = data.row(i);
        let r = data.pattern(i);
        if r.is_complete() {
            let x: Vec<f64> = row.iter().map(|v| v.unwrap()).collect();
            return Ok(vec![x; m]);
        }
        let cond = model.derived(&r)?.conditional(row)?;
        Ok((0..m)
            .map(|k| cond.sample(&mut stream(seed, &[i as u64, k as u64])))
            .collect())
    });
    let rows: Vec<Vec<Vec<f64>>> = rows.into_iter().collect::<Result<_>>()?;
    let (model_hash, tree_hash) = model_hashes(model)?;
    Ok(ImputationSet {
        names: data.names().to_vec(),
        completed: transpose(rows, m),
        provenance: Provenance {
            model_hash,
            tree_hash,
            seed,
            method: "conjugate".into(),
        },
    })
}

/// Pattern-specific joint `p(x | R = r)`.
pub fn pattern_joint<'a>(model: &'a FittedFullModel, r: &MissingPattern) -> Result<&'a MixtureModel> {
    model.derived(r)
}

/// Per-pattern odds evaluator for rejection imputation: the odds of `r`
/// against `1_d` at a complete vector.
pub type OddsFn<'a> = dyn Fn(&MissingPattern, &[f64]) -> f64 + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RejectionConfig {
    pub max_attempts: u64,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        Self {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

/// Rejection imputation with proposals from the complete-case conditional.
#[allow(clippy::too_many_arguments)]
pub fn impute_rejection(
    data: &IncompleteDataset,
    cc_model: &MixtureModel,
    odds_fn: &OddsFn<'_>,
    bounds: &BTreeMap<MissingPattern, f64>,
    m: usize,
    cfg: &RejectionConfig,
    seed: u64,
    provenance: (String, String),
) -> Result<ImputationSet> {
    if data.dim() != cc_model.dim() {
        return Err(Error::DimensionMismatch {
            expected: cc_model.dim(),
            got: data.dim(),
        });
    }
    for (r, u) in bounds {
        if !(*u > 0.0) || !u.is_finite() {
            return Err(Error::InvalidModel(format!(
                "bound for pattern {r} must be positive and finite"
            )));
        }
    }
    check_rows(data, |r| bounds.contains_key(r))?;
    let rows = map_indexed(data.len(), |i| -> Result<Vec<Vec<f64>>> {
        let row = data.row(i);
        let r = data.pattern(i);
        if r.is_complete() {
            let x: Vec<f64> = row.iter().map(|v| v.unwrap()).collect();
            return Ok(vec![x; m]);
        }
        let u_r = bounds[&r];
        let cond = cc_model.conditional(row)?;
        let mut out = Vec::with_capacity(m);
        for k in 0..m {
            let mut rng = stream(seed, &[i as u64, k as u64]);
            let mut accepted = None;
            for _ in 0..cfg.max_attempts {
                let y = cond.sample(&mut rng);
                let o = odds_fn(&r, &y);
                if !o.is_finite() || o < 0.0 {
                    return Err(Error::Sampling(format!("odds for pattern {r} at row {} is {o}", i + 1)));
                }
                let a = o / u_r;
                if a > 1.0 + 1e-9 {
                    return Err(Error::BoundViolation {
                        pattern: r.to_string(),
                        ratio: a,
                    });
                }
                if rng.random::<f64>() < a {
                    accepted = Some(y);
                    break;
                }
            }
            match accepted {
                Some(y) => out.push(y),
                None => {
                    return Err(Error::Sampling(format!(
                        "row {} (pattern {r}): no proposal accepted in {} attempts; \
                         acceptance rate below {:.1e}, U_r may be far above the odds",
                        i + 1,
                        cfg.max_attempts,
                        1.0 / cfg.max_attempts as f64
                    )))
                }
            }
        }
        Ok(out)
    });
    let rows: Vec<Vec<Vec<f64>>> = rows.into_iter().collect::<Result<_>>()?;
    Ok(ImputationSet {
        names: data.names().to_vec(),
        completed: transpose(rows, m),
        provenance: Provenance {
            model_hash: provenance.0,
            tree_hash: provenance.1,
            seed,
            method: "rejection".into(),
        },
    })
}

/// Supremum over the family support of `exp(intercept + c . T(x))`, or an
/// error when the odds are unbounded there.
pub fn odds_bound(family: &Family, odds: &ComposedOdds) -> Result<f64> {
    let c = &odds.coefficients;
    let unbounded = |j: usize| {
        Err(Error::InvalidModel(format!(
            "odds of pattern {} are unbounded in coordinate {}",
            odds.target,
            j + 1
        )))
    };
    let mut log_sup = odds.intercept;
    if let Family::Dirichlet { .. } = family {
        if let Some(j) = c.iter().position(|v| *v < 0.0) {
            return unbounded(j);
        }
        let tot: f64 = c.iter().sum();
        for v in c.iter().filter(|v| **v > 0.0) {
            log_sup += v * (v / tot).ln();
        }
        return Ok(log_sup.exp());
    }
    for j in 0..family.dim() {
        let s = &c[family.stat_range(j)];
        let term = match family {
            Family::BinomialProduct { trials } => s[0].max(0.0) * f64::from(trials[j]),
            Family::NegativeBinomial { .. } => {
                if s[0] > 0.0 {
                    return unbounded(j);
                }
                0.0
            }
            Family::Pareto { scale } => {
                if s[0] > 0.0 {
                    return unbounded(j);
                }
                s[0] * scale[j].ln()
            }
            Family::GaussianDiag { .. } | Family::GaussianKde { .. } => {
                if s[1] < 0.0 {
                    -s[0] * s[0] / (4.0 * s[1])
                } else if s[1] == 0.0 && s[0] == 0.0 {
                    0.0
                } else {
                    return unbounded(j);
                }
            }
            Family::Beta { .. } => {
                if s[0] < 0.0 || s[1] < 0.0 {
                    return unbounded(j);
                }
                if s[0] == 0.0 || s[1] == 0.0 {
                    0.0
                } else {
                    let x = s[0] / (s[0] + s[1]);
                    s[0] * x.ln() + s[1] * (-x).ln_1p()
                }
            }
            Family::Dirichlet { .. } => unreachable!(),
        };
        log_sup += term;
    }
    Ok(log_sup.exp())
}

/// Rejection imputation driven by a fitted model's own composed odds, with
/// `U_r` the exact supremum of each pattern's odds. Draws follow the same
/// law as [`impute_conjugate`].
pub fn impute_rejection_from_model(
    data: &IncompleteDataset,
    model: &FittedFullModel,
    m: usize,
    cfg: &RejectionConfig,
    seed: u64,
) -> Result<ImputationSet> {
    let mut composed: BTreeMap<MissingPattern, ComposedOdds> = BTreeMap::new();
    let mut bounds = BTreeMap::new();
    for r in data.pattern_set().into_iter().filter(|r| !r.is_complete()) {
        if !model.tree.contains(&r) {
            continue;
        }
        let c = model.composed(&r)?;
        bounds.insert(r, odds_bound(&model.family, &c)?);
        composed.insert(r, c);
    }
    let fam = &model.family;
    let odds_fn = |r: &MissingPattern, x: &[f64]| composed[r].log_odds(fam, x).exp();
    let hashes = model_hashes(model)?;
    impute_rejection(data, &model.cc_model, &odds_fn, &bounds, m, cfg, seed, hashes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odds::EdgeOddsModel;
    use crate::treegraph::TreeGraph;

    fn p(s: &str) -> MissingPattern {
        s.parse().unwrap()
    }

    fn data() -> IncompleteDataset {
        IncompleteDataset::from_rows(vec![
            vec![Some(1.0), Some(2.0)],
            vec![Some(4.0), None],
            vec![Some(0.0), None],
        ])
        .unwrap()
    }

    #[test]
    fn coefficients_on_observed_coordinates_are_rejected() {
        let fam = Family::BinomialProduct { trials: vec![6, 6] };
        // edge 10<-11 may only use coordinate 1
        assert!(EdgeOddsModel::new(&fam, p("10"), p("11"), 0.0, vec![0.1, 0.3]).is_err());
    }

    fn model() -> FittedFullModel {
        let fam = Family::BinomialProduct { trials: vec![6, 6] };
        let cc =
            MixtureModel::from_mean_params(fam.clone(), vec![0.4, 0.6], &[vec![0.3, 0.6], vec![0.7, 0.2]]).unwrap();
        let mut pm = BTreeMap::new();
        pm.insert(p("10"), p("11"));
        pm.insert(p("00"), p("10"));
        let tree =
            TreeGraph::from_parent_map(2, [p("11"), p("10"), p("00")].into_iter().collect::<Vec<_>>(), pm).unwrap();
        let mut edges = BTreeMap::new();
        edges.insert(
            p("10"),
            EdgeOddsModel::new(&fam, p("10"), p("11"), -0.2, vec![0.25, 0.0]).unwrap(),
        );
        edges.insert(
            p("00"),
            EdgeOddsModel::new(&fam, p("00"), p("10"), 0.1, vec![0.0, 0.0]).unwrap(),
        );
        let probs = [(p("11"), 0.4), (p("10"), 0.4), (p("00"), 0.2)].into_iter().collect();
        FittedFullModel::assemble(tree, cc, edges, probs).unwrap()
    }

    #[test]
    fn observed_entries_preserved_and_deterministic() {
        let m = model();
        let d = data();
        let a = impute_conjugate(&d, &m, 4, 11).unwrap();
        let b = impute_conjugate(&d, &m, 4, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.m(), 4);
        for k in 0..4 {
            for (i, row) in d.rows().iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    if let Some(v) = v {
                        assert_eq!(a.completed[k][i][j].to_bits(), v.to_bits());
                    } else {
                        let x = a.completed[k][i][j];
                        assert!(x.fract() == 0.0 && (0.0..=6.0).contains(&x));
                    }
                }
            }
        }
    }

    #[test]
    fn complete_rows_copied() {
        let d = IncompleteDataset::from_rows(vec![vec![Some(1.0), Some(2.0)], vec![Some(3.0), Some(0.0)]]).unwrap();
        let s = impute_conjugate(&d, &model(), 3, 0).unwrap();
        for k in 0..3 {
            assert_eq!(s.completed[k], vec![vec![1.0, 2.0], vec![3.0, 0.0]]);
        }
    }

    #[test]
    fn unknown_pattern_lists_rows() {
        let d = IncompleteDataset::from_rows(vec![vec![None, Some(2.0)], vec![Some(3.0), Some(0.0)]]).unwrap();
        let e = impute_conjugate(&d, &model(), 1, 0).unwrap_err().to_string();
        assert!(e.contains("rows 1"), "{e}");
    }

    #[test]
    fn binomial_bound_is_exact_sup() {
        let m = model();
        let c = m.composed(&p("00")).unwrap();
        let u = odds_bound(&m.family, &c).unwrap();
        let mut best: f64 = 0.0;
        for a in 0..=6 {
            for b in 0..=6 {
                best = best.max(c.log_odds(&m.family, &[a as f64, b as f64]).exp());
            }
        }
        assert!((u - best).abs() < 1e-12 * best);
    }

    #[test]
    fn bound_below_sup_is_an_error() {
        let m = model();
        let d = IncompleteDataset::from_rows(vec![vec![None, None]; 50]).unwrap();
        let c = m.composed(&p("00")).unwrap();
        let fam = m.family.clone();
        let f = |_: &MissingPattern, x: &[f64]| c.log_odds(&fam, x).exp();
        let mut bounds = BTreeMap::new();
        bounds.insert(p("00"), odds_bound(&fam, &c).unwrap() * 0.3);
        let e = impute_rejection(
            &d,
            &m.cc_model,
            &f,
            &bounds,
            2,
            &RejectionConfig::default(),
            1,
            Default::default(),
        );
        assert!(matches!(e, Err(Error::BoundViolation { .. })));
    }

    #[test]
    fn constant_odds_accept_everything() {
        let m = model();
        let d = IncompleteDataset::from_rows(vec![vec![Some(2.0), None]; 20]).unwrap();
        let f = |_: &MissingPattern, _: &[f64]| 2.5;
        let bounds = [(p("10"), 2.5)].into_iter().collect();
        let cfg = RejectionConfig { max_attempts: 1 };
        let s = impute_rejection(&d, &m.cc_model, &f, &bounds, 3, &cfg, 4, Default::default()).unwrap();
        assert_eq!(s.m(), 3);
    }

    #[test]
    fn continuous_bounds() {
        let fam = Family::GaussianDiag { d: 1 };
        let c = ComposedOdds {
            target: p("0"),
            intercept: 0.5,
            coefficients: vec![1.0, -0.5],
        };
        // sup of x - x^2/2 is 1/2 at x = 1
        assert!((odds_bound(&fam, &c).unwrap() - 1f64.exp()).abs() < 1e-12);
        let c2 = ComposedOdds {
            coefficients: vec![1.0, 0.0],
            ..c.clone()
        };
        assert!(odds_bound(&fam, &c2).is_err());
        let fam = Family::Beta { d: 1 };
        let c3 = ComposedOdds {
            target: p("0"),
            intercept: 0.0,
            coefficients: vec![1.0, 1.0],
        };
        assert!((odds_bound(&fam, &c3).unwrap() - 0.25).abs() < 1e-12);
    }
}
