//! Sensitivity analysis: exponential-tilt perturbation of the selection
//! odds and re-estimation across a set of trees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{fit_edges, FitConfig, FittedFullModel};
use crate::par::map_indexed;
use crate::pattern::{format_value, IncompleteDataset};
use crate::treegraph::TreeGraph;

/// Adds `rho` to the model's sensitivity offsets and recomputes every
/// derived joint. Patterns whose perturbed tilt leaves the family domain
/// keep their error in [`FittedFullModel::derived_errors`].
pub fn perturb(model: &FittedFullModel, rho: &[f64]) -> Result<FittedFullModel> {
    let d = model.family.dim();
    if rho.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: rho.len(),
        });
    }
    if let Some(j) = rho.iter().position(|v| !v.is_finite()) {
        return Err(Error::Config(format!("rho[{}] is not finite", j + 1)));
    }
    let mut m = model.clone();
    for (a, b) in m.rho.iter_mut().zip(rho) {
        *a += b;
    }
    m.recompute_derived()?;
    Ok(m)
}

/// Scalar summary of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SweepFunctional {
    /// Full-data mean of one coordinate (1-based):
    /// `sum_r P(R = r) E[X_j | R = r]`.
    Mean { coordinate: usize },
}

impl SweepFunctional {
    pub fn evaluate(&self, m: &FittedFullModel) -> Result<f64> {
        match self {
            SweepFunctional::Mean { coordinate } => {
                let j = coordinate
                    .checked_sub(1)
                    .filter(|j| *j < m.family.dim())
                    .ok_or_else(|| Error::Config(format!("coordinate {coordinate} out of range")))?;
                let mut s = 0.0;
                for (r, p) in &m.pattern_probs {
                    s += p * m.derived(r)?.mean()[j];
                }
                Ok(s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Each entry is a length-d rho vector.
    pub rho: Vec<Vec<f64>>,
    /// Named alternative trees; empty means the base model's tree only.
    #[serde(skip)]
    pub trees: Vec<(String, TreeGraph)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub tree_id: String,
    pub rho: Vec<f64>,
    pub value: Option<f64>,
    pub status: String,
}

/// One row per (tree, rho). Tree rows refit the edges on `data` and keep the
/// base complete-case model; rho rows perturb that fit. Failed cells are
/// kept with their error as status.
pub fn sweep(
    data: &IncompleteDataset,
    base: &FittedFullModel,
    spec: &SweepSpec,
    functional: &SweepFunctional,
    cfg: &FitConfig,
) -> Result<Vec<SweepRow>> {
    let d = base.family.dim();
    let rhos: Vec<Vec<f64>> = if spec.rho.is_empty() {
        vec![vec![0.0; d]]
    } else {
        spec.rho.clone()
    };
    let trees: Vec<(String, Option<TreeGraph>)> = if spec.trees.is_empty() {
        vec![("base".into(), None)]
    } else {
        spec.trees.iter().map(|(n, t)| (n.clone(), Some(t.clone()))).collect()
    };
    let refits = map_indexed(trees.len(), |i| -> Result<FittedFullModel> {
        match &trees[i].1 {
            None => Ok(base.clone()),
            Some(t) => {
                let edges = fit_edges(data, t, &base.family, &cfg.odds)?;
                let counts = data.pattern_counts();
                let total: usize = t.patterns().iter().map(|r| counts.get(r).copied().unwrap_or(0)).sum();
                let probs = t
                    .patterns()
                    .iter()
                    .map(|r| (*r, counts.get(r).copied().unwrap_or(0) as f64 / total.max(1) as f64))
                    .collect();
                let mut m = FittedFullModel::assemble(t.clone(), base.cc_model.clone(), edges, probs)?;
                m.perturb_mode = base.perturb_mode;
                Ok(m)
            }
        }
    });
    let cells: Vec<(usize, usize)> = (0..trees.len())
        .flat_map(|t| (0..rhos.len()).map(move |r| (t, r)))
        .collect();
    let rows = map_indexed(cells.len(), |c| {
        let (t, r) = cells[c];
        let result = refits[t]
            .as_ref()
            .map_err(|e| Error::Fit(e.to_string()))
            .and_then(|m| perturb(m, &rhos[r]))
            .and_then(|m| functional.evaluate(&m));
        let (value, status) = match result {
            Ok(v) => (Some(v), "ok".to_string()),
            Err(e) => (None, format!("error: {e}")),
        };
        SweepRow {
            tree_id: trees[t].0.clone(),
            rho: rhos[r].clone(),
            value,
            status,
        }
    });
    Ok(rows)
}

/// Long-format CSV: `tree_id,rho1..rhod,value,status`.
pub fn sweep_csv(rows: &[SweepRow], d: usize) -> String {
    let mut s = String::from("tree_id");
    for j in 1..=d {
        s.push_str(&format!(",rho{j}"));
    }
    s.push_str(",value,status\n");
    for r in rows {
        s.push_str(&r.tree_id);
        for v in &r.rho {
            s.push(',');
            s.push_str(&format_value(*v));
        }
        s.push(',');
        if let Some(v) = r.value {
            s.push_str(&format_value(v));
        }
        s.push(',');
        s.push_str(&csv_field(&r.status));
        s.push('\n');
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::{Family, MixtureModel};
    use crate::odds::EdgeOddsModel;
    use crate::pattern::MissingPattern;
    use std::collections::BTreeMap;

    fn p(s: &str) -> MissingPattern {
        s.parse().unwrap()
    }

    fn one_d(prob: f64) -> FittedFullModel {
        let fam = Family::BinomialProduct { trials: vec![10] };
        let cc = MixtureModel::from_mean_params(fam.clone(), vec![1.0], &[vec![prob]]).unwrap();
        let mut pm = BTreeMap::new();
        pm.insert(p("0"), p("1"));
        let tree = TreeGraph::from_parent_map(1, [p("1"), p("0")].into_iter().collect::<Vec<_>>(), pm).unwrap();
        let mut edges = BTreeMap::new();
        edges.insert(
            p("0"),
            EdgeOddsModel::new(&fam, p("0"), p("1"), 0.3, vec![0.0]).unwrap(),
        );
        FittedFullModel::assemble(tree, cc, edges, [(p("1"), 0.6), (p("0"), 0.4)].into_iter().collect()).unwrap()
    }

    #[test]
    fn log3_tilt_gives_three_quarters() {
        let m = perturb(&one_d(0.5), &[3f64.ln()]).unwrap();
        let th = m.derived(&p("0")).unwrap().mean_params();
        assert!((th[0][0] - 0.75).abs() < 1e-12);
        assert_eq!(m.derived(&p("1")).unwrap(), &m.cc_model);
    }

    #[test]
    fn zero_is_identity_and_additive() {
        let m = one_d(0.3);
        assert_eq!(perturb(&m, &[0.0]).unwrap(), m);
        let a = perturb(&perturb(&m, &[0.2]).unwrap(), &[-0.5]).unwrap();
        let b = perturb(&m, &[0.2 - 0.5]).unwrap();
        let (x, y) = (a.derived(&p("0")).unwrap(), b.derived(&p("0")).unwrap());
        assert!((x.components()[0][0] - y.components()[0][0]).abs() < 1e-12);
    }

    #[test]
    fn sweep_rows_and_monotone_mean() {
        let m = one_d(0.4);
        let data = IncompleteDataset::from_rows(vec![vec![Some(3.0)], vec![None]]).unwrap();
        let spec = SweepSpec {
            rho: vec![vec![-0.2], vec![0.0], vec![0.2], vec![f64::NAN]],
            trees: vec![],
        };
        let rows = sweep(
            &data,
            &m,
            &spec,
            &SweepFunctional::Mean { coordinate: 1 },
            &FitConfig::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].value.unwrap() < rows[1].value.unwrap());
        assert!(rows[1].value.unwrap() < rows[2].value.unwrap());
        assert!(rows[3].value.is_none() && rows[3].status.starts_with("error"));
        let csv = sweep_csv(&rows, 1);
        assert_eq!(csv.lines().count(), 5);
        // rho = 0 row equals the base functional
        let base = SweepFunctional::Mean { coordinate: 1 }.evaluate(&m).unwrap();
        assert_eq!(rows[1].value.unwrap(), base);
    }
}
