//! Browser bindings for a few treetilt operations. Every export returns a
//! JSON string; the plain `*_json` functions hold the logic so they can be
//! tested natively.

use serde_json::json;
use treetilt::rng::seeded;
use treetilt::treegraph::{count_trees, log2_count_trees, sample_tree_uniform, validate, GraphJson};
use treetilt::{Family, MissingPattern, MixtureModel, PatternGraph, TreeGraph};
use wasm_bindgen::prelude::*;

type Result<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// `|T_d|` exactly and in bits.
pub fn count_trees_json(d: usize) -> Result<String> {
    if !(1..=12).contains(&d) {
        return Err("d must be between 1 and 12".into());
    }
    let n = count_trees(d).map_err(err)?;
    let bits = log2_count_trees(d).map_err(err)?;
    Ok(json!({ "d": d, "count": n.to_string(), "log2": bits }).to_string())
}

fn tree_report(t: &TreeGraph) -> serde_json::Value {
    let moral = t.sibling_moral_graph();
    let edges: Vec<[String; 2]> = t
        .parent_map()
        .iter()
        .map(|(c, p)| [c.to_string(), p.to_string()])
        .collect();
    let cliques: Vec<Vec<String>> = moral
        .cliques
        .iter()
        .map(|c| c.iter().map(ToString::to_string).collect())
        .collect();
    json!({
        "d": t.dim(),
        "edges": edges,
        "depth": t.depth(),
        "gncmv": t.is_gncmv(),
        "cliques": cliques,
    })
}

/// A uniform draw from the tree graphs over all `2^d` patterns, with its
/// sibling-moralized cliques.
pub fn sample_tree_json(d: usize, seed: u64) -> Result<String> {
    if !(1..=6).contains(&d) {
        return Err("d must be between 1 and 6".into());
    }
    let pats = MissingPattern::all(d).map_err(err)?.into_iter().collect();
    let t = sample_tree_uniform(&pats, &mut seeded(seed)).map_err(err)?;
    Ok(tree_report(&t).to_string())
}

/// Checks a graph document and lists its violations.
pub fn validate_graph_json(text: &str) -> Result<String> {
    let gj: GraphJson = serde_json::from_str(text).map_err(err)?;
    let g = PatternGraph::from_json(&gj).map_err(err)?;
    let report = validate(&g);
    let violations: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
    let mut out = json!({ "valid": report.is_ok(), "violations": violations });
    if report.is_ok() {
        out["tree"] = tree_report(&TreeGraph::from_json(&gj).map_err(err)?);
    }
    Ok(out.to_string())
}

/// Densities of a one-dimensional Gaussian mixture before and after the
/// tilt `exp(a x + b x^2)`, on `points` grid values over `[lo, hi]`.
#[allow(clippy::too_many_arguments)]
pub fn tilt_curve_json(
    weights: &[f64],
    means: &[f64],
    vars: &[f64],
    a: f64,
    b: f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<String> {
    if points < 2 || !(hi > lo) {
        return Err("need at least two grid points and hi > lo".into());
    }
    if means.len() != weights.len() || vars.len() != weights.len() {
        return Err("weights, means and vars must have equal length".into());
    }
    let theta: Vec<Vec<f64>> = means.iter().zip(vars).map(|(m, v)| vec![*m, *v]).collect();
    let s: f64 = weights.iter().sum();
    let w: Vec<f64> = weights.iter().map(|x| x / s).collect();
    let base = MixtureModel::from_mean_params(Family::GaussianDiag { d: 1 }, w, &theta).map_err(err)?;
    let tilted = base.tilt(&[a, b]).map_err(err)?;
    let xs: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect();
    let dens = |m: &MixtureModel| -> Result<Vec<f64>> {
        xs.iter()
            .map(|x| m.log_density(&[*x]).map(f64::exp).map_err(err))
            .collect()
    };
    let comps: Vec<serde_json::Value> = tilted
        .mean_params()
        .iter()
        .zip(tilted.weights())
        .map(|(t, w)| json!({ "weight": w, "mean": t[0], "var": t[1] }))
        .collect();
    Ok(json!({
        "x": xs,
        "base": dens(&base)?,
        "tilted": dens(&tilted)?,
        "base_mean": base.mean()[0],
        "tilted_mean": tilted.mean()[0],
        "components": comps,
    })
    .to_string())
}

#[wasm_bindgen(js_name = countTrees)]
pub fn count_trees_js(d: usize) -> std::result::Result<String, JsError> {
    count_trees_json(d).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sampleTree)]
pub fn sample_tree_js(d: usize, seed: u64) -> std::result::Result<String, JsError> {
    sample_tree_json(d, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = validateGraph)]
pub fn validate_graph_js(text: &str) -> std::result::Result<String, JsError> {
    validate_graph_json(text).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = tiltCurve)]
#[allow(clippy::too_many_arguments)]
pub fn tilt_curve_js(
    weights: &[f64],
    means: &[f64],
    vars: &[f64],
    a: f64,
    b: f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> std::result::Result<String, JsError> {
    tilt_curve_json(weights, means, vars, a, b, lo, hi, points).map_err(|e| JsError::new(&e))
}
