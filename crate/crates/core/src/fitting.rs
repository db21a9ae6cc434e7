//! Complete-case mixture fitting by EM and assembly of the full-data model.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, inv_digamma};

use crate::error::{Error, Result};
use crate::expfam::{kde_fit, Family, MixtureModel};
use crate::numeric::{log_sum_exp, logit};
use crate::odds::{compose, fit_edge, ComposedOdds, EdgeOddsJson, EdgeOddsModel, OddsConfig};
use crate::par::map_indexed;
use crate::pattern::{IncompleteDataset, MissingPattern};
use crate::rng::stream;
use crate::treegraph::{GraphJson, TreeGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub min_weight: f64,
    /// Gaussian variances are floored at this fraction of the pooled variance.
    pub var_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            tol: 1e-8,
            max_iter: 500,
            min_weight: 1e-10,
            var_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: MixtureModel,
    pub loglik: f64,
    pub iterations: usize,
    /// Iterations whose log-likelihood dropped by more than round-off.
    pub monotone_violations: usize,
    pub warnings: Vec<String>,
}

/// Distinct rows with multiplicities, in a canonical order so that results
/// do not depend on row order.
struct Compressed {
    stats: Vec<Vec<f64>>,
    log_base: Vec<f64>,
    counts: Vec<f64>,
    n: f64,
}

fn compress(rows: &[Vec<f64>], family: &Family) -> Result<Compressed> {
    let mut map: HashMap<Vec<u64>, (Vec<f64>, f64)> = HashMap::new();
    for r in rows {
        if r.len() != family.dim() {
            return Err(Error::DimensionMismatch {
                expected: family.dim(),
                got: r.len(),
            });
        }
        let key = r.iter().map(|v| v.to_bits()).collect();
        map.entry(key).or_insert_with(|| (r.clone(), 0.0)).1 += 1.0;
    }
    let mut uniq: Vec<(Vec<f64>, f64)> = map.into_values().collect();
    uniq.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut c = Compressed {
        stats: Vec::with_capacity(uniq.len()),
        log_base: Vec::with_capacity(uniq.len()),
        counts: Vec::with_capacity(uniq.len()),
        n: rows.len() as f64,
    };
    let xo_full = |x: &[f64]| -> Vec<Option<f64>> { x.iter().map(|v| Some(*v)).collect() };
    for (x, cnt) in uniq {
        // dirichlet: the density at eta = 0 plus A(0) is the (zero) base
        // measure, and evaluating it checks the simplex
        let lb = if let Family::Dirichlet { .. } = family {
            let zero = vec![0.0; family.n_stats()];
            family.component_log_density(&zero, &xo_full(&x))? + family.log_partition(&zero)
        } else {
            let mut s = 0.0;
            for (j, v) in x.iter().enumerate() {
                s += family.coord_log_base(j, *v)?;
            }
            s
        };
        c.stats.push(family.stats(&x));
        c.log_base.push(lb);
        c.counts.push(cnt);
    }
    Ok(c)
}

fn comp_loglik(c: &Compressed, family: &Family, eta: &[f64], out: &mut [f64]) {
    let a = family.log_partition(eta);
    for (i, t) in c.stats.iter().enumerate() {
        out[i] = c.log_base[i] + eta.iter().zip(t).map(|(e, s)| e * s).sum::<f64>() - a;
    }
}

/// E-step: responsibilities and the observed-data log-likelihood.
fn e_step(c: &Compressed, family: &Family, model: &MixtureModel) -> (Vec<Vec<f64>>, f64) {
    let k = model.k();
    let n = c.stats.len();
    let mut lr = vec![vec![0.0; n]; k];
    for (kk, eta) in model.components().iter().enumerate() {
        comp_loglik(c, family, eta, &mut lr[kk]);
        let lw = model.weights()[kk].ln();
        for v in lr[kk].iter_mut() {
            *v += lw;
        }
    }
    let mut ll = 0.0;
    let mut buf = vec![0.0; k];
    for i in 0..n {
        for kk in 0..k {
            buf[kk] = lr[kk][i];
        }
        let z = log_sum_exp(&buf);
        ll += c.counts[i] * z;
        for kk in 0..k {
            lr[kk][i] = (lr[kk][i] - z).exp();
        }
    }
    (lr, ll)
}

/// Weighted maximum likelihood for one component from weighted statistic
/// sums; `prev` seeds the fixed-point iterations of Beta/Dirichlet.
fn m_step_component(
    family: &Family,
    w: f64,
    s: &[f64],
    prev: Option<&[f64]>,
    pooled_var: &[f64],
    cfg: &EmConfig,
) -> Vec<f64> {
    let clamp_p = |p: f64| p.clamp(1e-9, 1.0 - 1e-9);
    match family {
        Family::GaussianDiag { .. } | Family::GaussianKde { .. } => {
            let mut theta = Vec::with_capacity(s.len());
            for (j, c) in s.chunks(2).enumerate() {
                let m = c[0] / w;
                let v = (c[1] / w - m * m).max(cfg.var_floor * pooled_var[j]).max(1e-300);
                theta.push(m);
                theta.push(v);
            }
            family.natural_from_mean(&theta)
        }
        Family::BinomialProduct { trials } => s
            .iter()
            .zip(trials)
            .map(|(sx, n)| logit(clamp_p(sx / (w * f64::from(*n)))))
            .collect(),
        Family::NegativeBinomial { r } => s
            .iter()
            .zip(r)
            .map(|(sx, r)| {
                let m = sx / w;
                clamp_p(m / (r + m)).ln()
            })
            .collect(),
        Family::Pareto { scale } => s
            .iter()
            .zip(scale)
            .map(|(sl, b)| {
                let denom = sl - w * b.ln();
                let a = if denom > 0.0 { (w / denom).min(1e8) } else { 1e8 };
                -a - 1.0
            })
            .collect(),
        Family::Beta { .. } => {
            let mut out = Vec::with_capacity(s.len());
            for (j, c) in s.chunks(2).enumerate() {
                let start = prev.map(|p| [p[2 * j] + 1.0, p[2 * j + 1] + 1.0]);
                let a = dirichlet_mle(&[c[0] / w, c[1] / w], start.as_ref().map(|v| &v[..]));
                out.push(a[0] - 1.0);
                out.push(a[1] - 1.0);
            }
            out
        }
        Family::Dirichlet { .. } => {
            let ml: Vec<f64> = s.iter().map(|v| v / w).collect();
            let start: Option<Vec<f64>> = prev.map(|p| p.iter().map(|e| e + 1.0).collect());
            dirichlet_mle(&ml, start.as_deref())
                .into_iter()
                .map(|a| a - 1.0)
                .collect()
        }
    }
}

/// Fixed-point maximum likelihood for Dirichlet concentrations given the
/// mean log of each cell: `alpha_j <- psi^{-1}(psi(sum alpha) + mean_log_j)`.
pub fn dirichlet_mle(mean_log: &[f64], start: Option<&[f64]>) -> Vec<f64> {
    let mut a: Vec<f64> = match start {
        Some(s) => s.to_vec(),
        None => vec![1.0; mean_log.len()],
    };
    for _ in 0..10_000 {
        let psum = digamma(a.iter().sum());
        let next: Vec<f64> = mean_log
            .iter()
            .map(|l| inv_digamma(psum + l).clamp(1e-8, 1e8))
            .collect();
        let delta = next
            .iter()
            .zip(&a)
            .map(|(x, y)| (x - y).abs() / y.max(1.0))
            .fold(0.0, f64::max);
        a = next;
        if delta < 1e-12 {
            break;
        }
    }
    a
}

fn m_step(
    c: &Compressed,
    family: &Family,
    resp: &[Vec<f64>],
    prev: Option<&MixtureModel>,
    pooled_var: &[f64],
    cfg: &EmConfig,
) -> Option<MixtureModel> {
    let k = resp.len();
    let mut weights = Vec::with_capacity(k);
    let mut comps = Vec::with_capacity(k);
    for (kk, r) in resp.iter().enumerate() {
        let mut w = 0.0;
        let mut s = vec![0.0; family.n_stats()];
        for (i, t) in c.stats.iter().enumerate() {
            let wi = c.counts[i] * r[i];
            w += wi;
            for (a, b) in s.iter_mut().zip(t) {
                *a += wi * b;
            }
        }
        if !(w > 0.0) {
            return None;
        }
        weights.push(w / c.n);
        comps.push(m_step_component(
            family,
            w,
            &s,
            prev.map(|m| m.components()[kk].as_slice()),
            pooled_var,
            cfg,
        ));
    }
    let tot: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= tot;
    }
    MixtureModel::new(family.clone(), weights, comps).ok()
}

fn pooled_variance(rows: &[Vec<f64>], d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let s = crate::numeric::sd(&col);
            if s > 0.0 {
                s * s
            } else {
                1.0
            }
        })
        .collect()
}

/// Runs EM from a starting model until the relative log-likelihood gain
/// falls below `tol`.
fn em_from(c: &Compressed, family: &Family, init: MixtureModel, pooled_var: &[f64], cfg: &EmConfig) -> Result<EmFit> {
    let mut model = init;
    let mut warnings = Vec::new();
    let (mut resp, mut ll) = e_step(c, family, &model);
    let mut violations = 0;
    let mut iters = 0;
    while iters < cfg.max_iter {
        iters += 1;
        let Some(next) = m_step(c, family, &resp, Some(&model), pooled_var, cfg) else {
            return Err(Error::Fit("a mixture component lost all responsibility".into()));
        };
        let next = prune(next, cfg.min_weight, &mut warnings);
        let (r2, ll2) = e_step(c, family, &next);
        if ll2 < ll - 1e-9 * ll.abs().max(1.0) {
            violations += 1;
        }
        let gain = ll2 - ll;
        model = next;
        resp = r2;
        ll = ll2;
        if gain.abs() <= cfg.tol * ll.abs().max(1.0) {
            break;
        }
    }
    if !ll.is_finite() {
        return Err(Error::Fit("EM log-likelihood is not finite".into()));
    }
    Ok(EmFit {
        model,
        loglik: ll,
        iterations: iters,
        monotone_violations: violations,
        warnings,
    })
}

fn prune(m: MixtureModel, min_weight: f64, warnings: &mut Vec<String>) -> MixtureModel {
    if m.k() == 1 || m.weights().iter().all(|w| *w >= min_weight) {
        return m;
    }
    let keep: Vec<usize> = (0..m.k()).filter(|&k| m.weights()[k] >= min_weight).collect();
    warnings.push(format!(
        "pruned {} degenerate component(s) with weight below {min_weight:e}",
        m.k() - keep.len()
    ));
    let tot: f64 = keep.iter().map(|&k| m.weights()[k]).sum();
    MixtureModel::new(
        m.family().clone(),
        keep.iter().map(|&k| m.weights()[k] / tot).collect(),
        keep.iter().map(|&k| m.components()[k].clone()).collect(),
    )
    .expect("pruned mixture stays valid")
}

/// Random responsibilities from a symmetric Dirichlet(1) per distinct row.
fn random_start<R: Rng + ?Sized>(
    c: &Compressed,
    family: &Family,
    k: usize,
    pooled_var: &[f64],
    cfg: &EmConfig,
    rng: &mut R,
) -> Option<MixtureModel> {
    let n = c.stats.len();
    let mut resp = vec![vec![0.0; n]; k];
    for i in 0..n {
        let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
        let s: f64 = e.iter().sum();
        for kk in 0..k {
            resp[kk][i] = e[kk] / s;
        }
    }
    m_step(c, family, &resp, None, pooled_var, cfg)
}

/// Fits a `k`-component mixture to complete rows by EM, keeping the best of
/// `cfg.restarts` random starts. Restart `i` uses stream `i` of `seed`.
pub fn fit_cc_em(rows: &[Vec<f64>], family: &Family, k: usize, cfg: &EmConfig, seed: u64) -> Result<EmFit> {
    family.validate()?;
    if k == 0 {
        return Err(Error::Config("number of components must be at least 1".into()));
    }
    if rows.is_empty() {
        return Err(Error::TooFewRows {
            pattern: "complete cases".into(),
            rows: 0,
            required: 1,
        });
    }
    let need = k * family.params_per_component().max(1);
    if rows.len() < need {
        return Err(Error::TooFewRows {
            pattern: "complete cases".into(),
            rows: rows.len(),
            required: need,
        });
    }
    let c = compress(rows, family)?;
    let pooled = pooled_variance(rows, family.dim());
    let restarts = if k == 1 { 1 } else { cfg.restarts.max(1) };
    let fits = map_indexed(restarts, |i| {
        let mut rng = stream(seed, &[0xE11, i as u64]);
        let init = random_start(&c, family, k, &pooled, cfg, &mut rng)
            .ok_or_else(|| Error::Fit("could not initialize EM".into()))?;
        em_from(&c, family, init, &pooled, cfg)
    });
    let mut best: Option<EmFit> = None;
    let mut last_err = None;
    for f in fits {
        match f {
            Ok(f) => {
                if best.as_ref().map_or(true, |b| f.loglik > b.loglik) {
                    best = Some(f);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let mut best = best.ok_or_else(|| last_err.unwrap())?;
    best.model.canonicalize();
    Ok(best)
}

/// EM started from a given model (warm start), e.g. the full-data estimate
/// inside a bootstrap.
pub fn fit_cc_em_from(rows: &[Vec<f64>], init: &MixtureModel, cfg: &EmConfig) -> Result<EmFit> {
    let family = init.family();
    let c = compress(rows, family)?;
    let pooled = pooled_variance(rows, family.dim());
    let mut f = em_from(&c, family, init.clone(), &pooled, cfg)?;
    f.model.canonicalize();
    Ok(f)
}

/// Log-likelihood of complete rows under a mixture.
pub fn loglik(rows: &[Vec<f64>], model: &MixtureModel) -> Result<f64> {
    let mut s = 0.0;
    for r in rows {
        s += model.log_density(r)?;
    }
    Ok(s)
}

pub fn bic(loglik: f64, n_params: usize, n: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * (n as f64).ln()
}

/// Chooses the number of components minimizing BIC; returns the choice and
/// every `(k, bic)` pair.
pub fn select_k_bic(
    rows: &[Vec<f64>],
    family: &Family,
    ks: &[usize],
    cfg: &EmConfig,
    seed: u64,
) -> Result<(usize, Vec<(usize, f64)>)> {
    if ks.is_empty() {
        return Err(Error::Config("empty range of component counts".into()));
    }
    if ks.len() == 1 {
        return Ok((ks[0], vec![]));
    }
    let mut table = Vec::new();
    for &k in ks {
        let fit = fit_cc_em(rows, family, k, cfg, seed)?;
        table.push((k, bic(fit.loglik, fit.model.n_params(), rows.len())));
    }
    let best = table.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
    Ok((best, table))
}

/// How sensitivity offsets enter the composed odds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    /// `rho` on the linear statistics of the target pattern's missing
    /// coordinates.
    #[default]
    Target,
    /// Each edge on the path adds `rho` on its child's missing coordinates.
    PerEdge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub k: usize,
    pub em: EmConfig,
    pub odds: OddsConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 1,
            em: EmConfig::default(),
            odds: OddsConfig::default(),
        }
    }
}

/// Complete-case mixture, edge odds, and every pattern's derived joint.
#[derive(Debug, Clone)]
pub struct FittedFullModel {
    pub family: Family,
    pub tree: TreeGraph,
    pub cc_model: MixtureModel,
    pub edges: BTreeMap<MissingPattern, EdgeOddsModel>,
    pub pattern_probs: BTreeMap<MissingPattern, f64>,
    pub rho: Vec<f64>,
    pub perturb_mode: PerturbMode,
    pub warnings: Vec<String>,
    derived: BTreeMap<MissingPattern, std::result::Result<MixtureModel, String>>,
}

impl PartialEq for FittedFullModel {
    fn eq(&self, o: &Self) -> bool {
        self.family == o.family
            && self.tree == o.tree
            && self.cc_model == o.cc_model
            && self.edges == o.edges
            && self.pattern_probs == o.pattern_probs
            && self.rho == o.rho
            && self.perturb_mode == o.perturb_mode
            && self.derived == o.derived
    }
}

impl FittedFullModel {
    /// Assembles a model from parts and computes every derived joint.
    pub fn assemble(
        tree: TreeGraph,
        cc_model: MixtureModel,
        edges: BTreeMap<MissingPattern, EdgeOddsModel>,
        pattern_probs: BTreeMap<MissingPattern, f64>,
    ) -> Result<Self> {
        let family = cc_model.family().clone();
        if family.dim() != tree.dim() {
            return Err(Error::DimensionMismatch {
                expected: tree.dim(),
                got: family.dim(),
            });
        }
        for r in tree.patterns() {
            if !r.is_complete() && !edges.contains_key(r) {
                return Err(Error::InvalidModel(format!("no edge model for pattern {r}")));
            }
        }
        let mut m = Self {
            rho: vec![0.0; family.dim()],
            family,
            tree,
            cc_model,
            edges,
            pattern_probs,
            perturb_mode: PerturbMode::Target,
            warnings: Vec::new(),
            derived: BTreeMap::new(),
        };
        m.recompute_derived()?;
        Ok(m)
    }

    /// Composed odds of `r` plus the sensitivity offset.
    pub fn composed(&self, r: &MissingPattern) -> Result<ComposedOdds> {
        let mut c = compose(&self.tree, &self.edges, &self.family, r)?;
        if self.rho.iter().any(|v| *v != 0.0) {
            let path = self.tree.path_to_source(r)?;
            let groups: Vec<MissingPattern> = match self.perturb_mode {
                PerturbMode::Target => vec![*r],
                PerturbMode::PerEdge => path.into_iter().skip(1).collect(),
            };
            for g in groups {
                for j in g.missing() {
                    c.coefficients[self.family.linear_stat(j)] += self.rho[j];
                }
            }
        }
        Ok(c)
    }

    pub(crate) fn recompute_derived(&mut self) -> Result<()> {
        let mut derived = BTreeMap::new();
        for r in self.tree.patterns() {
            let c = self.composed(r)?;
            let d = self.cc_model.tilt(&c.coefficients).map_err(|e| e.to_string());
            derived.insert(*r, d);
        }
        self.derived = derived;
        Ok(())
    }

    /// `p(x | R = r)`, or the per-pattern tilt error.
    pub fn derived(&self, r: &MissingPattern) -> Result<&MixtureModel> {
        match self.derived.get(r) {
            Some(Ok(m)) => Ok(m),
            Some(Err(e)) => Err(Error::InvalidModel(format!("pattern {r}: {e}"))),
            None => Err(Error::InvalidPattern(format!("pattern {r} is not in the model"))),
        }
    }

    pub fn derived_errors(&self) -> Vec<(MissingPattern, String)> {
        self.derived
            .iter()
            .filter_map(|(r, d)| d.as_ref().err().map(|e| (*r, e.clone())))
            .collect()
    }

    /// Flat parameter vector: cc weights and familiar parameters per
    /// component, then each edge's intercept and active coefficients.
    /// Every entry carries the pattern block it belongs to.
    pub fn parameters(&self) -> Vec<Parameter> {
        let mut out = Vec::new();
        let src = self.tree.source();
        for (k, w) in self.cc_model.weights().iter().enumerate() {
            out.push(Parameter {
                name: format!("w[{}]", k + 1),
                group: ParamGroup::Weight,
                block: src,
                value: *w,
            });
        }
        let names = theta_names(&self.family);
        for (k, th) in self.cc_model.mean_params().iter().enumerate() {
            for (nm, v) in names.iter().zip(th) {
                out.push(Parameter {
                    name: format!("{nm}[{}]", k + 1),
                    group: ParamGroup::Theta,
                    block: src,
                    value: *v,
                });
            }
        }
        let stat_names = self.family.stat_names();
        for (r, e) in &self.edges {
            let tag = format!("{}<-{}", e.child, e.parent);
            out.push(Parameter {
                name: format!("beta0[{tag}]"),
                group: ParamGroup::Intercept,
                block: *r,
                value: e.intercept,
            });
            for i in crate::odds::active_stats(&self.family, r) {
                out.push(Parameter {
                    name: format!("beta[{tag}].{}", stat_names[i]),
                    group: ParamGroup::Coefficient,
                    block: *r,
                    value: e.coefficients[i],
                });
            }
        }
        out
    }

    pub fn to_json(&self) -> ModelJson {
        ModelJson {
            format: MODEL_FORMAT.into(),
            family: self.family.clone(),
            tree: self.tree.to_json(),
            cc_model: self.cc_model.clone(),
            edges: self.edges.values().map(|e| e.to_json(&self.family)).collect(),
            pattern_probs: self.pattern_probs.iter().map(|(r, p)| (r.to_string(), *p)).collect(),
            rho: self.rho.clone(),
            perturb_mode: self.perturb_mode,
            provenance: None,
        }
    }

    pub fn from_json(j: &ModelJson) -> Result<Self> {
        if j.format != MODEL_FORMAT {
            return Err(Error::InvalidModel(format!("unknown model format {:?}", j.format)));
        }
        if j.cc_model.family() != &j.family {
            return Err(Error::InvalidModel("cc_model family differs from model family".into()));
        }
        let tree = TreeGraph::from_json(&j.tree)?;
        let mut edges = BTreeMap::new();
        for e in &j.edges {
            let m = EdgeOddsModel::from_json(&j.family, e)?;
            edges.insert(m.child, m);
        }
        let mut probs = BTreeMap::new();
        for (k, v) in &j.pattern_probs {
            probs.insert(k.parse::<MissingPattern>()?, *v);
        }
        let mut m = Self::assemble(tree, j.cc_model.clone(), edges, probs)?;
        if j.rho.len() != m.family.dim() {
            return Err(Error::DimensionMismatch {
                expected: m.family.dim(),
                got: j.rho.len(),
            });
        }
        m.rho = j.rho.clone();
        m.perturb_mode = j.perturb_mode;
        m.recompute_derived()?;
        Ok(m)
    }
}

pub const MODEL_FORMAT: &str = "treetilt-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelJson {
    pub format: String,
    pub family: Family,
    pub tree: GraphJson,
    pub cc_model: MixtureModel,
    pub edges: Vec<EdgeOddsJson>,
    pub pattern_probs: BTreeMap<String, f64>,
    pub rho: Vec<f64>,
    #[serde(default)]
    pub perturb_mode: PerturbMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamGroup {
    Weight,
    Theta,
    Intercept,
    Coefficient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub group: ParamGroup,
    /// Pattern whose estimation block holds the parameter (`1_d` for the
    /// complete-case mixture).
    pub block: MissingPattern,
    pub value: f64,
}

fn theta_names(family: &Family) -> Vec<String> {
    (1..=family.dim())
        .flat_map(|c| match family {
            Family::GaussianDiag { .. } | Family::GaussianKde { .. } => {
                vec![format!("mu{c}"), format!("var{c}")]
            }
            Family::BinomialProduct { .. } | Family::NegativeBinomial { .. } => {
                vec![format!("p{c}")]
            }
            Family::Pareto { .. } | Family::Dirichlet { .. } => vec![format!("alpha{c}")],
            Family::Beta { .. } => vec![format!("alpha{c}"), format!("beta{c}")],
        })
        .collect()
}

/// Fits the complete-case model: EM for parametric families, a kernel
/// density estimate for `gaussian-kde` (with the family's bandwidth).
pub fn fit_cc(rows: &[Vec<f64>], family: &Family, cfg: &FitConfig, seed: u64) -> Result<EmFit> {
    if let Family::GaussianKde { bandwidth } = family {
        let m = kde_fit(rows, Some(bandwidth))?;
        return Ok(EmFit {
            loglik: loglik(rows, &m)?,
            model: m,
            iterations: 0,
            monotone_violations: 0,
            warnings: vec![],
        });
    }
    fit_cc_em(rows, family, cfg.k, &cfg.em, seed)
}

/// Fits every edge of `tree` (in parallel).
pub fn fit_edges(
    data: &IncompleteDataset,
    tree: &TreeGraph,
    family: &Family,
    cfg: &OddsConfig,
) -> Result<BTreeMap<MissingPattern, EdgeOddsModel>> {
    let kids: Vec<MissingPattern> = tree.parent_map().keys().copied().collect();
    let fits = map_indexed(kids.len(), |i| {
        let r = kids[i];
        fit_edge(data, r, tree.parent(&r).unwrap(), family, cfg)
    });
    let mut out = BTreeMap::new();
    for (r, f) in kids.into_iter().zip(fits) {
        out.insert(r, f?);
    }
    Ok(out)
}

/// Checks that every tree pattern has enough rows in `data`.
pub fn check_patterns(data: &IncompleteDataset, tree: &TreeGraph, min_rows: usize) -> Result<()> {
    let counts = data.pattern_counts();
    for r in tree.patterns() {
        let n = counts.get(r).copied().unwrap_or(0);
        if n < min_rows.max(1) {
            return Err(Error::TooFewRows {
                pattern: r.to_string(),
                rows: n,
                required: min_rows.max(1),
            });
        }
    }
    Ok(())
}

/// Fits the full-data model under `tree`.
pub fn fit_full(
    data: &IncompleteDataset,
    tree: &TreeGraph,
    family: &Family,
    cfg: &FitConfig,
    seed: u64,
) -> Result<FittedFullModel> {
    fit_full_with(data, tree, family, cfg, seed, None)
}

/// As [`fit_full`]; with `init`, EM is warm-started from that mixture
/// instead of random restarts.
pub fn fit_full_with(
    data: &IncompleteDataset,
    tree: &TreeGraph,
    family: &Family,
    cfg: &FitConfig,
    seed: u64,
    init: Option<&MixtureModel>,
) -> Result<FittedFullModel> {
    if data.dim() != tree.dim() || family.dim() != tree.dim() {
        return Err(Error::DimensionMismatch {
            expected: tree.dim(),
            got: if data.dim() != tree.dim() {
                data.dim()
            } else {
                family.dim()
            },
        });
    }
    check_patterns(data, tree, cfg.odds.min_rows)?;
    let cc_rows = data.complete_rows();
    let em = match init {
        Some(m) if !matches!(family, Family::GaussianKde { .. }) => fit_cc_em_from(&cc_rows, m, &cfg.em)?,
        _ => fit_cc(&cc_rows, family, cfg, seed)?,
    };
    let edges = fit_edges(data, tree, family, &cfg.odds)?;
    let counts = data.pattern_counts();
    let mut warnings = em.warnings.clone();
    let outside: Vec<String> = counts
        .keys()
        .filter(|r| !tree.contains(r))
        .map(ToString::to_string)
        .collect();
    if !outside.is_empty() {
        warnings.push(format!(
            "data patterns outside the tree are ignored: {}",
            outside.join(", ")
        ));
    }
    for e in edges.values().filter(|e| e.separation) {
        warnings.push(format!(
            "edge {}<-{}: near-separation, ridge {} used",
            e.child, e.parent, cfg.odds.separation_ridge
        ));
    }
    let total: usize = tree
        .patterns()
        .iter()
        .map(|r| counts.get(r).copied().unwrap_or(0))
        .sum();
    let probs = tree
        .patterns()
        .iter()
        .map(|r| (*r, counts.get(r).copied().unwrap_or(0) as f64 / total as f64))
        .collect();
    let mut m = FittedFullModel::assemble(tree.clone(), em.model, edges, probs)?;
    m.warnings = warnings;
    Ok(m)
}
