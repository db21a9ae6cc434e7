//! Exponential-family components, mixtures, and closed-form tilting.
//!
//! Components are stored by natural parameter. Every family except the
//! Dirichlet factors across coordinates within a component, with
//! `stats_per_coord` sufficient statistics per coordinate laid out
//! contiguously (coordinate-major). Tilting a component by `gamma` adds
//! `gamma` to its natural parameter and reweights the mixture by the change
//! in log-partition.

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, logit, normalize_log_weights, sigmoid, softplus};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Family {
    GaussianDiag {
        d: usize,
    },
    BinomialProduct {
        trials: Vec<u32>,
    },
    /// Failure count before `r` successes; natural parameter `log p`.
    NegativeBinomial {
        r: Vec<f64>,
    },
    /// Pareto with known scale per coordinate; statistic `log x`.
    Pareto {
        scale: Vec<f64>,
    },
    Beta {
        d: usize,
    },
    /// Dirichlet over the full vector, which must lie on the simplex.
    Dirichlet {
        d: usize,
    },
    /// Equal-weight Gaussian kernels; `bandwidth` records the fitted `h`.
    GaussianKde {
        bandwidth: Vec<f64>,
    },
}

impl Family {
    pub fn dim(&self) -> usize {
        match self {
            Family::GaussianDiag { d } | Family::Beta { d } | Family::Dirichlet { d } => *d,
            Family::BinomialProduct { trials } => trials.len(),
            Family::NegativeBinomial { r } => r.len(),
            Family::Pareto { scale } => scale.len(),
            Family::GaussianKde { bandwidth } => bandwidth.len(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::GaussianDiag { .. } => "gaussian-diag",
            Family::BinomialProduct { .. } => "binomial-product",
            Family::NegativeBinomial { .. } => "negative-binomial",
            Family::Pareto { .. } => "pareto",
            Family::Beta { .. } => "beta",
            Family::Dirichlet { .. } => "dirichlet",
            Family::GaussianKde { .. } => "gaussian-kde",
        }
    }

    /// The family over the coordinate subset `coords` (product families).
    pub fn restrict(&self, coords: &[usize]) -> Result<Family> {
        let pick = |v: &[f64]| coords.iter().map(|&j| v[j]).collect::<Vec<f64>>();
        Ok(match self {
            Family::GaussianDiag { .. } => Family::GaussianDiag { d: coords.len() },
            Family::BinomialProduct { trials } => Family::BinomialProduct {
                trials: coords.iter().map(|&j| trials[j]).collect(),
            },
            Family::NegativeBinomial { r } => Family::NegativeBinomial { r: pick(r) },
            Family::Pareto { scale } => Family::Pareto { scale: pick(scale) },
            Family::Beta { .. } => Family::Beta { d: coords.len() },
            Family::GaussianKde { bandwidth } => Family::GaussianKde {
                bandwidth: pick(bandwidth),
            },
            Family::Dirichlet { .. } => {
                return Err(Error::InvalidModel(
                    "dirichlet has no coordinate-subset restriction".into(),
                ))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidModel(format!("{}: {what}", self.name())));
        if self.dim() == 0 {
            return bad("dimension must be at least 1");
        }
        match self {
            Family::BinomialProduct { trials } if trials.iter().any(|n| *n == 0) => bad("trial counts must be >= 1"),
            Family::NegativeBinomial { r } if r.iter().any(|v| !(*v > 0.0) || !v.is_finite()) => {
                bad("r must be positive")
            }
            Family::Pareto { scale } if scale.iter().any(|v| !(*v > 0.0) || !v.is_finite()) => {
                bad("scale must be positive")
            }
            Family::GaussianKde { bandwidth } if bandwidth.iter().any(|v| !(*v > 0.0) || !v.is_finite()) => {
                bad("bandwidth must be positive")
            }
            Family::Dirichlet { d } if *d < 2 => bad("dirichlet needs d >= 2"),
            _ => Ok(()),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Family::BinomialProduct { .. } | Family::NegativeBinomial { .. })
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, Family::GaussianDiag { .. } | Family::GaussianKde { .. })
    }

    pub fn stats_per_coord(&self) -> usize {
        match self {
            Family::GaussianDiag { .. } | Family::GaussianKde { .. } | Family::Beta { .. } => 2,
            _ => 1,
        }
    }

    pub fn n_stats(&self) -> usize {
        self.dim() * self.stats_per_coord()
    }

    /// Indices of coordinate `j`'s statistics in the full statistic vector.
    pub fn stat_range(&self, j: usize) -> std::ops::Range<usize> {
        let s = self.stats_per_coord();
        j * s..(j + 1) * s
    }

    /// Index of the statistic that is linear in coordinate `j` (for Pareto,
    /// Beta and Dirichlet the statistic is `log x_j`).
    pub fn linear_stat(&self, j: usize) -> usize {
        self.stat_range(j).start
    }

    pub fn stat_names(&self) -> Vec<String> {
        (0..self.dim())
            .flat_map(|j| {
                let c = j + 1;
                match self {
                    Family::GaussianDiag { .. } | Family::GaussianKde { .. } => {
                        vec![format!("x{c}"), format!("x{c}^2")]
                    }
                    Family::BinomialProduct { .. } | Family::NegativeBinomial { .. } => {
                        vec![format!("x{c}")]
                    }
                    Family::Pareto { .. } | Family::Dirichlet { .. } => vec![format!("log(x{c})")],
                    Family::Beta { .. } => vec![format!("log(x{c})"), format!("log(1-x{c})")],
                }
            })
            .collect()
    }

    /// Finite support of coordinate `j`, for binomial families.
    pub fn coord_support(&self, j: usize) -> Option<Vec<f64>> {
        match self {
            Family::BinomialProduct { trials } => Some((0..=trials[j]).map(f64::from).collect()),
            _ => None,
        }
    }

    /// Writes coordinate `j`'s sufficient statistics for value `x`.
    pub fn coord_stats(&self, j: usize, x: f64, out: &mut [f64]) {
        let _ = j;
        match self {
            Family::GaussianDiag { .. } | Family::GaussianKde { .. } => {
                out[0] = x;
                out[1] = x * x;
            }
            Family::BinomialProduct { .. } | Family::NegativeBinomial { .. } => out[0] = x,
            Family::Pareto { .. } | Family::Dirichlet { .. } => out[0] = x.ln(),
            Family::Beta { .. } => {
                out[0] = x.ln();
                out[1] = (-x).ln_1p();
            }
        }
    }

    /// Full statistic vector `T(x)`.
    pub fn stats(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_stats()];
        for (j, &v) in x.iter().enumerate() {
            let r = self.stat_range(j);
            self.coord_stats(j, v, &mut out[r]);
        }
        out
    }

    /// Support check for one coordinate value; returns `log h_j(x)`.
    /// Dirichlet base measure is constant, and the simplex is checked on the
    /// whole vector elsewhere.
    pub fn coord_log_base(&self, j: usize, x: f64) -> Result<f64> {
        let err = || Error::Support {
            coordinate: j,
            value: x,
        };
        if !x.is_finite() {
            return Err(err());
        }
        match self {
            Family::GaussianDiag { .. } | Family::GaussianKde { .. } => Ok(-LN_SQRT_2PI),
            Family::BinomialProduct { trials } => {
                let n = f64::from(trials[j]);
                if x < 0.0 || x > n || x.fract() != 0.0 {
                    return Err(err());
                }
                Ok(ln_gamma(n + 1.0) - ln_gamma(x + 1.0) - ln_gamma(n - x + 1.0))
            }
            Family::NegativeBinomial { r } => {
                if x < 0.0 || x.fract() != 0.0 {
                    return Err(err());
                }
                Ok(ln_gamma(x + r[j]) - ln_gamma(r[j]) - ln_gamma(x + 1.0))
            }
            Family::Pareto { scale } => {
                if x < scale[j] {
                    return Err(err());
                }
                Ok(0.0)
            }
            Family::Beta { .. } | Family::Dirichlet { .. } => {
                if x <= 0.0 || x >= 1.0 {
                    return Err(err());
                }
                Ok(0.0)
            }
        }
    }

    /// Reason the natural parameter slice of coordinate `j` is outside the
    /// domain, if it is.
    fn coord_domain_error(&self, eta: &[f64]) -> Option<String> {
        if eta.iter().any(|v| !v.is_finite()) {
            return Some("non-finite natural parameter".into());
        }
        match self {
            Family::GaussianDiag { .. } | Family::GaussianKde { .. } if eta[1] >= 0.0 => Some(format!(
                "precision term must be negative, got 1/sigma^2 = {}",
                -2.0 * eta[1]
            )),
            Family::NegativeBinomial { .. } if eta[0] >= 0.0 => Some(format!("log p must be negative, got {}", eta[0])),
            Family::Pareto { .. } if eta[0] >= -1.0 => Some(format!("shape must be positive, got {}", -eta[0] - 1.0)),
            Family::Beta { .. } if eta[0] <= -1.0 || eta[1] <= -1.0 => Some(format!(
                "shapes must be positive, got ({}, {})",
                eta[0] + 1.0,
                eta[1] + 1.0
            )),
            Family::Dirichlet { .. } if eta[0] <= -1.0 => {
                Some(format!("concentration must be positive, got {}", eta[0] + 1.0))
            }
            _ => None,
        }
    }

    /// Log-partition of coordinate `j` (product families only).
    fn coord_log_partition(&self, j: usize, eta: &[f64]) -> f64 {
        match self {
            Family::GaussianDiag { .. } | Family::GaussianKde { .. } => {
                -eta[0] * eta[0] / (4.0 * eta[1]) - 0.5 * (-2.0 * eta[1]).ln()
            }
            Family::BinomialProduct { trials } => f64::from(trials[j]) * softplus(eta[0]),
            Family::NegativeBinomial { r } => -r[j] * (-eta[0].exp_m1()).ln(),
            Family::Pareto { scale } => {
                let a = -eta[0] - 1.0;
                -a.ln() - a * scale[j].ln()
            }
            Family::Beta { .. } => ln_beta(eta[0] + 1.0, eta[1] + 1.0),
            Family::Dirichlet { .. } => unreachable!("dirichlet is not coordinate-wise"),
        }
    }

    /// Checks a full natural-parameter vector; returns the first bad
    /// coordinate and the reason.
    pub fn domain_error(&self, eta: &[f64]) -> Option<(usize, String)> {
        (0..self.dim()).find_map(|j| self.coord_domain_error(&eta[self.stat_range(j)]).map(|r| (j, r)))
    }

    /// Log-partition `A(eta)` of one component.
    pub fn log_partition(&self, eta: &[f64]) -> f64 {
        match self {
            Family::Dirichlet { .. } => {
                let a: Vec<f64> = eta.iter().map(|e| e + 1.0).collect();
                a.iter().map(|v| ln_gamma(*v)).sum::<f64>() - ln_gamma(a.iter().sum())
            }
            _ => (0..self.dim())
                .map(|j| self.coord_log_partition(j, &eta[self.stat_range(j)]))
                .sum(),
        }
    }

    /// Log density of one component at the observed coordinates of `x`,
    /// marginalizing the rest.
    pub fn component_log_density(&self, eta: &[f64], x: &[Option<f64>]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if let Family::Dirichlet { .. } = self {
            return dirichlet_log_density(eta, x);
        }
        let mut t = [0.0; 2];
        let mut acc = 0.0;
        for (j, v) in x.iter().enumerate() {
            if let Some(v) = v {
                let r = self.stat_range(j);
                let e = &eta[r.clone()];
                acc += self.coord_log_base(j, *v)?;
                self.coord_stats(j, *v, &mut t[..r.len()]);
                acc += e.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>();
                acc -= self.coord_log_partition(j, e);
            }
        }
        Ok(acc)
    }

    /// Draws coordinate `j` from a product-family component.
    fn sample_coord<R: Rng + ?Sized>(&self, j: usize, eta: &[f64], rng: &mut R) -> f64 {
        match self {
            Family::GaussianDiag { .. } | Family::GaussianKde { .. } => {
                let var = -0.5 / eta[1];
                let z: f64 = rng.sample(StandardNormal);
                eta[0] * var + var.sqrt() * z
            }
            Family::BinomialProduct { trials } => {
                let p = sigmoid(eta[0]);
                Binomial::new(u64::from(trials[j]), p)
                    .expect("valid binomial")
                    .sample(rng) as f64
            }
            Family::NegativeBinomial { r } => {
                let p = eta[0].exp();
                let lam = Gamma::new(r[j], p / (1.0 - p)).expect("valid gamma").sample(rng);
                if lam > 0.0 {
                    Poisson::new(lam).expect("valid poisson").sample(rng)
                } else {
                    0.0
                }
            }
            Family::Pareto { scale } => {
                let a = -eta[0] - 1.0;
                let u = 1.0 - rng.random::<f64>();
                scale[j] * u.powf(-1.0 / a)
            }
            Family::Beta { .. } => {
                let a = Gamma::new(eta[0] + 1.0, 1.0).unwrap().sample(rng);
                let b = Gamma::new(eta[1] + 1.0, 1.0).unwrap().sample(rng);
                (a / (a + b)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
            }
            Family::Dirichlet { .. } => unreachable!("dirichlet is not coordinate-wise"),
        }
    }

    /// Natural parameters from familiar parameters, laid out per coordinate:
    /// gaussian `(mu, var)`, binomial `p`, negative binomial `p`, Pareto
    /// `alpha`, Beta `(alpha, beta)`, Dirichlet `alpha`.
    pub fn natural_from_mean(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            Family::GaussianDiag { .. } | Family::GaussianKde { .. } => {
                theta.chunks(2).flat_map(|c| [c[0] / c[1], -0.5 / c[1]]).collect()
            }
            Family::BinomialProduct { .. } => theta.iter().map(|p| logit(*p)).collect(),
            Family::NegativeBinomial { .. } => theta.iter().map(|p| p.ln()).collect(),
            Family::Pareto { .. } => theta.iter().map(|a| -a - 1.0).collect(),
            Family::Beta { .. } | Family::Dirichlet { .. } => theta.iter().map(|a| a - 1.0).collect(),
        }
    }

    pub fn mean_from_natural(&self, eta: &[f64]) -> Vec<f64> {
        match self {
            Family::GaussianDiag { .. } | Family::GaussianKde { .. } => eta
                .chunks(2)
                .flat_map(|c| {
                    let var = -0.5 / c[1];
                    [c[0] * var, var]
                })
                .collect(),
            Family::BinomialProduct { .. } => eta.iter().map(|e| sigmoid(*e)).collect(),
            Family::NegativeBinomial { .. } => eta.iter().map(|e| e.exp()).collect(),
            Family::Pareto { .. } => eta.iter().map(|e| -e - 1.0).collect(),
            Family::Beta { .. } | Family::Dirichlet { .. } => eta.iter().map(|e| e + 1.0).collect(),
        }
    }

    /// Expected value of each coordinate under one component.
    pub fn component_mean(&self, eta: &[f64]) -> Vec<f64> {
        let th = self.mean_from_natural(eta);
        match self {
            Family::GaussianDiag { .. } | Family::GaussianKde { .. } => th.chunks(2).map(|c| c[0]).collect(),
            Family::BinomialProduct { trials } => trials.iter().zip(&th).map(|(n, p)| f64::from(*n) * p).collect(),
            Family::NegativeBinomial { r } => r.iter().zip(&th).map(|(r, p)| r * p / (1.0 - p)).collect(),
            Family::Pareto { scale } => scale
                .iter()
                .zip(&th)
                .map(|(b, a)| if *a > 1.0 { a * b / (a - 1.0) } else { f64::INFINITY })
                .collect(),
            Family::Beta { .. } => th.chunks(2).map(|c| c[0] / (c[0] + c[1])).collect(),
            Family::Dirichlet { .. } => {
                let s: f64 = th.iter().sum();
                th.iter().map(|a| a / s).collect()
            }
        }
    }

    /// Number of free parameters of one component.
    pub fn params_per_component(&self) -> usize {
        match self {
            Family::GaussianKde { .. } => 0,
            _ => self.n_stats(),
        }
    }
}

/// Dirichlet density of the observed coordinates. Unobserved coordinates are
/// aggregated into one remainder cell, which is again Dirichlet.
fn dirichlet_log_density(eta: &[f64], x: &[Option<f64>]) -> Result<f64> {
    let mut s = 0.0;
    let mut a_obs = Vec::new();
    let mut x_obs = Vec::new();
    let mut a_rest = 0.0;
    for (j, v) in x.iter().enumerate() {
        let a = eta[j] + 1.0;
        match v {
            Some(v) => {
                if !(*v > 0.0 && *v < 1.0) {
                    return Err(Error::Support {
                        coordinate: j,
                        value: *v,
                    });
                }
                s += v;
                a_obs.push(a);
                x_obs.push(*v);
            }
            None => a_rest += a,
        }
    }
    if x_obs.is_empty() {
        return Ok(0.0);
    }
    let last = x.iter().rposition(Option::is_some).unwrap();
    if a_rest > 0.0 {
        if s >= 1.0 {
            return Err(Error::Support {
                coordinate: last,
                value: x[last].unwrap(),
            });
        }
        a_obs.push(a_rest);
        x_obs.push(1.0 - s);
    } else if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Support {
            coordinate: last,
            value: x[last].unwrap(),
        });
    }
    let norm: f64 = a_obs.iter().map(|a| ln_gamma(*a)).sum::<f64>() - ln_gamma(a_obs.iter().sum());
    Ok(a_obs.iter().zip(&x_obs).map(|(a, v)| (a - 1.0) * v.ln()).sum::<f64>() - norm)
}

/// One exponential-family component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub family: Family,
    pub natural: Vec<f64>,
}

impl Component {
    pub fn new(family: Family, natural: Vec<f64>) -> Result<Self> {
        family.validate()?;
        if natural.len() != family.n_stats() {
            return Err(Error::DimensionMismatch {
                expected: family.n_stats(),
                got: natural.len(),
            });
        }
        if let Some((j, reason)) = family.domain_error(&natural) {
            return Err(Error::InvalidModel(format!("coordinate {}: {reason}", j + 1)));
        }
        Ok(Self { family, natural })
    }

    pub fn from_mean(family: Family, theta: &[f64]) -> Result<Self> {
        let eta = family.natural_from_mean(theta);
        Self::new(family, eta)
    }

    pub fn mean_params(&self) -> Vec<f64> {
        self.family.mean_from_natural(&self.natural)
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let xo: Vec<Option<f64>> = x.iter().map(|v| Some(*v)).collect();
        self.family.component_log_density(&self.natural, &xo)
    }
}

/// Power-law tilt of a single component. For Pareto the shape moves as
/// `alpha - gamma`, for Beta and Dirichlet the shapes move as `alpha + gamma`.
pub fn power_tilt(c: &Component, gamma: &[f64]) -> Result<Component> {
    if !matches!(
        c.family,
        Family::Pareto { .. } | Family::Beta { .. } | Family::Dirichlet { .. }
    ) {
        return Err(Error::InvalidModel(format!(
            "power tilt needs a pareto, beta or dirichlet component, got {}",
            c.family.name()
        )));
    }
    let m = MixtureModel::new(c.family.clone(), vec![1.0], vec![c.natural.clone()])?;
    let t = m.tilt(gamma)?;
    Ok(Component {
        family: c.family.clone(),
        natural: t.components[0].clone(),
    })
}

/// Finite mixture sharing one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture", deny_unknown_fields)]
pub struct MixtureModel {
    family: Family,
    weights: Vec<f64>,
    /// Natural parameters, one vector per component.
    components: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMixture {
    family: Family,
    weights: Vec<f64>,
    components: Vec<Vec<f64>>,
}

impl TryFrom<RawMixture> for MixtureModel {
    type Error = Error;
    fn try_from(r: RawMixture) -> Result<Self> {
        MixtureModel::new(r.family, r.weights, r.components)
    }
}

impl MixtureModel {
    pub fn new(family: Family, weights: Vec<f64>, components: Vec<Vec<f64>>) -> Result<Self> {
        family.validate()?;
        if components.is_empty() {
            return Err(Error::InvalidModel("mixture needs at least one component".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::InvalidModel(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidModel("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!("weights sum to {total}, not 1")));
        }
        for (k, eta) in components.iter().enumerate() {
            if eta.len() != family.n_stats() {
                return Err(Error::InvalidModel(format!(
                    "component {} has {} natural parameters, expected {}",
                    k + 1,
                    eta.len(),
                    family.n_stats()
                )));
            }
            if let Some((j, reason)) = family.domain_error(eta) {
                return Err(Error::InvalidModel(format!(
                    "component {}, coordinate {}: {reason}",
                    k + 1,
                    j + 1
                )));
            }
        }
        Ok(Self {
            family,
            weights,
            components,
        })
    }

    /// Builds a mixture from components that must share one family.
    pub fn from_components(weights: Vec<f64>, comps: Vec<Component>) -> Result<Self> {
        let family = comps
            .first()
            .ok_or_else(|| Error::InvalidModel("mixture needs at least one component".into()))?
            .family
            .clone();
        if comps.iter().any(|c| c.family != family) {
            return Err(Error::InvalidModel(
                "mixture components must share one family specification".into(),
            ));
        }
        Self::new(family, weights, comps.into_iter().map(|c| c.natural).collect())
    }

    /// Mixture from familiar parameters (see [`Family::natural_from_mean`]).
    pub fn from_mean_params(family: Family, weights: Vec<f64>, theta: &[Vec<f64>]) -> Result<Self> {
        let comps = theta.iter().map(|t| family.natural_from_mean(t)).collect();
        Self::new(family, weights, comps)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn component(&self, k: usize) -> Component {
        Component {
            family: self.family.clone(),
            natural: self.components[k].clone(),
        }
    }

    pub fn mean_params(&self) -> Vec<Vec<f64>> {
        self.components
            .iter()
            .map(|e| self.family.mean_from_natural(e))
            .collect()
    }

    /// Per-component log densities at the observed coordinates.
    pub fn component_log_densities(&self, x: &[Option<f64>]) -> Result<Vec<f64>> {
        self.components
            .iter()
            .map(|e| self.family.component_log_density(e, x))
            .collect()
    }

    /// Log marginal density of the observed coordinates of `x`.
    pub fn log_density_observed(&self, x: &[Option<f64>]) -> Result<f64> {
        let lc = self.component_log_densities(x)?;
        let terms: Vec<f64> = lc.iter().zip(&self.weights).map(|(l, w)| l + w.ln()).collect();
        Ok(log_sum_exp(&terms))
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let xo: Vec<Option<f64>> = x.iter().map(|v| Some(*v)).collect();
        self.log_density_observed(&xo)
    }

    /// Exponential tilt by `gamma` on the sufficient statistics:
    /// `p'(x) ∝ p(x) exp(gamma . T(x))`, again a mixture of the same family.
    pub fn tilt(&self, gamma: &[f64]) -> Result<MixtureModel> {
        if gamma.len() != self.family.n_stats() {
            return Err(Error::DimensionMismatch {
                expected: self.family.n_stats(),
                got: gamma.len(),
            });
        }
        let mut comps = Vec::with_capacity(self.k());
        let mut delta = Vec::with_capacity(self.k());
        for (k, eta) in self.components.iter().enumerate() {
            let e2: Vec<f64> = eta.iter().zip(gamma).map(|(a, b)| a + b).collect();
            if let Some((j, reason)) = self.family.domain_error(&e2) {
                return Err(Error::InvalidTilt {
                    component: k + 1,
                    coordinate: j + 1,
                    reason,
                });
            }
            delta.push(self.family.log_partition(&e2) - self.family.log_partition(eta));
            comps.push(e2);
        }
        let weights = if delta.iter().all(|d| *d == delta[0]) {
            self.weights.clone()
        } else {
            let lw: Vec<f64> = self.weights.iter().zip(&delta).map(|(w, d)| w.ln() + d).collect();
            normalize_log_weights(&lw)
        };
        Ok(MixtureModel {
            family: self.family.clone(),
            weights,
            components: comps,
        })
    }

    /// Distribution of the unobserved coordinates given the observed ones:
    /// component marginals are unchanged and weights become posterior
    /// responsibilities.
    pub fn conditional(&self, x: &[Option<f64>]) -> Result<ConditionalMixture<'_>> {
        let lc = self.component_log_densities(x)?;
        let lw: Vec<f64> = lc.iter().zip(&self.weights).map(|(l, w)| l + w.ln()).collect();
        if log_sum_exp(&lw) == f64::NEG_INFINITY {
            return Err(Error::Sampling(
                "observed values have zero density under every component".into(),
            ));
        }
        Ok(ConditionalMixture {
            model: self,
            observed: x.to_vec(),
            weights: normalize_log_weights(&lw),
        })
    }

    /// Draws one complete vector.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = sample_index(&self.weights, rng);
        sample_component(&self.family, &self.components[k], &vec![None; self.dim()], rng)
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let idx = WeightedIndex::new(&self.weights).expect("valid weights");
        let none = vec![None; self.dim()];
        (0..n)
            .map(|_| sample_component(&self.family, &self.components[idx.sample(rng)], &none, rng))
            .collect()
    }

    /// Mixture mean of each coordinate.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, e) in self.weights.iter().zip(&self.components) {
            for (o, m) in out.iter_mut().zip(self.family.component_mean(e)) {
                *o += w * m;
            }
        }
        out
    }

    /// Sorts components by their first natural parameter (then weight) so
    /// that label-swapped fits serialize identically.
    pub fn canonicalize(&mut self) {
        let mut idx: Vec<usize> = (0..self.k()).collect();
        idx.sort_by(|&a, &b| {
            self.components[a]
                .iter()
                .zip(&self.components[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(self.weights[a].total_cmp(&self.weights[b]))
        });
        self.components = idx.iter().map(|&i| self.components[i].clone()).collect();
        self.weights = idx.iter().map(|&i| self.weights[i]).collect();
    }

    /// Number of free parameters, as used by BIC.
    pub fn n_params(&self) -> usize {
        self.k() * self.family.params_per_component() + self.k() - 1
    }
}

fn sample_index<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> usize {
    if w.len() == 1 {
        return 0;
    }
    let u: f64 = rng.random::<f64>() * w.iter().sum::<f64>();
    let mut acc = 0.0;
    for (k, wk) in w.iter().enumerate() {
        acc += wk;
        if u < acc {
            return k;
        }
    }
    w.iter().rposition(|v| *v > 0.0).unwrap_or(w.len() - 1)
}

/// Fills the `None` entries of `observed` with a draw from one component.
fn sample_component<R: Rng + ?Sized>(family: &Family, eta: &[f64], observed: &[Option<f64>], rng: &mut R) -> Vec<f64> {
    if let Family::Dirichlet { .. } = family {
        let s: f64 = observed.iter().flatten().sum();
        let miss: Vec<usize> = (0..observed.len()).filter(|j| observed[*j].is_none()).collect();
        let mut out: Vec<f64> = observed.iter().map(|v| v.unwrap_or(0.0)).collect();
        if miss.len() == 1 {
            out[miss[0]] = 1.0 - s;
        } else if !miss.is_empty() {
            let g: Vec<f64> = miss
                .iter()
                .map(|&j| {
                    Gamma::new(eta[j] + 1.0, 1.0)
                        .unwrap()
                        .sample(rng)
                        .max(f64::MIN_POSITIVE)
                })
                .collect();
            let tot: f64 = g.iter().sum();
            for (&j, gj) in miss.iter().zip(&g) {
                out[j] = (1.0 - s) * gj / tot;
            }
        }
        return out;
    }
    observed
        .iter()
        .enumerate()
        .map(|(j, v)| match v {
            Some(v) => *v,
            None => family.sample_coord(j, &eta[family.stat_range(j)], rng),
        })
        .collect()
}

/// Conditional of the missing coordinates given the observed ones.
#[derive(Debug, Clone)]
pub struct ConditionalMixture<'a> {
    model: &'a MixtureModel,
    observed: Vec<Option<f64>>,
    weights: Vec<f64>,
}

impl ConditionalMixture<'_> {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn observed(&self) -> &[Option<f64>] {
        &self.observed
    }

    pub fn missing(&self) -> Vec<usize> {
        (0..self.observed.len())
            .filter(|j| self.observed[*j].is_none())
            .collect()
    }

    /// A completed row; observed entries are returned unchanged.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        if self.observed.iter().all(Option::is_some) {
            return self.observed.iter().map(|v| v.unwrap()).collect();
        }
        let k = sample_index(&self.weights, rng);
        sample_component(&self.model.family, &self.model.components[k], &self.observed, rng)
    }

    /// Log conditional density of a completed row's missing coordinates.
    pub fn log_density(&self, full: &[f64]) -> Result<f64> {
        let xo: Vec<Option<f64>> = full.iter().map(|v| Some(*v)).collect();
        let mut terms = Vec::with_capacity(self.weights.len());
        for (w, e) in self.weights.iter().zip(&self.model.components) {
            let joint = self.model.family.component_log_density(e, &xo)?;
            let obs = self.model.family.component_log_density(e, &self.observed)?;
            terms.push(w.ln() + joint - obs);
        }
        Ok(log_sum_exp(&terms))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// `h_j = (4 / (d + 2))^(1/(d+4)) n^(-1/(d+4)) sd_j`
    Silverman,
}

/// Gaussian kernel density estimate: one equally weighted component per row,
/// centered at the row, variance `h_j^2` per coordinate.
pub fn kde_fit(rows: &[Vec<f64>], bandwidth: Option<&[f64]>) -> Result<MixtureModel> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::TooFewRows {
            pattern: "complete cases".into(),
            rows: n,
            required: 2,
        });
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: rows.iter().map(Vec::len).find(|l| *l != d).unwrap(),
        });
    }
    let h: Vec<f64> = match bandwidth {
        Some(h) => h.to_vec(),
        None => silverman(rows),
    };
    if let Some(j) = h.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Fit(format!(
            "bandwidth for coordinate {} is {}; the column has no spread",
            j + 1,
            h[j]
        )));
    }
    let family = Family::GaussianKde { bandwidth: h.clone() };
    let comps = rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(&h)
                .flat_map(|(x, hj)| [x / (hj * hj), -0.5 / (hj * hj)])
                .collect()
        })
        .collect();
    MixtureModel::new(family, vec![1.0 / n as f64; n], comps)
}

/// Checks that a family can be estimated by a kernel density estimate.
pub fn kde_compatible(family: &Family) -> Result<()> {
    if family.is_discrete() {
        return Err(Error::InvalidModel(format!(
            "kernel density estimation needs continuous data, got family {}",
            family.name()
        )));
    }
    Ok(())
}

pub fn silverman(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let factor = (4.0 / (d as f64 + 2.0)).powf(1.0 / (d as f64 + 4.0)) * n.powf(-1.0 / (d as f64 + 4.0));
    (0..d)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            factor * crate::numeric::sd(&col)
        })
        .collect()
}

/// Normal density helper used in tests and diagnostics.
pub fn normal_log_pdf(x: f64, mu: f64, var: f64) -> f64 {
    -0.5 * ((x - mu) * (x - mu) / var + (2.0 * PI * var).ln())
}
