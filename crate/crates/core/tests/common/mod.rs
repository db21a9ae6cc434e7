//! Test-only oracles: double-exponential quadrature, reference densities
//! built from statrs, and brute-force tree counting.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;

use statrs::distribution::{Beta, Binomial, Continuous, Discrete, NegativeBinomial, Normal, Pareto};
use statrs::function::gamma::ln_gamma;

/// Tanh-sinh quadrature of `f` over the open interval `(a, b)`.
/// Endpoint singularities are fine; `f` is never evaluated at `a` or `b`.
pub fn tanh_sinh<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    const TMAX: f64 = 4.0;
    let mut eval = |t: f64| -> f64 {
        let u = FRAC_PI_2 * t.sinh();
        let ch = u.cosh();
        let w = FRAC_PI_2 * t.cosh() / (ch * ch);
        // distance from the nearer endpoint, in units of hw
        let delta = (-u.abs()).exp() / ch;
        let (xl, xr) = if t == 0.0 {
            (c, c)
        } else {
            (a + hw * delta, b - hw * delta)
        };
        if t == 0.0 {
            return w * f(c);
        }
        let mut s = 0.0;
        if xl > a && xl < b {
            s += w * f(xl);
        }
        if xr > a && xr < b {
            s += w * f(xr);
        }
        s
    };
    let mut h = 1.0;
    let mut sum = eval(0.0);
    let mut j = 1;
    while j as f64 * h <= TMAX {
        sum += eval(j as f64 * h);
        j += 1;
    }
    let mut prev = hw * h * sum;
    for level in 1..=12 {
        h *= 0.5;
        let mut j = 1;
        while j as f64 * h <= TMAX {
            sum += eval(j as f64 * h);
            j += 2;
        }
        let cur = hw * h * sum;
        if level >= 4 && (cur - prev).abs() <= tol * cur.abs() {
            return cur;
        }
        prev = cur;
    }
    prev
}

/// Integral over the real line via `x = c + s v / (1 - v^2)`.
pub fn integrate_real<F: FnMut(f64) -> f64>(mut f: F, c: f64, s: f64, tol: f64) -> f64 {
    tanh_sinh(
        |v| {
            let q = 1.0 - v * v;
            if q <= 0.0 {
                return 0.0;
            }
            f(c + s * v / q) * s * (1.0 + v * v) / (q * q)
        },
        -1.0,
        1.0,
        tol,
    )
}

/// Integral over `[a, inf)` via `x = a + s (1 + v) / (1 - v)`.
pub fn integrate_half_line<F: FnMut(f64) -> f64>(mut f: F, a: f64, s: f64, tol: f64) -> f64 {
    tanh_sinh(
        |v| {
            let q = 1.0 - v;
            if q <= 0.0 {
                return 0.0;
            }
            f(a + s * (1.0 + v) / q) * 2.0 * s / (q * q)
        },
        -1.0,
        1.0,
        tol,
    )
}

fn log_mix(weights: &[f64], comp: impl Fn(usize) -> f64) -> f64 {
    let terms: Vec<f64> = weights.iter().enumerate().map(|(k, w)| w.ln() + comp(k)).collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Independent reference densities, parameterized the way the tests build
/// their models.
#[derive(Debug, Clone)]
pub enum RefMixture {
    /// `(mu, var)` per coordinate per component.
    Gaussian {
        w: Vec<f64>,
        params: Vec<Vec<(f64, f64)>>,
    },
    Binomial {
        w: Vec<f64>,
        trials: Vec<u64>,
        p: Vec<Vec<f64>>,
    },
    /// `p` is the per-failure probability (pmf ∝ p^x).
    NegBinomial {
        w: Vec<f64>,
        r: Vec<f64>,
        p: Vec<Vec<f64>>,
    },
    Pareto {
        w: Vec<f64>,
        scale: Vec<f64>,
        alpha: Vec<Vec<f64>>,
    },
    Beta {
        w: Vec<f64>,
        ab: Vec<Vec<(f64, f64)>>,
    },
    /// Density of the first `d - 1` coordinates; the last is `1 - sum`.
    Dirichlet {
        w: Vec<f64>,
        alpha: Vec<Vec<f64>>,
    },
}

impl RefMixture {
    pub fn ln_density(&self, x: &[f64]) -> f64 {
        match self {
            RefMixture::Gaussian { w, params } => log_mix(w, |k| {
                params[k]
                    .iter()
                    .zip(x)
                    .map(|((m, v), xi)| Normal::new(*m, v.sqrt()).unwrap().ln_pdf(*xi))
                    .sum()
            }),
            RefMixture::Binomial { w, trials, p } => log_mix(w, |k| {
                p[k].iter()
                    .zip(trials)
                    .zip(x)
                    .map(|((pk, n), xi)| Binomial::new(*pk, *n).unwrap().ln_pmf(*xi as u64))
                    .sum()
            }),
            RefMixture::NegBinomial { w, r, p } => log_mix(w, |k| {
                p[k].iter()
                    .zip(r)
                    .zip(x)
                    .map(|((pk, rj), xi)| NegativeBinomial::new(*rj, 1.0 - pk).unwrap().ln_pmf(*xi as u64))
                    .sum()
            }),
            RefMixture::Pareto { w, scale, alpha } => log_mix(w, |k| {
                alpha[k]
                    .iter()
                    .zip(scale)
                    .zip(x)
                    .map(|((a, s), xi)| Pareto::new(*s, *a).unwrap().ln_pdf(*xi))
                    .sum()
            }),
            RefMixture::Beta { w, ab } => log_mix(w, |k| {
                ab[k]
                    .iter()
                    .zip(x)
                    .map(|((a, b), xi)| Beta::new(*a, *b).unwrap().ln_pdf(*xi))
                    .sum()
            }),
            RefMixture::Dirichlet { w, alpha } => log_mix(w, |k| {
                let a = &alpha[k];
                let s: f64 = a.iter().sum();
                ln_gamma(s) - a.iter().map(|v| ln_gamma(*v)).sum::<f64>()
                    + a.iter().zip(x).map(|(ai, xi)| (ai - 1.0) * xi.ln()).sum::<f64>()
            }),
        }
    }
}

/// Number of tree graphs over all `2^d` patterns, by brute force over every
/// subset of regular edges: each non-source pattern must have exactly one
/// outgoing edge.
pub fn brute_force_tree_count(d: usize) -> u64 {
    let full = (1u64 << d) - 1;
    let mut edges = Vec::new();
    for child in 0..=full {
        for parent in 0..=full {
            if child != parent && child & parent == child {
                edges.push((child, parent));
            }
        }
    }
    assert!(edges.len() < 26, "too many edges for brute force");
    let mut count = 0;
    for subset in 0u64..(1 << edges.len()) {
        let mut out = vec![0u32; (full + 1) as usize];
        for (i, (c, _)) in edges.iter().enumerate() {
            if subset >> i & 1 == 1 {
                out[*c as usize] += 1;
            }
        }
        if out[full as usize] == 0 && (0..full).all(|c| out[c as usize] == 1) {
            count += 1;
        }
    }
    count
}

/// All regular (child, parent) pairs over `patterns`.
pub fn regular_edges(patterns: &BTreeSet<u64>) -> Vec<(u64, u64)> {
    let mut edges = Vec::new();
    for &c in patterns {
        for &p in patterns {
            if c != p && c & p == c {
                edges.push((c, p));
            }
        }
    }
    edges
}

/// Integral over `(0, 1)` of `f((x, 1 - x))`, with each half evaluated so
/// that the distance to the nearer endpoint is exact.
pub fn unit_interval<F: FnMut((f64, f64)) -> f64>(mut f: F, tol: f64) -> f64 {
    tanh_sinh(|x| f((x, 1.0 - x)), 0.0, 0.5, tol) + tanh_sinh(|u| f((1.0 - u, u)), 0.0, 0.5, tol)
}
