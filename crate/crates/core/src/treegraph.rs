//! Tree graphs (arborescences over missing patterns rooted at `1_d`) and
//! general pattern graphs.
//!
//! A tree graph assigns every non-source pattern exactly one parent that
//! strictly dominates it. Each such assignment encodes one identifying
//! missing-not-at-random assumption.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::{potential_parents, MissingPattern, MAX_EXHAUSTIVE_DIM};

pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// Regular pattern graph: every listed parent should dominate its child and
/// `1_d` should be the only source. Nothing is enforced at construction so
/// that malformed input can be reported by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternGraph {
    d: usize,
    patterns: BTreeSet<MissingPattern>,
    parents: BTreeMap<MissingPattern, BTreeSet<MissingPattern>>,
}

impl PatternGraph {
    pub fn new(d: usize) -> Self {
        let mut patterns = BTreeSet::new();
        patterns.insert(MissingPattern::complete(d));
        Self {
            d,
            patterns,
            parents: BTreeMap::new(),
        }
    }

    pub fn add_pattern(&mut self, p: MissingPattern) -> Result<()> {
        if p.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: p.dim(),
            });
        }
        self.patterns.insert(p);
        Ok(())
    }

    /// Adds the edge `parent -> child`, registering both patterns.
    pub fn add_edge(&mut self, child: MissingPattern, parent: MissingPattern) -> Result<()> {
        self.add_pattern(child)?;
        self.add_pattern(parent)?;
        self.parents.entry(child).or_default().insert(parent);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn patterns(&self) -> &BTreeSet<MissingPattern> {
        &self.patterns
    }

    pub fn parents_of(&self, r: &MissingPattern) -> BTreeSet<MissingPattern> {
        self.parents.get(r).cloned().unwrap_or_default()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.values().map(BTreeSet::len).sum()
    }

    /// `(child, parent)` pairs in canonical order.
    pub fn edges(&self) -> Vec<(MissingPattern, MissingPattern)> {
        self.parents
            .iter()
            .flat_map(|(c, ps)| ps.iter().map(move |p| (*c, *p)))
            .collect()
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            d: self.d,
            edges: self.edges().into_iter().map(|(c, p)| [c, p]).collect(),
            patterns: Some(self.patterns.iter().copied().collect()),
        }
    }

    pub fn from_json(json: &GraphJson) -> Result<Self> {
        let mut g = Self::new(json.d);
        for p in json.patterns.iter().flatten() {
            g.add_pattern(*p)?;
        }
        for [c, p] in &json.edges {
            g.add_edge(*c, *p)?;
        }
        Ok(g)
    }
}

impl From<&TreeGraph> for PatternGraph {
    fn from(t: &TreeGraph) -> Self {
        let mut g = PatternGraph::new(t.d);
        g.patterns = t.patterns.clone();
        for (c, p) in &t.parent {
            g.parents.entry(*c).or_default().insert(*p);
        }
        g
    }
}

/// On-disk graph document: `{"d": 3, "edges": [["101", "111"], ...]}` with
/// each edge written as `[child, parent]`. `patterns` is optional and only
/// needed for isolated patterns.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GraphJson {
    pub d: usize,
    pub edges: Vec<[MissingPattern; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patterns: Option<Vec<MissingPattern>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MissingSource,
    ExtraSource(MissingPattern),
    Regularity {
        child: MissingPattern,
        parent: MissingPattern,
    },
    MultipleParents {
        child: MissingPattern,
        parents: Vec<MissingPattern>,
    },
    EdgeCount {
        expected: usize,
        got: usize,
    },
    Unreachable(MissingPattern),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingSource => write!(f, "source pattern 1_d is absent"),
            Violation::ExtraSource(p) => write!(f, "pattern {p} has no parent (extra source)"),
            Violation::Regularity { child, parent } => {
                write!(f, "regularity: {parent} does not dominate {child}")
            }
            Violation::MultipleParents { child, parents } => {
                let ps: Vec<String> = parents.iter().map(ToString::to_string).collect();
                write!(f, "single-parent: {child} has parents {{{}}}", ps.join(", "))
            }
            Violation::EdgeCount { expected, got } => {
                write!(f, "edge count: expected {expected}, found {got}")
            }
            Violation::Unreachable(p) => write!(f, "pattern {p} is not reachable from 1_d"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks the tree-graph properties: regularity, single parent, edge count
/// `|patterns| - 1`, and reachability of every pattern from `1_d`.
pub fn validate(g: &PatternGraph) -> ValidationReport {
    let mut violations = Vec::new();
    let source = MissingPattern::complete(g.d);
    if !g.patterns.contains(&source) {
        violations.push(Violation::MissingSource);
    }
    for r in &g.patterns {
        if *r == source {
            continue;
        }
        let ps = g.parents_of(r);
        if ps.is_empty() {
            violations.push(Violation::ExtraSource(*r));
        }
        if ps.len() > 1 {
            violations.push(Violation::MultipleParents {
                child: *r,
                parents: ps.iter().copied().collect(),
            });
        }
    }
    for (c, p) in g.edges() {
        if !p.dominates(&c).unwrap_or(false) {
            violations.push(Violation::Regularity { child: c, parent: p });
        }
    }
    let expected = g.patterns.len().saturating_sub(1);
    if g.edge_count() != expected {
        violations.push(Violation::EdgeCount {
            expected,
            got: g.edge_count(),
        });
    }
    // reachability: some parent chain from r must end at the source
    let mut reach: BTreeMap<MissingPattern, bool> = BTreeMap::new();
    reach.insert(source, g.patterns.contains(&source));
    for r in &g.patterns {
        if !reaches_source(g, *r, &mut reach, &mut BTreeSet::new()) {
            violations.push(Violation::Unreachable(*r));
        }
    }
    ValidationReport { violations }
}

fn reaches_source(
    g: &PatternGraph,
    r: MissingPattern,
    memo: &mut BTreeMap<MissingPattern, bool>,
    visiting: &mut BTreeSet<MissingPattern>,
) -> bool {
    if let Some(&v) = memo.get(&r) {
        return v;
    }
    if !visiting.insert(r) {
        return false;
    }
    let ok = g
        .parents_of(&r)
        .into_iter()
        .any(|p| g.patterns.contains(&p) && reaches_source(g, p, memo, visiting));
    visiting.remove(&r);
    memo.insert(r, ok);
    ok
}

/// An arborescence over a pattern set, rooted at `1_d`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TreeGraph {
    d: usize,
    patterns: BTreeSet<MissingPattern>,
    parent: BTreeMap<MissingPattern, MissingPattern>,
}

impl fmt::Debug for TreeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TreeGraph{{{self}}}")
    }
}

impl fmt::Display for TreeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.parent.iter().rev().map(|(c, p)| format!("{c}<-{p}")).collect();
        write!(f, "{}", parts.join(" "))
    }
}

impl TreeGraph {
    /// Builds a tree from a parent map and checks every tree invariant.
    pub fn from_parent_map(
        d: usize,
        patterns: impl IntoIterator<Item = MissingPattern>,
        parent: BTreeMap<MissingPattern, MissingPattern>,
    ) -> Result<Self> {
        let mut g = PatternGraph::new(d);
        for p in patterns {
            g.add_pattern(p)?;
        }
        for (c, p) in &parent {
            g.add_edge(*c, *p)?;
        }
        Self::try_from(&g)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn source(&self) -> MissingPattern {
        MissingPattern::complete(self.d)
    }

    pub fn patterns(&self) -> &BTreeSet<MissingPattern> {
        &self.patterns
    }

    pub fn contains(&self, r: &MissingPattern) -> bool {
        self.patterns.contains(r)
    }

    pub fn parent(&self, r: &MissingPattern) -> Option<MissingPattern> {
        self.parent.get(r).copied()
    }

    pub fn parent_map(&self) -> &BTreeMap<MissingPattern, MissingPattern> {
        &self.parent
    }

    pub fn children(&self, r: &MissingPattern) -> Vec<MissingPattern> {
        self.parent.iter().filter(|(_, p)| *p == r).map(|(c, _)| *c).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.parent.len()
    }

    /// `[1_d, ..., r]` following parent links.
    pub fn path_to_source(&self, r: &MissingPattern) -> Result<Vec<MissingPattern>> {
        if !self.contains(r) {
            return Err(Error::InvalidGraph(format!("pattern {r} is not in the graph")));
        }
        let mut path = vec![*r];
        let mut cur = *r;
        while let Some(p) = self.parent(&cur) {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Ok(path)
    }

    /// Patterns on the path to the source, excluding `r` itself.
    pub fn ancestors(&self, r: &MissingPattern) -> Result<BTreeSet<MissingPattern>> {
        let mut path = self.path_to_source(r)?;
        path.pop();
        Ok(path.into_iter().collect())
    }

    /// Length of the longest source-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        self.patterns
            .iter()
            .map(|r| self.path_to_source(r).map_or(0, |p| p.len() - 1))
            .max()
            .unwrap_or(0)
    }

    /// True when every parent observes exactly one more variable than its child.
    pub fn is_gncmv(&self) -> bool {
        self.parent.iter().all(|(c, p)| p.n_observed() == c.n_observed() + 1)
    }

    /// Restricts the tree to `kept`, re-linking each kept pattern to its
    /// nearest kept ancestor.
    pub fn representor(&self, kept: &BTreeSet<MissingPattern>) -> Result<TreeGraph> {
        let source = self.source();
        if !kept.contains(&source) {
            return Err(Error::InvalidGraph("representor must keep 1_d".into()));
        }
        if let Some(r) = kept.iter().find(|r| !self.contains(r)) {
            return Err(Error::InvalidGraph(format!("kept pattern {r} is not in the graph")));
        }
        let mut parent = BTreeMap::new();
        for r in kept.iter().filter(|r| **r != source) {
            let mut cur = self.parent(r).expect("non-source has a parent");
            while !kept.contains(&cur) {
                cur = self.parent(&cur).expect("chain ends at the source");
            }
            parent.insert(*r, cur);
        }
        Ok(TreeGraph {
            d: self.d,
            patterns: kept.clone(),
            parent,
        })
    }

    /// Undirected graph of tree edges plus sibling pairs, with its maximal
    /// cliques in canonical order.
    pub fn sibling_moral_graph(&self) -> MoralGraph {
        let mut edges = BTreeSet::new();
        let mut add = |a: MissingPattern, b: MissingPattern| {
            edges.insert(if a < b { (a, b) } else { (b, a) });
        };
        for (c, p) in &self.parent {
            add(*c, *p);
        }
        for p in &self.patterns {
            let kids = self.children(p);
            for (i, a) in kids.iter().enumerate() {
                for b in &kids[i + 1..] {
                    add(*a, *b);
                }
            }
        }
        MoralGraph::new(self.patterns.iter().copied().collect(), edges)
    }

    pub fn to_json(&self) -> GraphJson {
        let mut j = PatternGraph::from(self).to_json();
        // patterns are implied by the edges unless the tree is just {1_d}
        if self.patterns.len() > 1 {
            j.patterns = None;
        }
        j
    }

    pub fn from_json(json: &GraphJson) -> Result<Self> {
        Self::try_from(&PatternGraph::from_json(json)?)
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph tree {\n  rankdir=TB;\n");
        for p in self.patterns.iter().rev() {
            s.push_str(&format!("  \"{p}\";\n"));
        }
        for (c, p) in self.parent.iter().rev() {
            s.push_str(&format!("  \"{p}\" -> \"{c}\";\n"));
        }
        s.push_str("}\n");
        s
    }
}

impl TryFrom<&PatternGraph> for TreeGraph {
    type Error = Error;

    fn try_from(g: &PatternGraph) -> Result<Self> {
        let report = validate(g);
        if !report.is_ok() {
            return Err(Error::InvalidGraph(report.to_string().trim_end().to_string()));
        }
        let parent = g
            .parents
            .iter()
            .map(|(c, ps)| (*c, *ps.iter().next().unwrap()))
            .collect();
        Ok(TreeGraph {
            d: g.d,
            patterns: g.patterns.clone(),
            parent,
        })
    }
}

fn check_pattern_set(patterns: &BTreeSet<MissingPattern>) -> Result<usize> {
    let d = patterns
        .iter()
        .next()
        .ok_or_else(|| Error::InvalidGraph("empty pattern set".into()))?
        .dim();
    if patterns.iter().any(|p| p.dim() != d) {
        return Err(Error::InvalidGraph("patterns have mixed dimensions".into()));
    }
    if !patterns.contains(&MissingPattern::complete(d)) {
        return Err(Error::InvalidGraph("pattern set lacks 1_d".into()));
    }
    Ok(d)
}

/// Complete-case missing value: every pattern's parent is `1_d`.
pub fn build_ccmv(patterns: &BTreeSet<MissingPattern>) -> Result<TreeGraph> {
    let d = check_pattern_set(patterns)?;
    let source = MissingPattern::complete(d);
    let parent = patterns
        .iter()
        .filter(|r| **r != source)
        .map(|r| (*r, source))
        .collect();
    Ok(TreeGraph {
        d,
        patterns: patterns.clone(),
        parent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipSide {
    Leftmost,
    Rightmost,
}

/// Nearest-case tree: the parent flips the leftmost (or rightmost) missing
/// coordinate to observed. When that pattern is absent from the set, the
/// flip is repeated until a member is reached if `compress` is set,
/// otherwise the orphan is reported.
pub fn build_nearest(patterns: &BTreeSet<MissingPattern>, side: FlipSide, compress: bool) -> Result<TreeGraph> {
    let d = check_pattern_set(patterns)?;
    let source = MissingPattern::complete(d);
    let flip = |r: MissingPattern| {
        let miss = r.missing();
        let j = match side {
            FlipSide::Leftmost => miss[0],
            FlipSide::Rightmost => *miss.last().unwrap(),
        };
        r.with_observed(j)
    };
    let mut parent = BTreeMap::new();
    for r in patterns.iter().filter(|r| **r != source) {
        let mut cur = flip(*r);
        while !patterns.contains(&cur) {
            if !compress {
                return Err(Error::OrphanPattern { pattern: r.to_string() });
            }
            cur = flip(cur);
        }
        parent.insert(*r, cur);
    }
    Ok(TreeGraph {
        d,
        patterns: patterns.clone(),
        parent,
    })
}

pub fn build_lncmv(patterns: &BTreeSet<MissingPattern>) -> Result<TreeGraph> {
    build_nearest(patterns, FlipSide::Leftmost, true)
}

pub fn build_rncmv(patterns: &BTreeSet<MissingPattern>) -> Result<TreeGraph> {
    build_nearest(patterns, FlipSide::Rightmost, true)
}

/// `|T_d| = prod_{m=1}^d (2^m - 1)^{C(d, m)}` over the full pattern set.
pub fn count_trees(d: usize) -> Result<BigUint> {
    if d == 0 || d > MAX_EXHAUSTIVE_DIM {
        return Err(Error::Config(format!(
            "count_trees needs 1 <= d <= {MAX_EXHAUSTIVE_DIM}, got {d}"
        )));
    }
    let mut total = BigUint::from(1u32);
    let mut binom = BigUint::from(1u32);
    for m in 1..=d {
        binom = binom * BigUint::from(d - m + 1) / BigUint::from(m);
        let base = (BigUint::from(1u32) << m) - 1u32;
        let exp: u32 = binom.to_u32_digits().first().copied().unwrap_or(0);
        total *= base.pow(exp);
    }
    Ok(total)
}

/// `log2 |T_d|` computed in floating point.
pub fn log2_count_trees(d: usize) -> Result<f64> {
    if d == 0 || d > 60 {
        return Err(Error::Config(format!("log2_count_trees needs 1 <= d <= 60, got {d}")));
    }
    let mut binom = 1.0f64;
    let mut acc = 0.0;
    for m in 1..=d {
        binom = binom * (d - m + 1) as f64 / m as f64;
        acc += binom * ((2f64).powi(m as i32) - 1.0).log2();
    }
    Ok(acc)
}

/// Potential-parent lists for every non-source pattern, in pattern order.
fn parent_choices(patterns: &BTreeSet<MissingPattern>) -> Result<Vec<(MissingPattern, Vec<MissingPattern>)>> {
    check_pattern_set(patterns)?;
    let mut out = Vec::new();
    for r in patterns.iter().filter(|r| !r.is_complete()) {
        let pp = potential_parents(r, patterns.iter().copied())?;
        if pp.is_empty() {
            return Err(Error::OrphanPattern { pattern: r.to_string() });
        }
        out.push((*r, pp));
    }
    Ok(out)
}

/// Number of tree graphs over an arbitrary pattern set.
pub fn count_trees_over(patterns: &BTreeSet<MissingPattern>) -> Result<BigUint> {
    Ok(parent_choices(patterns)?
        .iter()
        .fold(BigUint::from(1u32), |acc, (_, pp)| acc * BigUint::from(pp.len())))
}

/// Lazily yields every tree graph over `patterns`, each exactly once.
#[derive(Debug)]
pub struct TreeEnumerator {
    d: usize,
    patterns: BTreeSet<MissingPattern>,
    choices: Vec<(MissingPattern, Vec<MissingPattern>)>,
    counter: Vec<usize>,
    done: bool,
}

impl Iterator for TreeEnumerator {
    type Item = TreeGraph;

    fn next(&mut self) -> Option<TreeGraph> {
        if self.done {
            return None;
        }
        let parent = self
            .choices
            .iter()
            .zip(&self.counter)
            .map(|((r, pp), &k)| (*r, pp[k]))
            .collect();
        let tree = TreeGraph {
            d: self.d,
            patterns: self.patterns.clone(),
            parent,
        };
        // mixed-radix increment
        self.done = true;
        for (i, (_, pp)) in self.choices.iter().enumerate() {
            self.counter[i] += 1;
            if self.counter[i] < pp.len() {
                self.done = false;
                break;
            }
            self.counter[i] = 0;
        }
        Some(tree)
    }
}

pub fn enumerate_trees(patterns: &BTreeSet<MissingPattern>, cap: u64) -> Result<TreeEnumerator> {
    let count = count_trees_over(patterns)?;
    if count > BigUint::from(cap) {
        return Err(Error::EnumerationCap {
            count: count.to_string(),
            cap,
        });
    }
    let choices = parent_choices(patterns)?;
    let d = check_pattern_set(patterns)?;
    Ok(TreeEnumerator {
        d,
        patterns: patterns.clone(),
        counter: vec![0; choices.len()],
        choices,
        done: false,
    })
}

/// Draws each parent uniformly from the potential parents; every tree over
/// the set is equally likely.
pub fn sample_tree_uniform<R: Rng + ?Sized>(patterns: &BTreeSet<MissingPattern>, rng: &mut R) -> Result<TreeGraph> {
    let d = check_pattern_set(patterns)?;
    let parent = parent_choices(patterns)?
        .into_iter()
        .map(|(r, pp)| (r, pp[rng.random_range(0..pp.len())]))
        .collect();
    Ok(TreeGraph {
        d,
        patterns: patterns.clone(),
        parent,
    })
}

/// Upper bound on uniform proposals drawn by [`sample_tree_pmf`].
pub const PMF_MAX_PROPOSALS: u64 = 10_000_000;

/// Rejection sampler over trees: uniform proposals accepted with
/// probability `pmf(T) / max pmf`. Trees missing from `pmf` have mass zero.
pub fn sample_tree_pmf<R: Rng + ?Sized>(
    patterns: &BTreeSet<MissingPattern>,
    pmf: &BTreeMap<TreeGraph, f64>,
    rng: &mut R,
) -> Result<TreeGraph> {
    check_pattern_set(patterns)?;
    let mut total = 0.0;
    let mut max = 0.0f64;
    for (t, &p) in pmf {
        if t.patterns != *patterns || !validate(&PatternGraph::from(t)).is_ok() {
            return Err(Error::InvalidGraph(format!(
                "pmf assigns mass to a tree that is not valid over the pattern set: {t}"
            )));
        }
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::Config(format!("pmf value {p} is not a probability")));
        }
        total += p;
        max = max.max(p);
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("pmf sums to {total}, not 1")));
    }
    for _ in 0..PMF_MAX_PROPOSALS {
        let t = sample_tree_uniform(patterns, rng)?;
        let p = pmf.get(&t).copied().unwrap_or(0.0);
        if p > 0.0 && rng.random::<f64>() * max < p {
            return Ok(t);
        }
    }
    Err(Error::Sampling(format!(
        "no tree accepted after {PMF_MAX_PROPOSALS} proposals"
    )))
}

/// Union of parent sets, pattern by pattern.
pub fn merge(g1: &PatternGraph, g2: &PatternGraph) -> Result<PatternGraph> {
    if g1.d != g2.d {
        return Err(Error::DimensionMismatch {
            expected: g1.d,
            got: g2.d,
        });
    }
    if g1.patterns != g2.patterns {
        return Err(Error::InvalidGraph("merge needs identical pattern sets".into()));
    }
    let mut out = g1.clone();
    for (c, p) in g2.edges() {
        out.add_edge(c, p)?;
    }
    Ok(out)
}

/// Undirected graph over patterns with its maximal cliques.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MoralGraph {
    pub nodes: Vec<MissingPattern>,
    pub edges: BTreeSet<(MissingPattern, MissingPattern)>,
    pub cliques: Vec<Vec<MissingPattern>>,
}

impl MoralGraph {
    fn new(nodes: Vec<MissingPattern>, edges: BTreeSet<(MissingPattern, MissingPattern)>) -> Self {
        let mut adj: BTreeMap<MissingPattern, BTreeSet<MissingPattern>> =
            nodes.iter().map(|n| (*n, BTreeSet::new())).collect();
        for (a, b) in &edges {
            adj.get_mut(a).unwrap().insert(*b);
            adj.get_mut(b).unwrap().insert(*a);
        }
        let mut cliques = Vec::new();
        bron_kerbosch(
            &adj,
            BTreeSet::new(),
            nodes.iter().copied().collect(),
            BTreeSet::new(),
            &mut cliques,
        );
        // members in descending bit-string order (1_d first), cliques sorted
        // by their leading members
        for c in &mut cliques {
            c.sort_by(|a, b| b.cmp(a));
        }
        cliques.sort_by(|a, b| b.cmp(a));
        Self { nodes, edges, cliques }
    }

    pub fn adjacent(&self, a: &MissingPattern, b: &MissingPattern) -> bool {
        let key = if a < b { (*a, *b) } else { (*b, *a) };
        self.edges.contains(&key)
    }
}

fn bron_kerbosch(
    adj: &BTreeMap<MissingPattern, BTreeSet<MissingPattern>>,
    r: BTreeSet<MissingPattern>,
    mut p: BTreeSet<MissingPattern>,
    mut x: BTreeSet<MissingPattern>,
    out: &mut Vec<Vec<MissingPattern>>,
) {
    if p.is_empty() && x.is_empty() {
        out.push(r.into_iter().collect());
        return;
    }
    let pivot = *p.union(&x).max_by_key(|u| adj[u].intersection(&p).count()).unwrap();
    let candidates: Vec<MissingPattern> = p.difference(&adj[&pivot]).copied().collect();
    for v in candidates {
        let mut r2 = r.clone();
        r2.insert(v);
        let p2 = p.intersection(&adj[&v]).copied().collect();
        let x2 = x.intersection(&adj[&v]).copied().collect();
        bron_kerbosch(adj, r2, p2, x2, out);
        p.remove(&v);
        x.insert(v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(s: &str) -> MissingPattern {
        s.parse().unwrap()
    }

    fn set(ps: &[&str]) -> BTreeSet<MissingPattern> {
        ps.iter().map(|s| p(s)).collect()
    }

    fn full(d: usize) -> BTreeSet<MissingPattern> {
        MissingPattern::all(d).unwrap().into_iter().collect()
    }

    #[test]
    fn ccmv_validates() {
        let t = build_ccmv(&full(3)).unwrap();
        assert!(validate(&PatternGraph::from(&t)).is_ok());
        assert_eq!(t.parent(&p("001")), Some(p("111")));
        assert_eq!(t.edge_count(), 7);
    }

    #[test]
    fn validate_reports_violations() {
        let mut g = PatternGraph::new(3);
        g.add_edge(p("110"), p("111")).unwrap();
        g.add_edge(p("101"), p("110")).unwrap();
        let rep = validate(&g);
        assert!(rep.violations.contains(&Violation::Regularity {
            child: p("101"),
            parent: p("110")
        }));

        let mut g = PatternGraph::new(3);
        g.add_edge(p("100"), p("111")).unwrap();
        g.add_edge(p("000"), p("111")).unwrap();
        g.add_edge(p("000"), p("100")).unwrap();
        let rep = validate(&g);
        assert!(rep.violations.contains(&Violation::MultipleParents {
            child: p("000"),
            parents: vec![p("100"), p("111")]
        }));
        assert!(TreeGraph::try_from(&g).is_err());
    }

    #[test]
    fn nearest_case_parents() {
        let all5 = full(5);
        let l = build_lncmv(&all5).unwrap();
        let r = build_rncmv(&all5).unwrap();
        assert_eq!(l.parent(&p("01010")), Some(p("11010")));
        assert_eq!(r.parent(&p("01010")), Some(p("01011")));
        assert!(l.is_gncmv() && r.is_gncmv());
        assert_eq!(l.depth(), 5);
    }

    #[test]
    fn nearest_case_compression_and_orphans() {
        let s = set(&["111", "100", "000"]);
        let l = build_lncmv(&s).unwrap();
        // 100 -> 110 (absent) -> 111
        assert_eq!(l.parent(&p("100")), Some(p("111")));
        assert_eq!(l.parent(&p("000")), Some(p("100")));
        match build_nearest(&s, FlipSide::Leftmost, false) {
            Err(Error::OrphanPattern { pattern }) => assert_eq!(pattern, "100"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn paths_and_ancestors() {
        let c = build_ccmv(&full(3)).unwrap();
        assert_eq!(c.path_to_source(&p("001")).unwrap(), vec![p("111"), p("001")]);
        let l = build_lncmv(&full(3)).unwrap();
        assert_eq!(
            l.path_to_source(&p("000")).unwrap(),
            vec![p("111"), p("110"), p("100"), p("000")]
        );
        assert_eq!(l.path_to_source(&p("111")).unwrap(), vec![p("111")]);
        assert_eq!(l.ancestors(&p("000")).unwrap(), set(&["111", "110", "100"]));
        assert!(l.path_to_source(&p("11")).is_err());
    }

    #[test]
    fn tree_counts() {
        let counts: Vec<String> = (1..=3).map(|d| count_trees(d).unwrap().to_string()).collect();
        assert_eq!(counts, ["1", "3", "189"]);
        assert!(log2_count_trees(5).unwrap() >= 18.0);
        assert!(log2_count_trees(6).unwrap() >= 66.0);
        assert!(count_trees(0).is_err());
        assert!(count_trees(25).is_err());
    }

    /// Independent oracle: every map from non-source patterns to arbitrary
    /// patterns, kept when it passes validation.
    fn brute_force_tree_count(d: usize) -> usize {
        let all = MissingPattern::all(d).unwrap();
        let non_source: Vec<_> = all.iter().filter(|r| !r.is_complete()).copied().collect();
        let k = all.len();
        let total = k.pow(non_source.len() as u32);
        let mut valid = 0;
        for code in 0..total {
            let mut c = code;
            let mut g = PatternGraph::new(d);
            for r in &all {
                g.add_pattern(*r).unwrap();
            }
            for r in &non_source {
                g.add_edge(*r, all[c % k]).unwrap();
                c /= k;
            }
            if validate(&g).is_ok() {
                valid += 1;
            }
        }
        valid
    }

    #[test]
    fn enumeration_matches_brute_force() {
        assert_eq!(brute_force_tree_count(1), 1);
        assert_eq!(brute_force_tree_count(2), 3);
        for d in 1..=3 {
            let trees: Vec<_> = enumerate_trees(&full(d), DEFAULT_ENUMERATION_CAP).unwrap().collect();
            let unique: BTreeSet<_> = trees.iter().cloned().collect();
            assert_eq!(unique.len(), trees.len());
            assert_eq!(BigUint::from(trees.len()), count_trees(d).unwrap());
            for t in &trees {
                assert!(validate(&PatternGraph::from(t)).is_ok());
                assert_eq!(t.edge_count(), (1 << d) - 1);
            }
        }
        assert_eq!(enumerate_trees(&set(&["11", "10"]), 10).unwrap().count(), 1);
        match enumerate_trees(&full(5), DEFAULT_ENUMERATION_CAP) {
            Err(Error::EnumerationCap { count, .. }) => {
                assert_eq!(count, count_trees(5).unwrap().to_string())
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uniform_sampling_small_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = set(&["11", "10"]);
        for _ in 0..10 {
            assert_eq!(
                sample_tree_uniform(&s, &mut rng).unwrap().parent(&p("10")),
                Some(p("11"))
            );
        }
        let s = set(&["111", "110", "100"]);
        let mut seen = BTreeSet::new();
        for _ in 0..200 {
            seen.insert(sample_tree_uniform(&s, &mut rng).unwrap());
        }
        assert_eq!(seen.len(), 2);
        assert!(sample_tree_uniform(&set(&["111", "000"]), &mut rng).is_ok());
    }

    #[test]
    fn pmf_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = full(2);
        let ccmv = build_ccmv(&s).unwrap();
        let pmf: BTreeMap<_, _> = [(ccmv.clone(), 1.0)].into_iter().collect();
        for _ in 0..20 {
            assert_eq!(sample_tree_pmf(&s, &pmf, &mut rng).unwrap(), ccmv);
        }
        let bad_tree = build_ccmv(&set(&["11", "10"])).unwrap();
        let bad: BTreeMap<_, _> = [(bad_tree, 1.0)].into_iter().collect();
        assert!(sample_tree_pmf(&s, &bad, &mut rng).is_err());
    }

    #[test]
    fn moral_graph_cliques() {
        let l = build_lncmv(&full(3)).unwrap().sibling_moral_graph();
        let expected: Vec<Vec<MissingPattern>> = vec![
            vec![p("111"), p("110"), p("101"), p("011")],
            vec![p("110"), p("100"), p("010")],
            vec![p("101"), p("001")],
            vec![p("100"), p("000")],
        ];
        assert_eq!(l.cliques, expected);

        let c = build_ccmv(&full(3)).unwrap().sibling_moral_graph();
        assert_eq!(c.cliques.len(), 1);
        assert_eq!(c.cliques[0].len(), 8);

        let chain = TreeGraph::from_parent_map(
            2,
            set(&["11", "10", "00"]),
            [(p("10"), p("11")), (p("00"), p("10"))].into_iter().collect(),
        )
        .unwrap();
        assert_eq!(
            chain.sibling_moral_graph().cliques,
            vec![vec![p("11"), p("10")], vec![p("10"), p("00")]]
        );
    }

    #[test]
    fn gncmv_checks() {
        assert!(build_lncmv(&full(3)).unwrap().is_gncmv());
        assert!(!build_ccmv(&full(3)).unwrap().is_gncmv());
        for t in enumerate_trees(&full(3), 1000).unwrap() {
            if t.is_gncmv() {
                assert_eq!(t.depth(), 3);
            }
        }
    }

    #[test]
    fn merge_union_and_idempotence() {
        let s = full(2);
        let t1 = TreeGraph::from_parent_map(
            2,
            s.clone(),
            [(p("10"), p("11")), (p("01"), p("11")), (p("00"), p("11"))]
                .into_iter()
                .collect(),
        )
        .unwrap();
        let t2 = TreeGraph::from_parent_map(
            2,
            s.clone(),
            [(p("10"), p("11")), (p("01"), p("11")), (p("00"), p("10"))]
                .into_iter()
                .collect(),
        )
        .unwrap();
        let g1 = PatternGraph::from(&t1);
        let m = merge(&g1, &PatternGraph::from(&t2)).unwrap();
        assert_eq!(m.parents_of(&p("00")), set(&["11", "10"]));
        assert_eq!(merge(&g1, &g1).unwrap(), g1);
        assert!(merge(&g1, &PatternGraph::new(3)).is_err());
    }

    #[test]
    fn merge_closure_contains_all_trees_d2() {
        let trees: Vec<PatternGraph> = enumerate_trees(&full(2), 100)
            .unwrap()
            .map(|t| PatternGraph::from(&t))
            .collect();
        let mut closure: Vec<PatternGraph> = trees.clone();
        loop {
            let mut added = false;
            let snapshot = closure.clone();
            for a in &snapshot {
                for b in &snapshot {
                    let m = merge(a, b).unwrap();
                    if !closure.contains(&m) {
                        closure.push(m);
                        added = true;
                    }
                }
            }
            if !added {
                break;
            }
        }
        for t in &trees {
            assert!(closure.contains(t));
        }
        // every closure member is a regular pattern graph with single source
        for g in &closure {
            for (c, par) in g.edges() {
                assert!(par.dominates(&c).unwrap());
            }
        }
        // 00 may take any nonempty subset of {11, 10, 01}: 7 graphs
        assert_eq!(closure.len(), 7);
    }

    #[test]
    fn representor_compresses_chains() {
        let l = build_lncmv(&full(3)).unwrap();
        let kept = set(&["111", "101", "011", "001"]);
        let rep = l.representor(&kept).unwrap();
        assert_eq!(rep.parent(&p("001")), Some(p("101")));
        assert_eq!(rep.parent(&p("011")), Some(p("111")));
        assert!(validate(&PatternGraph::from(&rep)).is_ok());
        assert!(l.representor(&set(&["101"])).is_err());
    }

    #[test]
    fn json_round_trip_and_dot() {
        let l = build_lncmv(&full(3)).unwrap();
        let text = serde_json::to_string(&l.to_json()).unwrap();
        assert!(text.contains("[\"000\",\"100\"]"));
        let back: GraphJson = serde_json::from_str(&text).unwrap();
        assert_eq!(TreeGraph::from_json(&back).unwrap(), l);
        let dot = l.to_dot();
        assert!(dot.contains("\"100\" -> \"000\""));
    }
}
