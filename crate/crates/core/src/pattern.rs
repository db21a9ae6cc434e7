//! Missing-data patterns and incomplete datasets.
//!
//! A pattern is a length-`d` binary vector where `1` marks an observed
//! coordinate. Patterns print as bit strings with coordinate 1 leftmost,
//! e.g. `101` observes the first and third variables.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest dimension for which exhaustive pattern sets may be built.
pub const MAX_EXHAUSTIVE_DIM: usize = 24;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct MissingPattern {
    mask: u64,
    d: u8,
}

impl MissingPattern {
    pub fn new(mask: u64, d: usize) -> Result<Self> {
        if d == 0 || d > 64 {
            return Err(Error::InvalidPattern(format!("dimension {d} not in 1..=64")));
        }
        if d < 64 && mask >> d != 0 {
            return Err(Error::InvalidPattern(format!(
                "mask {mask:#b} has bits beyond dimension {d}"
            )));
        }
        Ok(Self { mask, d: d as u8 })
    }

    pub fn from_observed(observed: &[bool]) -> Result<Self> {
        let mut mask = 0u64;
        for (j, &o) in observed.iter().enumerate() {
            if o {
                mask |= 1 << j;
            }
        }
        Self::new(mask, observed.len())
    }

    /// The fully observed pattern `1_d`.
    pub fn complete(d: usize) -> Self {
        let mask = if d == 64 { u64::MAX } else { (1u64 << d) - 1 };
        Self { mask, d: d as u8 }
    }

    pub fn empty(d: usize) -> Self {
        Self { mask: 0, d: d as u8 }
    }

    pub fn dim(&self) -> usize {
        self.d as usize
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn is_complete(&self) -> bool {
        self.mask == Self::complete(self.dim()).mask
    }

    pub fn is_observed(&self, j: usize) -> bool {
        self.mask >> j & 1 == 1
    }

    pub fn n_observed(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn n_missing(&self) -> usize {
        self.dim() - self.n_observed()
    }

    /// Observed coordinates in increasing order (0-based).
    pub fn observed(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.is_observed(j)).collect()
    }

    pub fn missing(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| !self.is_observed(j)).collect()
    }

    /// Returns the pattern with coordinate `j` set to observed.
    pub fn with_observed(&self, j: usize) -> Self {
        Self {
            mask: self.mask | 1 << j,
            d: self.d,
        }
    }

    /// Strict dominance `self > other`: every coordinate observed in `other`
    /// is observed in `self`, and the two differ.
    pub fn dominates(&self, other: &Self) -> Result<bool> {
        if self.d != other.d {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(self.mask != other.mask && other.mask & !self.mask == 0)
    }

    fn sort_key(&self) -> u64 {
        // coordinate 0 becomes the most significant bit
        self.mask.reverse_bits() >> (64 - self.dim())
    }

    /// Every pattern of dimension `d`, in lexicographic order.
    pub fn all(d: usize) -> Result<Vec<Self>> {
        if d == 0 || d > MAX_EXHAUSTIVE_DIM {
            return Err(Error::InvalidPattern(format!(
                "exhaustive pattern sets need 1 <= d <= {MAX_EXHAUSTIVE_DIM}, got {d}"
            )));
        }
        let mut v: Vec<Self> = (0..1u64 << d).map(|m| Self { mask: m, d: d as u8 }).collect();
        v.sort();
        Ok(v)
    }
}

/// `{s in patterns : s > r}`. Errors for the source pattern.
pub fn potential_parents(
    r: &MissingPattern,
    patterns: impl IntoIterator<Item = MissingPattern>,
) -> Result<Vec<MissingPattern>> {
    if r.is_complete() {
        return Err(Error::InvalidPattern(format!(
            "{r} is the source pattern and has no parents"
        )));
    }
    let mut out = Vec::new();
    for s in patterns {
        if s.dominates(r)? {
            out.push(s);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

impl Ord for MissingPattern {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d
            .cmp(&other.d)
            .then_with(|| self.sort_key().cmp(&other.sort_key()))
    }
}

impl PartialOrd for MissingPattern {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MissingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.dim() {
            f.write_str(if self.is_observed(j) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for MissingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MissingPattern({self})")
    }
}

impl FromStr for MissingPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits: Result<Vec<bool>> = s
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                _ => Err(Error::InvalidPattern(format!("bad character {c:?} in {s:?}"))),
            })
            .collect();
        Self::from_observed(&bits?)
    }
}

impl Serialize for MissingPattern {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MissingPattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rows of a dataset with missing entries. A missing entry is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncompleteDataset {
    names: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
    patterns: Vec<MissingPattern>,
}

impl IncompleteDataset {
    pub fn new(names: Vec<String>, rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let d = names.len();
        if rows.is_empty() {
            return Err(Error::Config("dataset has no rows".into()));
        }
        let mut patterns = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Data {
                    row: i + 1,
                    column: row.len().min(d) + 1,
                    reason: format!("expected {d} fields, found {}", row.len()),
                });
            }
            let obs: Vec<bool> = row.iter().map(Option::is_some).collect();
            patterns.push(MissingPattern::from_observed(&obs)?);
        }
        Ok(Self { names, rows, patterns })
    }

    /// Dataset with default variable names `x1..xd`.
    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let names = (1..=d).map(|j| format!("x{j}")).collect();
        Self::new(names, rows)
    }

    /// Reads CSV with a header row. Empty cells and `NA` are missing.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let d = names.len();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != d {
                return Err(Error::Data {
                    row: line,
                    column: rec.len().min(d) + 1,
                    reason: format!("expected {d} fields, found {}", rec.len()),
                });
            }
            let mut row = Vec::with_capacity(d);
            for (j, cell) in rec.iter().enumerate() {
                if cell.is_empty() || cell == "NA" {
                    row.push(None);
                } else {
                    let v: f64 = cell.parse().map_err(|_| Error::Data {
                        row: line,
                        column: j + 1,
                        reason: format!("non-numeric cell {cell:?}"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Data {
                            row: line,
                            column: j + 1,
                            reason: format!("non-finite cell {cell:?}"),
                        });
                    }
                    row.push(Some(v));
                }
            }
            rows.push(row);
        }
        Self::new(names, rows)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&self.names)?;
        for row in &self.rows {
            wtr.write_record(row.iter().map(|v| match v {
                Some(x) => format_value(*x),
                None => "NA".to_string(),
            }))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Option<f64>] {
        &self.rows[i]
    }

    pub fn pattern(&self, i: usize) -> MissingPattern {
        self.patterns[i]
    }

    pub fn patterns(&self) -> &[MissingPattern] {
        &self.patterns
    }

    /// Row counts per observed pattern.
    pub fn pattern_counts(&self) -> BTreeMap<MissingPattern, usize> {
        let mut counts = BTreeMap::new();
        for p in &self.patterns {
            *counts.entry(*p).or_insert(0) += 1;
        }
        counts
    }

    /// Distinct patterns present in the data.
    pub fn pattern_set(&self) -> BTreeSet<MissingPattern> {
        self.patterns.iter().copied().collect()
    }

    pub fn indices_with_pattern(&self, r: &MissingPattern) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.patterns[i] == *r).collect()
    }

    /// Values of the given coordinates for every row with pattern `r`.
    /// Every requested coordinate must be observed under `r`.
    pub fn restricted(&self, r: &MissingPattern, coords: &[usize]) -> Vec<Vec<f64>> {
        debug_assert!(coords.iter().all(|&j| r.is_observed(j)));
        self.rows
            .iter()
            .zip(&self.patterns)
            .filter(|(_, p)| *p == r)
            .map(|(row, _)| coords.iter().map(|&j| row[j].unwrap()).collect())
            .collect()
    }

    /// Complete rows (pattern `1_d`) as dense vectors.
    pub fn complete_rows(&self) -> Vec<Vec<f64>> {
        let all: Vec<usize> = (0..self.dim()).collect();
        self.restricted(&MissingPattern::complete(self.dim()), &all)
    }

    /// Dataset made of the given row indices (with repetition allowed).
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            patterns: idx.iter().map(|&i| self.patterns[i]).collect(),
        }
    }

    /// Keeps only rows whose pattern satisfies `keep`.
    pub fn filter_patterns(&self, keep: impl Fn(&MissingPattern) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.patterns[i])).collect();
        self.select(&idx)
    }
}

/// Shortest round-tripping decimal representation.
pub fn format_value(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}
