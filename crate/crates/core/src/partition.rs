//! Partitions of `[0, p)` and their construction from thresholded matrices.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::check_symmetric;
use crate::union_find::DisjointSet;
use crate::{Error, Result};

/// Largest dimension accepted by [`enumerate_partitions`]. Bell(10) = 115975.
pub const MAX_ENUMERATION_DIM: usize = 10;

/// An ordered grouping of `[0, p)` into disjoint non-empty groups.
///
/// Always held in canonical form: indices sorted inside each group, groups
/// ordered by their smallest element. Equality is therefore structural.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct Partition {
    p: usize,
    groups: Vec<Vec<usize>>,
    labels: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    p: usize,
    groups: Vec<Vec<usize>>,
}

impl TryFrom<PartitionRepr> for Partition {
    type Error = Error;
    fn try_from(r: PartitionRepr) -> Result<Self> {
        Partition::new(r.p, r.groups)
    }
}

impl From<Partition> for PartitionRepr {
    fn from(b: Partition) -> Self {
        PartitionRepr {
            p: b.p,
            groups: b.groups,
        }
    }
}

impl Partition {
    /// Builds a partition from arbitrary-order groups, validating coverage
    /// and disjointness.
    pub fn new(p: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidPartition("dimension must be positive".into()));
        }
        let mut labels = vec![usize::MAX; p];
        for (g, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::InvalidPartition(format!("group {} is empty", g + 1)));
            }
            for &i in group {
                if i >= p {
                    return Err(Error::IndexOutOfRange { index: i, p });
                }
                if labels[i] != usize::MAX {
                    return Err(Error::InvalidPartition(format!(
                        "index {} appears in more than one group",
                        i + 1
                    )));
                }
                labels[i] = g;
            }
        }
        if let Some(missing) = labels.iter().position(|&l| l == usize::MAX) {
            return Err(Error::InvalidPartition(format!(
                "index {} is not covered",
                missing + 1
            )));
        }
        Ok(Self::from_labels(&labels))
    }

    /// Builds the partition whose groups are the level sets of `labels`.
    /// Label values are arbitrary.
    pub fn from_labels(labels: &[usize]) -> Self {
        let p = labels.len();
        assert!(p > 0, "partition of an empty set");
        let mut remap = std::collections::HashMap::new();
        let mut canonical = Vec::with_capacity(p);
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            let next = groups.len();
            let g = *remap.entry(l).or_insert(next);
            if g == next {
                groups.push(Vec::new());
            }
            groups[g].push(i);
            canonical.push(g);
        }
        Self {
            p,
            groups,
            labels: canonical,
        }
    }

    pub fn singletons(p: usize) -> Self {
        Self::from_labels(&(0..p).collect::<Vec<_>>())
    }

    pub fn single_block(p: usize) -> Self {
        Self::from_labels(&vec![0; p])
    }

    /// Contiguous groups of the given sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(Error::InvalidPartition("zero-sized group".into()));
        }
        let labels: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &s)| std::iter::repeat_n(g, s))
            .collect();
        if labels.is_empty() {
            return Err(Error::InvalidPartition("dimension must be positive".into()));
        }
        Ok(Self::from_labels(&labels))
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of groups.
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Canonical group id of each index.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn group_of(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn max_block_size(&self) -> usize {
        self.groups.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `Σ_k p_k²`.
    pub fn penalty(&self) -> f64 {
        self.groups.iter().map(|g| (g.len() * g.len()) as f64).sum()
    }

    fn check_same_dim(&self, other: &Partition) -> Result<()> {
        if self.p != other.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                found: other.p,
            });
        }
        Ok(())
    }

    /// `true` iff `self` is finer than `other`: every group of `other` is a
    /// union of groups of `self`.
    pub fn refines(&self, other: &Partition) -> Result<bool> {
        self.check_same_dim(other)?;
        Ok(self.groups.iter().all(|g| {
            let target = other.labels[g[0]];
            g.iter().all(|&i| other.labels[i] == target)
        }))
    }

    /// Greatest lower bound: the coarsest partition refining both inputs.
    pub fn meet(&self, other: &Partition) -> Result<Partition> {
        self.check_same_dim(other)?;
        let paired: Vec<usize> = self
            .labels
            .iter()
            .zip(&other.labels)
            .map(|(&a, &b)| a * other.len() + b)
            .collect();
        Ok(Self::from_labels(&paired))
    }

    /// `true` iff a single group contains every given index.
    pub fn same_group(&self, indices: &[usize]) -> Result<bool> {
        for &i in indices {
            if i >= self.p {
                return Err(Error::IndexOutOfRange { index: i, p: self.p });
            }
        }
        Ok(match indices.first() {
            None => true,
            Some(&first) => indices.iter().all(|&i| self.labels[i] == self.labels[first]),
        })
    }
}

/// One line, 1-based indices: `1,2;3,4,5`.
impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (g, group) in self.groups.iter().enumerate() {
            if g > 0 {
                f.write_str(";")?;
            }
            for (k, i) in group.iter().enumerate() {
                if k > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{}", i + 1)?;
            }
        }
        Ok(())
    }
}

impl FromStr for Partition {
    type Err = Error;

    /// Parses the line format. The dimension is the largest index present.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse_err = |message: String| Error::Parse { line: 1, message };
        if s.is_empty() {
            return Err(parse_err("empty partition line".into()));
        }
        let mut groups = Vec::new();
        let mut p = 0;
        for part in s.split(';') {
            let mut group = Vec::new();
            for tok in part.split(',') {
                let tok = tok.trim();
                let idx: usize = tok
                    .parse()
                    .map_err(|_| parse_err(format!("invalid index {tok:?}")))?;
                if idx == 0 {
                    return Err(parse_err("indices are 1-based".into()));
                }
                p = p.max(idx);
                group.push(idx - 1);
            }
            groups.push(group);
        }
        Partition::new(p, groups)
    }
}

/// Connected components of the graph with an edge `(i, j)`, `i != j`,
/// whenever `|c_ij| > lambda` (or `>=` when `strict` is false).
pub fn components_of_threshold(c: &DMatrix<f64>, lambda: f64, strict: bool) -> Result<Partition> {
    check_symmetric(c)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!(
            "threshold {lambda} is outside [0, 1]"
        )));
    }
    Ok(components_above(c, lambda, strict))
}

/// Connected components of the nonzero pattern of `m` (`|m_ij| > tol`).
pub fn components_of_pattern(m: &DMatrix<f64>, tol: f64) -> Result<Partition> {
    check_symmetric(m)?;
    Ok(components_above(m, tol, true))
}

fn components_above(c: &DMatrix<f64>, lambda: f64, strict: bool) -> Partition {
    let p = c.nrows();
    let mut ds = DisjointSet::new(p);
    for j in 0..p {
        for i in j + 1..p {
            let v = c[(i, j)].abs();
            if (strict && v > lambda) || (!strict && v >= lambda) {
                ds.union(i, j);
            }
        }
    }
    Partition::from_labels(&ds.labels())
}

/// Off-diagonal correlation edges sorted by decreasing magnitude, used to
/// sweep thresholds from 1 downwards while growing components.
pub(crate) struct ThresholdPath {
    edges: Vec<(f64, u32, u32)>,
    next: usize,
    ds: DisjointSet,
    changed: bool,
}

impl ThresholdPath {
    /// Keeps only edges with magnitude strictly above `floor`.
    pub(crate) fn new(c: &DMatrix<f64>, floor: f64) -> Self {
        let p = c.nrows();
        let mut edges = Vec::new();
        for j in 0..p {
            for i in j + 1..p {
                let v = c[(i, j)].abs();
                if v > floor {
                    edges.push((v, j as u32, i as u32));
                }
            }
        }
        edges.sort_unstable_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| a.1.cmp(&b.1))
                .then_with(|| a.2.cmp(&b.2))
        });
        Self {
            edges,
            next: 0,
            ds: DisjointSet::new(p),
            changed: true,
        }
    }

    /// Distinct edge magnitudes, largest first.
    pub(crate) fn distinct_magnitudes(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.edges.iter().map(|e| e.0).collect();
        out.dedup();
        out
    }

    /// Adds every edge with magnitude strictly above `lambda`. Thresholds must
    /// be supplied in non-increasing order.
    pub(crate) fn advance_to(&mut self, lambda: f64) {
        while let Some(&(v, i, j)) = self.edges.get(self.next) {
            if v <= lambda {
                break;
            }
            if self.ds.union(i as usize, j as usize) {
                self.changed = true;
            }
            self.next += 1;
        }
    }

    pub(crate) fn max_block_size(&self) -> usize {
        self.ds.max_size()
    }

    /// Current partition if it changed since the last call.
    pub(crate) fn take_if_changed(&mut self) -> Option<Partition> {
        if !self.changed {
            return None;
        }
        self.changed = false;
        Some(Partition::from_labels(&self.ds.labels()))
    }
}

/// Every partition of `[0, p)`, each exactly once, in canonical form.
///
/// Generated from restricted-growth strings. Errors for `p` above
/// [`MAX_ENUMERATION_DIM`] since the count grows like the Bell numbers.
pub fn enumerate_partitions(p: usize) -> Result<PartitionIter> {
    if p == 0 {
        return Err(Error::InvalidInput("dimension must be positive".into()));
    }
    if p > MAX_ENUMERATION_DIM {
        return Err(Error::TooLarge {
            what: "exhaustive partition enumeration",
            size: p,
            limit: MAX_ENUMERATION_DIM,
            hint: "the number of partitions grows like the Bell numbers; \
                   use a threshold-grid method instead",
        });
    }
    Ok(PartitionIter {
        rgs: vec![0; p],
        done: false,
    })
}

pub struct PartitionIter {
    rgs: Vec<usize>,
    done: bool,
}

impl Iterator for PartitionIter {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.done {
            return None;
        }
        let out = Partition::from_labels(&self.rgs);
        // Advance: rightmost position that can grow, then reset the tail.
        let p = self.rgs.len();
        let mut prefix_max = vec![0; p];
        for i in 1..p {
            prefix_max[i] = prefix_max[i - 1].max(self.rgs[i - 1]);
        }
        match (1..p).rev().find(|&i| self.rgs[i] <= prefix_max[i]) {
            Some(i) => {
                self.rgs[i] += 1;
                for v in &mut self.rgs[i + 1..] {
                    *v = 0;
                }
            }
            None => self.done = true,
        }
        Some(out)
    }
}
