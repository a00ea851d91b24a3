//! Paths, path frequencies, rule selection and post-treatment.
//!
//! A [`Path`] is the symbolic identity of a tree node: the set of
//! `(feature, quantile rank, side)` constraints leading to it from the root.
//! Paths are compared by rank, never by cut value, so two forests grown on
//! different samples can be matched rule by rule.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QuantileGrid};
use crate::error::{Error, Result};

/// Which child of a split: `Left` is `x < cut`, `Right` is `x >= cut`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// Whether `x` lies on this side of `cut`.
    #[inline]
    pub fn admits(self, x: f64, cut: f64) -> bool {
        match self {
            Side::Left => x < cut,
            Side::Right => x >= cut,
        }
    }
}

/// One split constraint. Ordering is `(feature, rank, side)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Constraint {
    /// Zero-based feature index.
    pub feature: usize,
    /// Quantile rank in `1..q`.
    pub rank: usize,
    pub side: Side,
}

impl Constraint {
    pub fn new(feature: usize, rank: usize, side: Side) -> Self {
        Constraint { feature, rank, side }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = match self.side {
            Side::Left => 'L',
            Side::Right => 'R',
        };
        write!(f, "({},{},{})", self.feature + 1, self.rank, side)
    }
}

/// Canonical path: constraints sorted by `(feature, rank, side)`, no duplicates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path(Vec<Constraint>);

impl Path {
    pub fn constraints(&self) -> &[Constraint] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Features constrained by this path, ascending and deduplicated.
    pub fn features(&self) -> impl Iterator<Item = usize> + '_ {
        let mut last = None;
        self.0.iter().filter_map(move |c| {
            if last == Some(c.feature) {
                None
            } else {
                last = Some(c.feature);
                Some(c.feature)
            }
        })
    }

    /// Membership of `x` in the path's hyperrectangle.
    pub fn contains(&self, grid: &QuantileGrid, x: &[f64]) -> bool {
        self.0.iter().all(|c| {
            let cut = grid.cut_value(c.feature, c.rank).expect("path rank exists in grid");
            c.side.admits(x[c.feature], cut)
        })
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "}}")
    }
}

/// Sorts a tree-ordered path into canonical form.
///
/// Identical triplets are merged. Constraints whose intersection is empty on
/// the rank scale, such as `(j, r, L)` with `(j, r, R)`, are rejected.
pub fn canonicalize_path(raw: impl IntoIterator<Item = Constraint>) -> Result<Path> {
    let mut constraints: Vec<Constraint> = raw.into_iter().collect();
    if constraints.is_empty() {
        return Err(Error::InvalidPath("empty path".into()));
    }
    constraints.sort_unstable();
    constraints.dedup();
    for window in constraints.chunk_by(|a, b| a.feature == b.feature) {
        let upper = window.iter().filter(|c| c.side == Side::Left).map(|c| c.rank).min();
        let lower = window.iter().filter(|c| c.side == Side::Right).map(|c| c.rank).max();
        if let (Some(upper), Some(lower)) = (upper, lower) {
            if upper <= lower {
                return Err(Error::InvalidPath(format!(
                    "empty region on feature {}: x >= q{lower} and x < q{upper}",
                    window[0].feature + 1
                )));
            }
        }
    }
    Ok(Path(constraints))
}

/// Occurrence counts of canonical paths over a forest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathFrequencyTable {
    counts: HashMap<Path, u64>,
    num_trees: u64,
}

impl PathFrequencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table directly from counts; used for fixtures and tests.
    pub fn from_counts(counts: impl IntoIterator<Item = (Path, u64)>, num_trees: u64) -> Result<Self> {
        let counts: HashMap<Path, u64> = counts.into_iter().collect();
        if counts.values().any(|&c| c == 0 || c > num_trees) {
            return Err(Error::InvalidParameter(format!(
                "path counts must lie in 1..={num_trees}"
            )));
        }
        Ok(PathFrequencyTable { counts, num_trees })
    }

    /// Records one tree; each distinct path counts at most once.
    pub fn add_tree<'a>(&mut self, paths: impl IntoIterator<Item = &'a Path>) {
        let distinct: HashSet<&Path> = paths.into_iter().collect();
        for path in distinct {
            *self.counts.entry(path.clone()).or_insert(0) += 1;
        }
        self.num_trees += 1;
    }

    /// Adds another table's counts; associative and commutative.
    pub fn merge(&mut self, other: PathFrequencyTable) {
        for (path, count) in other.counts {
            *self.counts.entry(path).or_insert(0) += count;
        }
        self.num_trees += other.num_trees;
    }

    pub fn num_trees(&self) -> u64 {
        self.num_trees
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, path: &Path) -> u64 {
        self.counts.get(path).copied().unwrap_or(0)
    }

    /// Proportion of trees containing `path`.
    pub fn frequency(&self, path: &Path) -> f64 {
        if self.num_trees == 0 {
            0.0
        } else {
            self.count(path) as f64 / self.num_trees as f64
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Path, u64)> {
        self.counts.iter().map(|(p, &c)| (p, c))
    }

    /// Paths by decreasing count, ties in canonical order.
    pub fn ranked(&self) -> Vec<(&Path, u64)> {
        let mut ranked: Vec<(&Path, u64)> = self.iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked
    }

    /// Distinct frequency values, decreasing.
    pub fn distinct_frequencies(&self) -> Vec<f64> {
        let mut counts: Vec<u64> = self.counts.values().copied().collect();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        counts.dedup();
        counts.into_iter().map(|c| c as f64 / self.num_trees as f64).collect()
    }
}

/// Paths with frequency strictly above `p0`, most frequent first.
pub fn select_paths(table: &PathFrequencyTable, p0: f64) -> Vec<Path> {
    table
        .ranked()
        .into_iter()
        .take_while(|&(_, count)| count as f64 / table.num_trees() as f64 > p0)
        .map(|(path, _)| path.clone())
        .collect()
}

/// Removes paths whose rule is a linear combination of earlier kept rules.
///
/// A rule's prediction function lies in the span of the constant function and
/// its hyperrectangle indicator, so dependence is decided on indicators over
/// the cells of the partition induced by the cuts of the candidate set. Rules
/// on disjoint feature sets only interact through the constant, so the test
/// for each candidate is restricted to the connected block of kept rules
/// sharing features with it. Ranks are exact integers: no tolerance involved.
///
/// The scan keeps decisions prefix-stable: `post_treat(&selected[..k])` is the
/// prefix of `post_treat(selected)` made of paths from `selected[..k]`.
pub fn post_treat(selected: &[Path], grid: &QuantileGrid) -> Vec<Path> {
    let mut treatment = PostTreatment::new(grid);
    for candidate in selected {
        treatment.offer(candidate);
    }
    treatment.into_kept()
}

/// Incremental form of [`post_treat`]: paths are offered one at a time.
#[derive(Debug, Clone)]
pub struct PostTreatment<'g> {
    grid: &'g QuantileGrid,
    kept: Vec<Path>,
}

impl<'g> PostTreatment<'g> {
    pub fn new(grid: &'g QuantileGrid) -> Self {
        PostTreatment { grid, kept: Vec::new() }
    }

    /// Keeps `candidate` if its rule is independent of those kept so far.
    pub fn offer(&mut self, candidate: &Path) -> bool {
        debug_assert!(candidate
            .constraints()
            .iter()
            .all(|c| self.grid.position(c.feature, c.rank).is_some()));
        let kept: Vec<&Path> = self.kept.iter().collect();
        if kept.contains(&candidate) || !is_independent(&kept, candidate) {
            return false;
        }
        self.kept.push(candidate.clone());
        true
    }

    pub fn kept(&self) -> &[Path] {
        &self.kept
    }

    pub fn into_kept(self) -> Vec<Path> {
        self.kept
    }
}

fn is_independent(kept: &[&Path], candidate: &Path) -> bool {
    let block = connected_block(kept, candidate);
    let mut rules: Vec<&Path> = block.iter().map(|&i| kept[i]).collect();
    rules.push(candidate);
    let rows = cell_signatures(&rules);
    let with = exact_rank(&rows, rules.len());
    let without = exact_rank(&rows, rules.len() - 1);
    with > without
}

/// Indices of kept paths transitively sharing a feature with `candidate`.
fn connected_block(kept: &[&Path], candidate: &Path) -> Vec<usize> {
    let mut features: HashSet<usize> = candidate.features().collect();
    let mut in_block = vec![false; kept.len()];
    loop {
        let mut grew = false;
        for (i, path) in kept.iter().enumerate() {
            if !in_block[i] && path.features().any(|f| features.contains(&f)) {
                in_block[i] = true;
                features.extend(path.features());
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    (0..kept.len()).filter(|&i| in_block[i]).collect()
}

/// Distinct membership patterns `(1, 1_H1(cell), .., 1_Hm(cell))` over all
/// cells of the partition generated by the rules' cuts.
///
/// Cells are enumerated one feature at a time and deduplicated after each
/// feature, so only realizable patterns are ever stored.
fn cell_signatures(rules: &[&Path]) -> Vec<Vec<bool>> {
    let mut features: Vec<usize> = rules.iter().flat_map(|p| p.features()).collect();
    features.sort_unstable();
    features.dedup();

    let mut patterns: HashSet<Vec<bool>> = HashSet::new();
    patterns.insert(vec![true; rules.len()]);
    for feature in features {
        let mut ranks: Vec<usize> = rules
            .iter()
            .flat_map(|p| p.constraints())
            .filter(|c| c.feature == feature)
            .map(|c| c.rank)
            .collect();
        ranks.sort_unstable();
        ranks.dedup();
        // interval t covers [cut_{t-1}, cut_t) in rank order
        let admitted: Vec<Vec<bool>> = (0..=ranks.len())
            .map(|t| {
                rules
                    .iter()
                    .map(|p| {
                        p.constraints().iter().filter(|c| c.feature == feature).all(|c| {
                            let pos = ranks.binary_search(&c.rank).unwrap();
                            match c.side {
                                Side::Left => t <= pos,
                                Side::Right => t > pos,
                            }
                        })
                    })
                    .collect()
            })
            .collect();
        let mut next = HashSet::with_capacity(patterns.len() * admitted.len());
        for pattern in &patterns {
            for allowed in &admitted {
                next.insert(pattern.iter().zip(allowed).map(|(&a, &b)| a && b).collect());
            }
        }
        patterns = next;
    }
    patterns.into_iter().collect()
}

/// Rank of the matrix whose rows are `[1, pattern[..cols]]`.
///
/// Fraction-free (Bareiss) elimination in `i128` is exact. Should an entry
/// overflow, the rank is recomputed over several 61-bit prime fields; the
/// rational rank is their maximum unless every prime divides all maximal
/// minors.
fn exact_rank(patterns: &[Vec<bool>], cols: usize) -> usize {
    let rows: Vec<Vec<i128>> = patterns
        .iter()
        .map(|p| {
            std::iter::once(1)
                .chain(p[..cols].iter().map(|&b| i128::from(b)))
                .collect()
        })
        .collect();
    bareiss_rank(rows.clone()).unwrap_or_else(|| {
        MODULI
            .iter()
            .map(|&m| modular_rank(&rows, m))
            .max()
            .unwrap_or(0)
    })
}

const MODULI: [u64; 3] = [2_305_843_009_213_693_951, 2_305_843_009_213_693_921, 2_305_843_009_213_693_907];

/// Exact rank of an integer matrix, or `None` on `i128` overflow.
pub(crate) fn bareiss_rank(mut rows: Vec<Vec<i128>>) -> Option<usize> {
    let ncols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    let mut prev_pivot: i128 = 1;
    for col in 0..ncols {
        let Some(pivot_row) = (rank..rows.len()).find(|&r| rows[r][col] != 0) else {
            continue;
        };
        rows.swap(rank, pivot_row);
        let pivot = rows[rank][col];
        for r in rank + 1..rows.len() {
            let factor = rows[r][col];
            for c in col..ncols {
                let value = pivot
                    .checked_mul(rows[r][c])
                    .and_then(|a| factor.checked_mul(rows[rank][c]).and_then(|b| a.checked_sub(b)))?;
                rows[r][c] = value / prev_pivot;
            }
        }
        prev_pivot = pivot;
        rank += 1;
        if rank == rows.len() {
            break;
        }
    }
    Some(rank)
}

fn modular_rank(rows: &[Vec<i128>], modulus: u64) -> usize {
    let m = u128::from(modulus);
    let mut a: Vec<Vec<u128>> = rows
        .iter()
        .map(|r| r.iter().map(|&v| v.rem_euclid(m as i128) as u128).collect())
        .collect();
    let ncols = a.first().map_or(0, Vec::len);
    let mut rank = 0;
    for col in 0..ncols {
        let Some(pivot_row) = (rank..a.len()).find(|&r| a[r][col] != 0) else {
            continue;
        };
        a.swap(rank, pivot_row);
        let inv = mod_pow(a[rank][col], m - 2, m);
        for r in rank + 1..a.len() {
            let f = a[r][col] * inv % m;
            if f == 0 {
                continue;
            }
            for c in col..ncols {
                a[r][c] = (a[r][c] + m - f * a[rank][c] % m) % m;
            }
        }
        rank += 1;
        if rank == a.len() {
            break;
        }
    }
    rank
}

fn mod_pow(mut base: u128, mut exp: u128, m: u128) -> u128 {
    let mut acc = 1;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % m;
        }
        base = base * base % m;
        exp >>= 1;
    }
    acc
}

/// Interval bounds of a rule on one feature: `lower <= x < upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub feature: usize,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// A path turned into a piecewise constant predictor with an else clause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub path: Path,
    /// Tightest bounds per constrained feature.
    pub hyperrectangle: Vec<Bound>,
    /// Cut value of each constraint, aligned with `path.constraints()`.
    pub cut_values: Vec<f64>,
    pub y_in: f64,
    pub y_out: f64,
    pub n_in: usize,
    pub n_out: usize,
}

impl Rule {
    /// Assembles a rule from explicit cut values, e.g. when reading a model.
    pub fn from_parts(path: Path, cut_values: Vec<f64>, y_in: f64, y_out: f64) -> Result<Self> {
        if cut_values.len() != path.len() {
            return Err(Error::InvalidPath(format!(
                "{} cut values for {} constraints",
                cut_values.len(),
                path.len()
            )));
        }
        let hyperrectangle = hyperrectangle(&path, &cut_values);
        Ok(Rule {
            path,
            hyperrectangle,
            cut_values,
            y_in,
            y_out,
            n_in: 0,
            n_out: 0,
        })
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        self.path
            .constraints()
            .iter()
            .zip(&self.cut_values)
            .all(|(c, &cut)| c.side.admits(x[c.feature], cut))
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            self.y_in
        } else {
            self.y_out
        }
    }
}

fn hyperrectangle(path: &Path, cut_values: &[f64]) -> Vec<Bound> {
    let mut bounds: Vec<Bound> = Vec::new();
    for (c, &cut) in path.constraints().iter().zip(cut_values) {
        if bounds.last().is_none_or(|b| b.feature != c.feature) {
            bounds.push(Bound {
                feature: c.feature,
                lower: None,
                upper: None,
            });
        }
        let bound = bounds.last_mut().unwrap();
        match c.side {
            Side::Left => bound.upper = Some(bound.upper.map_or(cut, |u: f64| u.min(cut))),
            Side::Right => bound.lower = Some(bound.lower.map_or(cut, |l: f64| l.max(cut))),
        }
    }
    bounds
}

/// Estimates the inside and outside means of `path` on `data`.
pub fn rule_from_path(path: &Path, grid: &QuantileGrid, data: &Dataset) -> Result<Rule> {
    let cut_values = path
        .constraints()
        .iter()
        .map(|c| {
            grid.cut_value(c.feature, c.rank).ok_or_else(|| {
                Error::InvalidPath(format!("no cut of rank {} on feature {}", c.rank, c.feature + 1))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rule = Rule::from_parts(path.clone(), cut_values, 0.0, 0.0)?;

    let (mut sum_in, mut sum_out) = (0.0, 0.0);
    let (mut n_in, mut n_out) = (0usize, 0usize);
    let features = data.features();
    for (i, &y) in data.response().iter().enumerate() {
        let row = features.row(i);
        let inside = rule
            .path
            .constraints()
            .iter()
            .zip(&rule.cut_values)
            .all(|(c, &cut)| c.side.admits(row[c.feature], cut));
        if inside {
            sum_in += y;
            n_in += 1;
        } else {
            sum_out += y;
            n_out += 1;
        }
    }
    if n_in == 0 || n_out == 0 {
        return Err(Error::DegenerateRule(format!(
            "{path} covers {n_in} of {} training points",
            data.n()
        )));
    }
    rule.y_in = sum_in / n_in as f64;
    rule.y_out = sum_out / n_out as f64;
    rule.n_in = n_in;
    rule.n_out = n_out;
    Ok(rule)
}

pub fn rule_eval(rule: &Rule, x: &[f64]) -> f64 {
    rule.eval(x)
}
