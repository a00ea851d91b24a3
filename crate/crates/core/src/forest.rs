//! Randomized CART trees restricted to quantile cuts.
//!
//! Each tree draws its own bootstrap (or subsample) once, then at every node
//! draws `mtry` candidate features and picks the admissible quantile cut with
//! the largest variance reduction. Shallow trees feed the path frequency
//! table; full-depth trees give the predictive baseline [`QuantileForest`].

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, QuantileGrid};
use crate::error::{Error, Result};
use crate::rules::{canonicalize_path, Constraint, Path, PathFrequencyTable, Side};

/// Number of trees: fixed, or grown until the stability criterion fires.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeCount {
    Fixed(usize),
    Adaptive,
}

/// Per-tree resampling of the training rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    /// `n` draws with replacement.
    Bootstrap,
    /// `ceil(rate * n)` draws without replacement.
    Subsample { rate: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub num_trees: TreeCount,
    /// `usize::MAX` grows trees until nodes can no longer be split.
    pub max_depth: usize,
    /// Defaults to `max(floor(p / 3), 2)`, capped at `p`.
    pub mtry: Option<usize>,
    pub q: usize,
    pub sampling: Sampling,
    pub min_node_size: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            num_trees: TreeCount::Adaptive,
            max_depth: 2,
            mtry: None,
            q: 10,
            sampling: Sampling::Bootstrap,
            min_node_size: 1,
            seed: 1,
        }
    }
}

impl ForestParams {
    pub fn with_trees(mut self, num_trees: usize) -> Self {
        self.num_trees = TreeCount::Fixed(num_trees);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or((p / 3).max(2)).min(p)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if let Some(mtry) = self.mtry {
            if mtry == 0 || mtry > p {
                return Err(Error::InvalidParameter(format!("mtry = {mtry} with p = {p}")));
            }
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidParameter("max_depth must be positive".into()));
        }
        if self.q < 2 {
            return Err(Error::InvalidParameter(format!("q must be at least 2, got {}", self.q)));
        }
        if self.min_node_size == 0 {
            return Err(Error::InvalidParameter("min_node_size must be positive".into()));
        }
        if let TreeCount::Fixed(0) = self.num_trees {
            return Err(Error::InvalidParameter("num_trees must be positive".into()));
        }
        if let Sampling::Subsample { rate } = self.sampling {
            if !(rate > 0.0 && rate <= 1.0) {
                return Err(Error::InvalidParameter(format!("subsample rate {rate} not in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// `Var(node) - n_L/n Var(L) - n_R/n Var(R)` with population variances.
pub fn cart_variance_reduction(responses: &[f64], left_mask: &[bool]) -> Result<f64> {
    if responses.len() != left_mask.len() {
        return Err(Error::InvalidSplit("mask length differs from node size"));
    }
    let n = responses.len() as f64;
    let (mut n_left, mut s_left, mut s_all) = (0.0, 0.0, 0.0);
    for (&y, &left) in responses.iter().zip(left_mask) {
        s_all += y;
        if left {
            n_left += 1.0;
            s_left += y;
        }
    }
    if n_left == 0.0 || n_left == n {
        return Err(Error::InvalidSplit("one side of the split is empty"));
    }
    Ok(split_gain(s_left, n_left, s_all, n))
}

/// Variance reduction from sufficient statistics.
#[inline]
fn split_gain(s_left: f64, n_left: f64, s_all: f64, n: f64) -> f64 {
    let s_right = s_all - s_left;
    let n_right = n - n_left;
    let gain = (s_left * s_left / n_left + s_right * s_right / n_right - s_all * s_all / n) / n;
    gain.max(0.0)
}

/// Training features mapped to quantile bins: `x < cuts[k]` iff `bin <= k`.
#[derive(Debug, Clone)]
pub struct BinnedData {
    /// Column-major bins, `bins[j][i]`.
    bins: Vec<Vec<u32>>,
    response: Vec<f64>,
}

impl BinnedData {
    pub fn new(data: &Dataset, grid: &QuantileGrid) -> Self {
        let bins = (0..data.p())
            .map(|j| data.column(j).iter().map(|&x| grid.bin(j, x) as u32).collect())
            .collect();
        BinnedData {
            bins,
            response: data.response().to_vec(),
        }
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn p(&self) -> usize {
        self.bins.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub feature: usize,
    /// Position of the cut in the feature's grid list.
    pub position: usize,
    pub rank: usize,
    pub cut: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub depth: usize,
    /// Mean response of the (resampled) training rows in the node.
    pub value: f64,
    pub size: usize,
    pub split: Option<Split>,
}

/// One grown tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

/// Paths of every node of one tree except the root.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TreePaths(pub Vec<Path>);

impl Tree {
    pub fn paths(&self) -> TreePaths {
        let mut out = Vec::new();
        let mut stack: Vec<(usize, Vec<Constraint>)> = vec![(0, Vec::new())];
        while let Some((id, prefix)) = stack.pop() {
            if let Some(split) = &self.nodes[id].split {
                for (child, side) in [(split.left, Side::Left), (split.right, Side::Right)] {
                    let mut raw = prefix.clone();
                    raw.push(Constraint::new(split.feature, split.rank, side));
                    out.push(canonicalize_path(raw.iter().copied()).expect("tree paths are non-empty regions"));
                    stack.push((child, raw));
                }
            }
        }
        TreePaths(out)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        while let Some(split) = &self.nodes[id].split {
            id = if x[split.feature] < split.cut { split.left } else { split.right };
        }
        self.nodes[id].value
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}

/// RNG stream of tree `index`: a pure function of `(seed, index)`.
pub fn tree_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw_sample(n: usize, sampling: Sampling, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match sampling {
        Sampling::Bootstrap => (0..n).map(|_| rng.random_range(0..n)).collect(),
        Sampling::Subsample { rate } => {
            let m = ((rate * n as f64).ceil() as usize).clamp(1, n);
            let mut rows = index::sample(rng, n, m).into_vec();
            rows.sort_unstable();
            rows
        }
    }
}

/// Grows one tree on a fresh resample of `binned`.
pub fn grow_tree(binned: &BinnedData, grid: &QuantileGrid, params: &ForestParams, rng: &mut ChaCha8Rng) -> Tree {
    let sample = draw_sample(binned.n(), params.sampling, rng);
    let mtry = params.resolved_mtry(binned.p());
    let mut tree = Tree { nodes: Vec::new() };
    let mut stack = vec![(push_node(&mut tree, binned, &sample, 0), sample)];
    while let Some((id, rows)) = stack.pop() {
        let depth = tree.nodes[id].depth;
        if depth >= params.max_depth || rows.len() < 2 * params.min_node_size || is_pure(binned, &rows) {
            continue;
        }
        let Some(best) = best_split(binned, grid, &rows, mtry, rng) else {
            continue;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| binned.bins[best.feature][i] as usize <= best.position);
        let left = push_node(&mut tree, binned, &left_rows, depth + 1);
        let right = push_node(&mut tree, binned, &right_rows, depth + 1);
        tree.nodes[id].split = Some(Split {
            feature: best.feature,
            position: best.position,
            rank: grid.cuts(best.feature)[best.position].rank,
            cut: grid.cuts(best.feature)[best.position].value,
            left,
            right,
        });
        // right first so the left subtree is expanded first
        stack.push((right, right_rows));
        stack.push((left, left_rows));
    }
    tree
}

fn push_node(tree: &mut Tree, binned: &BinnedData, rows: &[usize], depth: usize) -> usize {
    let sum: f64 = rows.iter().map(|&i| binned.response[i]).sum();
    tree.nodes.push(Node {
        depth,
        value: sum / rows.len() as f64,
        size: rows.len(),
        split: None,
    });
    tree.nodes.len() - 1
}

fn is_pure(binned: &BinnedData, rows: &[usize]) -> bool {
    let first = binned.response[rows[0]];
    rows.iter().all(|&i| binned.response[i] == first)
}

struct Candidate {
    feature: usize,
    position: usize,
    gain: f64,
}

/// Best admissible cut among `mtry` random features; ties go to the lowest
/// feature index, then the lowest rank.
fn best_split(
    binned: &BinnedData,
    grid: &QuantileGrid,
    rows: &[usize],
    mtry: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Candidate> {
    let mut features = index::sample(rng, binned.p(), mtry).into_vec();
    features.sort_unstable();

    let n = rows.len() as f64;
    let s_all: f64 = rows.iter().map(|&i| binned.response[i]).sum();
    let mut best: Option<Candidate> = None;
    let mut counts = Vec::new();
    let mut sums = Vec::new();
    for feature in features {
        let num_cuts = grid.cuts(feature).len();
        if num_cuts == 0 {
            continue;
        }
        counts.clear();
        counts.resize(num_cuts + 1, 0usize);
        sums.clear();
        sums.resize(num_cuts + 1, 0.0);
        let column = &binned.bins[feature];
        for &i in rows {
            let b = column[i] as usize;
            counts[b] += 1;
            sums[b] += binned.response[i];
        }
        let (mut n_left, mut s_left) = (0usize, 0.0);
        for position in 0..num_cuts {
            n_left += counts[position];
            s_left += sums[position];
            if n_left == 0 {
                continue;
            }
            if n_left == rows.len() {
                break;
            }
            let gain = split_gain(s_left, n_left as f64, s_all, n);
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Candidate { feature, position, gain });
            }
        }
    }
    best
}

/// Paths of one tree grown with the stream of tree `index`.
pub fn grow_tree_paths(binned: &BinnedData, grid: &QuantileGrid, params: &ForestParams, index: u64) -> TreePaths {
    let mut rng = tree_rng(params.seed, index);
    grow_tree(binned, grid, params, &mut rng).paths()
}

/// Counts the paths of trees `start..end`.
pub(crate) fn count_paths(
    binned: &BinnedData,
    grid: &QuantileGrid,
    params: &ForestParams,
    start: u64,
    end: u64,
) -> PathFrequencyTable {
    (start..end)
        .into_par_iter()
        .fold(PathFrequencyTable::new, |mut table, index| {
            let paths = grow_tree_paths(binned, grid, params, index);
            table.add_tree(&paths.0);
            table
        })
        .reduce(PathFrequencyTable::new, |mut a, b| {
            a.merge(b);
            a
        })
}

/// Grows the forest and counts its paths.
///
/// With [`TreeCount::Adaptive`] trees are added in batches until the
/// stability criterion of [`crate::tuning::adaptive_forest`] is met.
pub fn grow_forest(data: &Dataset, grid: &QuantileGrid, params: &ForestParams) -> Result<PathFrequencyTable> {
    params.validate(data.p())?;
    let binned = BinnedData::new(data, grid);
    match params.num_trees {
        TreeCount::Fixed(m) => Ok(count_paths(&binned, grid, params, 0, m as u64)),
        TreeCount::Adaptive => Ok(crate::tuning::adaptive_forest(
            &binned,
            grid,
            params,
            &crate::tuning::AdaptiveSettings::default(),
        )
        .table),
    }
}

/// Forest of full-depth quantile-restricted trees, used as a baseline.
#[derive(Debug, Clone)]
pub struct QuantileForest {
    trees: Vec<Tree>,
}

impl QuantileForest {
    /// Default number of trees when `params.num_trees` is adaptive.
    pub const DEFAULT_TREES: usize = 500;

    pub fn fit(data: &Dataset, grid: &QuantileGrid, params: &ForestParams) -> Result<Self> {
        params.validate(data.p())?;
        let binned = BinnedData::new(data, grid);
        let m = match params.num_trees {
            TreeCount::Fixed(m) => m,
            TreeCount::Adaptive => Self::DEFAULT_TREES,
        };
        let trees = (0..m as u64)
            .into_par_iter()
            .map(|index| grow_tree(&binned, grid, params, &mut tree_rng(params.seed, index)))
            .collect();
        Ok(QuantileForest { trees })
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Mean over trees of the leaf mean reached by `x`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Full-depth baseline parameters: unlimited depth, 500 trees, and the usual
/// regression leaf size of 5.
pub fn baseline_params(seed: u64) -> ForestParams {
    ForestParams {
        num_trees: TreeCount::Fixed(QuantileForest::DEFAULT_TREES),
        max_depth: usize::MAX,
        min_node_size: 5,
        seed,
        ..ForestParams::default()
    }
}

/// Trains a [`QuantileForest`] and predicts `queries` (rows of `p` features).
pub fn full_depth_forest_predict(
    data: &Dataset,
    grid: &QuantileGrid,
    params: &ForestParams,
    queries: &ndarray::Array2<f64>,
) -> Result<Vec<f64>> {
    if queries.ncols() != data.p() {
        return Err(Error::DimensionMismatch {
            expected: data.p(),
            got: queries.ncols(),
        });
    }
    let forest = QuantileForest::fit(data, grid, params)?;
    Ok(queries
        .rows()
        .into_iter()
        .map(|row| forest.predict(row.as_slice().expect("standard layout")))
        .collect())
}
