//! Choice of `p0` and of the number of trees.
//!
//! The number of trees is the smallest batch multiple at which the expected
//! disagreement between two independent forests, `epsilon`, averaged over a
//! grid of thresholds, drops below `alpha`. For a threshold `p0` and a path of
//! frequency `p`, `z = P(Bin(M, p) <= M p0)` is the probability that a second
//! forest of `M` trees misses the path; then
//!
//! ```text
//! epsilon = sum_P z_P (1 - z_P) / sum_P (1 - z_P)
//! ```
//!
//! `p0` is tuned by cross-validation as the point of the (error, stability)
//! curve closest to the ideal `(0, 0.9)`.

use std::f64::consts::PI;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::data::{kfold_split, Dataset, QuantileGrid};
use crate::error::{Error, Result};
use crate::forest::{count_paths, BinnedData, ForestParams};
use crate::metrics::{aggregate_repeat, FoldSummary};
use crate::pipeline::{derive_seed, evaluate_folds, full_data_forest, SirusParams};
use crate::rules::{PathFrequencyTable, PostTreatment};

// ---------------------------------------------------------------------------
// Binomial distribution
// ---------------------------------------------------------------------------

/// `ln(n!) - ln(sqrt(2 pi n) (n/e)^n)` for integers `n <= 15`.
#[allow(clippy::excessive_precision)]
const STIRLERR_TABLE: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_258_219_670_26,
    0.041_340_695_955_409_294_093_822_08,
    0.027_677_925_684_998_339_148_789_29,
    0.020_790_672_103_765_093_111_522_77,
    0.016_644_691_189_821_192_163_194_87,
    0.013_876_128_823_070_747_998_745_73,
    0.011_896_709_945_891_770_095_055_72,
    0.010_411_265_261_972_096_497_478_57,
    0.009_255_462_182_712_732_917_728_637,
    0.008_330_563_433_362_871_256_469_319,
    0.007_573_675_487_951_840_794_972_024,
    0.006_942_840_107_209_529_865_664_153,
    0.006_408_994_188_004_207_068_439_631,
    0.005_951_370_112_758_847_735_624_416,
    0.005_554_733_551_962_801_371_038_69,
];

/// Error of Stirling's approximation to `ln(n!)`.
fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        return STIRLERR_TABLE[n as usize];
    }
    let n = n as f64;
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / np) + np - x`, accurate when `x` is close to `np`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / f64::from(2 * j + 1);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// `P(X = x)` for `X ~ Bin(n, p)` by the saddle point expansion; relative
/// error near machine precision for any `n`.
pub fn binomial_pmf(x: u64, n: u64, p: f64) -> f64 {
    let q = 1.0 - p;
    if x > n {
        return 0.0;
    }
    if p == 0.0 {
        return if x == 0 { 1.0 } else { 0.0 };
    }
    if q == 0.0 {
        return if x == n { 1.0 } else { 0.0 };
    }
    let nf = n as f64;
    if x == 0 {
        if n == 0 {
            return 1.0;
        }
        let lc = if p < 0.1 { -bd0(nf, nf * q) - nf * p } else { nf * q.ln() };
        return lc.exp();
    }
    if x == n {
        let lc = if q < 0.1 { -bd0(nf, nf * p) - nf * q } else { nf * p.ln() };
        return lc.exp();
    }
    let xf = x as f64;
    let lc = stirlerr(n) - stirlerr(x) - stirlerr(n - x) - bd0(xf, nf * p) - bd0(nf - xf, nf * q);
    let lf = (2.0 * PI).ln() + xf.ln() + (-xf / nf).ln_1p();
    (lc - 0.5 * lf).exp()
}

/// `P(X <= k)` for `X ~ Bin(trials, prob)`.
///
/// The tail on the far side of the mean is summed term by term from `k`
/// outwards with the ratio recurrence, so the cost is `O(sqrt(trials))`.
pub fn binomial_cdf(k: u64, trials: u64, prob: f64) -> f64 {
    let p = prob.clamp(0.0, 1.0);
    if k >= trials || p == 0.0 {
        return 1.0;
    }
    if p == 1.0 {
        return 0.0;
    }
    let q = 1.0 - p;
    let n = trials as f64;
    if (k as f64) < n * p {
        // lower tail, terms shrink as j decreases
        let mut term = binomial_pmf(k, trials, p);
        let mut sum = term;
        let mut j = k;
        while j > 0 && term > 1e-17 * sum {
            term *= j as f64 / (n - j as f64 + 1.0) * (q / p);
            sum += term;
            j -= 1;
        }
        sum.min(1.0)
    } else {
        let mut term = binomial_pmf(k + 1, trials, p);
        let mut sum = term;
        let mut j = k + 1;
        while j < trials && term > 1e-17 * sum {
            term *= (n - j as f64) / (j as f64 + 1.0) * (p / q);
            sum += term;
            j += 1;
        }
        (1.0 - sum).max(0.0)
    }
}

// ---------------------------------------------------------------------------
// Stopping criterion
// ---------------------------------------------------------------------------

/// Largest count `c` with `c / trials <= p0`, matching the float comparison
/// used by path selection.
fn selection_boundary(trials: u64, p0: f64) -> u64 {
    let m = trials as f64;
    let mut k = (m * p0).floor().clamp(0.0, m) as u64;
    while k < trials && (k + 1) as f64 / m <= p0 {
        k += 1;
    }
    while k > 0 && k as f64 / m > p0 {
        k -= 1;
    }
    k
}

/// Expected proportion of selected paths that a second forest of the same
/// size would not select.
pub fn stopping_epsilon(table: &PathFrequencyTable, p0: f64) -> f64 {
    let m = table.num_trees();
    if m == 0 || table.is_empty() {
        return 0.0;
    }
    let k = selection_boundary(m, p0);
    // paths sharing a count share z
    let mut counts: Vec<u64> = table.iter().map(|(_, c)| c).collect();
    counts.sort_unstable();
    let (mut num, mut den) = (0.0, 0.0);
    for group in counts.chunk_by(|a, b| a == b) {
        let z = binomial_cdf(k, m, group[0] as f64 / m as f64);
        let mult = group.len() as f64;
        num += mult * z * (1.0 - z);
        den += mult * (1.0 - z);
    }
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Thresholds halfway between consecutive distinct path frequencies (and
/// below the smallest one) whose post-treated rule count lies in
/// `1..=max_rules`, decreasing.
///
/// Placing thresholds between observed frequencies, rather than on them,
/// keeps every path clearly on one side of the cut.
pub fn threshold_grid(table: &PathFrequencyTable, grid: &QuantileGrid, max_rules: usize) -> Vec<f64> {
    let m = table.num_trees() as f64;
    let ranked = table.ranked();
    let mut treatment = PostTreatment::new(grid);
    let mut thresholds = Vec::new();
    let mut i = 0;
    while i < ranked.len() {
        let count = ranked[i].1;
        while i < ranked.len() && ranked[i].1 == count {
            treatment.offer(ranked[i].0);
            i += 1;
        }
        let size = treatment.kept().len();
        if size > max_rules {
            break;
        }
        if size >= 1 {
            // below the last count, halfway to zero
            let next = ranked.get(i).map_or(0, |r| r.1);
            thresholds.push((count + next) as f64 / (2.0 * m));
        }
    }
    thresholds
}

/// Parameters of the adaptive tree count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSettings {
    pub alpha: f64,
    pub batch: usize,
    pub max_trees: usize,
    /// Thresholds giving more rules than this are left out of the grid.
    pub max_rules: usize,
}

impl Default for AdaptiveSettings {
    fn default() -> Self {
        AdaptiveSettings {
            alpha: 0.05,
            batch: 100,
            max_trees: 100_000,
            max_rules: crate::pipeline::MAX_RULES,
        }
    }
}

/// State of the stopping rule after a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeCountCriterion {
    pub alpha: f64,
    /// Mean of `epsilon` over `grid`.
    pub epsilon: f64,
    pub grid: Vec<f64>,
    pub num_trees: u64,
}

impl TreeCountCriterion {
    pub fn evaluate(table: &PathFrequencyTable, grid: &QuantileGrid, settings: &AdaptiveSettings) -> Self {
        let mut thresholds = threshold_grid(table, grid, settings.max_rules);
        if thresholds.is_empty() {
            // the top frequency alone exceeds the rule budget: use raw gaps
            let freqs = table.distinct_frequencies();
            thresholds = freqs
                .windows(2)
                .take(settings.max_rules)
                .map(|w| 0.5 * (w[0] + w[1]))
                .collect();
        }
        let epsilon = if thresholds.is_empty() {
            0.0
        } else {
            thresholds.iter().map(|&p0| stopping_epsilon(table, p0)).sum::<f64>() / thresholds.len() as f64
        };
        TreeCountCriterion {
            alpha: settings.alpha,
            epsilon,
            grid: thresholds,
            num_trees: table.num_trees(),
        }
    }

    pub fn is_met(&self) -> bool {
        self.epsilon < self.alpha
    }
}

/// Result of growing a forest until the stopping rule fires.
#[derive(Debug, Clone)]
pub struct AdaptiveOutcome {
    pub table: PathFrequencyTable,
    pub criterion: TreeCountCriterion,
    /// Whether `max_trees` was reached before the criterion was met.
    pub capped: bool,
}

/// Grows trees in batches until the stopping criterion is met.
pub fn adaptive_forest(
    binned: &BinnedData,
    grid: &QuantileGrid,
    params: &ForestParams,
    settings: &AdaptiveSettings,
) -> AdaptiveOutcome {
    let batch = settings.batch.max(1) as u64;
    let max_trees = settings.max_trees.max(1) as u64;
    let mut table = PathFrequencyTable::new();
    loop {
        let start = table.num_trees();
        let end = (start + batch).min(max_trees);
        table.merge(count_paths(binned, grid, params, start, end));
        let criterion = TreeCountCriterion::evaluate(&table, grid, settings);
        if criterion.is_met() {
            info!("{} trees, epsilon = {:.4}", end, criterion.epsilon);
            return AdaptiveOutcome {
                table,
                criterion,
                capped: false,
            };
        }
        if end >= max_trees {
            warn!(
                "tree cap {} reached with epsilon = {:.4} >= {}",
                max_trees, criterion.epsilon, settings.alpha
            );
            return AdaptiveOutcome {
                table,
                criterion,
                capped: true,
            };
        }
    }
}

/// Number of trees chosen by the stopping criterion.
pub fn adaptive_num_trees(data: &Dataset, grid: &QuantileGrid, params: &ForestParams, settings: &AdaptiveSettings) -> Result<u64> {
    params.validate(data.p())?;
    let binned = BinnedData::new(data, grid);
    Ok(adaptive_forest(&binned, grid, params, settings).table.num_trees())
}

// ---------------------------------------------------------------------------
// p0 tuning
// ---------------------------------------------------------------------------

/// Stability targeted by the tuning criterion.
pub const IDEAL_STABILITY: f64 = 0.9;

/// Cross-validated performance at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub p0: f64,
    pub size: f64,
    pub error: f64,
    pub stability: f64,
    pub distance: f64,
}

impl ParetoPoint {
    pub fn new(p0: f64, error: f64, stability: f64, size: f64) -> Self {
        ParetoPoint {
            p0,
            error,
            stability,
            size,
            distance: pareto_distance(error, stability),
        }
    }
}

/// Euclidean distance to the ideal point of zero error and 0.9 stability.
pub fn pareto_distance(error: f64, stability: f64) -> f64 {
    (error * error + (stability - IDEAL_STABILITY).powi(2)).sqrt()
}

/// Index of the closest point; ties go to the smaller model, then to the
/// larger threshold.
pub fn best_point(points: &[ParetoPoint]) -> Option<usize> {
    (0..points.len()).min_by(|&a, &b| {
        let (x, y) = (&points[a], &points[b]);
        x.distance
            .total_cmp(&y.distance)
            .then(x.size.total_cmp(&y.size))
            .then(y.p0.total_cmp(&x.p0))
    })
}

/// Cross-validation layout for tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneSettings {
    pub folds: usize,
    pub repeats: usize,
}

impl Default for TuneSettings {
    fn default() -> Self {
        TuneSettings { folds: 10, repeats: 10 }
    }
}

/// Outcome of [`tune_p0`].
#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    /// Median of the per-repeat selections.
    pub p0: f64,
    /// Points averaged over repeats, in grid order.
    pub points: Vec<ParetoPoint>,
    /// Points of each repeat.
    pub repeat_points: Vec<Vec<ParetoPoint>>,
    pub selections: Vec<f64>,
    pub grid: Vec<f64>,
    pub num_trees: u64,
    /// Forests grown for the cross-validation, one per fold and repeat.
    pub forests_grown: usize,
}

/// Median; an even count averages the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    })
}

/// Selects `p0` by repeated cross-validation over the threshold grid of a
/// forest grown on the full data. Each fold grows one forest, shared by every
/// threshold of the grid.
pub fn tune_p0(data: &Dataset, params: &SirusParams) -> Result<TuneResult> {
    params.validate(data.p())?;
    let settings = params.tuning;
    if settings.repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be positive".into()));
    }
    let (table, grid) = full_data_forest(data, params)?;
    let num_trees = table.num_trees();
    let thresholds = threshold_grid(&table, &grid, params.max_rules);
    if thresholds.is_empty() {
        return Err(Error::DegenerateP0Grid {
            max_rules: params.max_rules,
        });
    }

    let mut repeat_points = Vec::with_capacity(settings.repeats);
    let mut selections = Vec::with_capacity(settings.repeats);
    let mut forests_grown = 0;
    for repeat in 0..settings.repeats as u64 {
        let folds = kfold_split(data.n(), settings.folds, derive_seed(params.forest.seed, 0, repeat))?;
        let outcomes = evaluate_folds(data, &folds, &thresholds, params, num_trees, repeat)?;
        forests_grown += outcomes.len();
        let points: Vec<ParetoPoint> = thresholds
            .iter()
            .enumerate()
            .map(|(g, &p0)| {
                let per_fold: Vec<FoldSummary> = outcomes.iter().map(|fold| FoldSummary::from(&fold[g])).collect();
                let summary = aggregate_repeat(data, &per_fold)?;
                Ok(ParetoPoint::new(p0, summary.error, summary.stability.mean_dice, summary.size))
            })
            .collect::<Result<_>>()?;
        let best = best_point(&points).expect("non-empty grid");
        selections.push(points[best].p0);
        repeat_points.push(points);
    }

    let points = thresholds
        .iter()
        .enumerate()
        .map(|(g, &p0)| {
            let r = repeat_points.len() as f64;
            let mean = |f: fn(&ParetoPoint) -> f64| repeat_points.iter().map(|pts| f(&pts[g])).sum::<f64>() / r;
            ParetoPoint::new(p0, mean(|p| p.error), mean(|p| p.stability), mean(|p| p.size))
        })
        .collect();
    let p0 = median(&selections).expect("at least one repeat");
    Ok(TuneResult {
        p0,
        points,
        repeat_points,
        selections,
        grid: thresholds,
        num_trees,
        forests_grown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{canonicalize_path, Constraint, Side};

    #[test]
    fn cdf_half_of_ten() {
        assert!((binomial_cdf(5, 10, 0.5) - 0.623_046_875).abs() < 1e-15);
    }

    #[test]
    fn cdf_degenerate_probabilities() {
        assert_eq!(binomial_cdf(3, 10, 1.0), 0.0);
        assert_eq!(binomial_cdf(0, 10, 0.0), 1.0);
        assert_eq!(binomial_cdf(10, 10, 0.3), 1.0);
    }

    #[test]
    fn stirlerr_series_joins_table() {
        // the series at 16 should be close to the exact value
        let exact = 0.005_207_655_919_609_640_4;
        assert!((stirlerr(16) - exact).abs() < 2e-16);
    }

    #[test]
    fn boundary_matches_float_selection() {
        for m in 1..200u64 {
            for p0 in [0.0, 0.013, 0.1, 0.25, 1.0 / 3.0, 0.5, 0.7] {
                let k = selection_boundary(m, p0);
                assert!(k as f64 / m as f64 <= p0);
                assert!(k == m || (k + 1) as f64 / m as f64 > p0);
            }
        }
    }

    fn single_path_table(count: u64, m: u64) -> PathFrequencyTable {
        let path = canonicalize_path([Constraint::new(0, 1, Side::Left)]).unwrap();
        PathFrequencyTable::from_counts([(path, count)], m).unwrap()
    }

    #[test]
    fn epsilon_single_path() {
        let eps = stopping_epsilon(&single_path_table(5, 10), 0.5);
        assert!((eps - 0.623_046_875).abs() < 1e-15);
    }

    #[test]
    fn epsilon_certain_path() {
        assert_eq!(stopping_epsilon(&single_path_table(10, 10), 0.5), 0.0);
    }

    #[test]
    fn distance_and_ties() {
        assert!((pareto_distance(0.3, 0.5) - 0.5).abs() < 1e-15);
        let pts = [
            ParetoPoint::new(0.1, 0.3, 0.5, 4.0),
            ParetoPoint::new(0.2, 0.3, 0.5, 2.0),
            ParetoPoint::new(0.3, 0.3, 0.5, 2.0),
        ];
        assert_eq!(best_point(&pts), Some(2));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
