//! Predictivity, stability and size of fitted rule sets.

use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{kfold_split, variance, Dataset, QuantileGrid};
use crate::error::{Error, Result};
use crate::forest::{ForestParams, QuantileForest, TreeCount};
use crate::pipeline::{derive_seed, evaluate_folds, full_data_forest, FoldOutcome, SirusParams};
use crate::rules::Path;

/// `2 |a ∩ b| / (|a| + |b|)` with paths matched by rank, not cut value.
///
/// Two empty sets are identical (1); one empty set shares nothing (0).
pub fn dice_sorensen(a: &[Path], b: &[Path]) -> f64 {
    let a: HashSet<&Path> = a.iter().collect();
    let b: HashSet<&Path> = b.iter().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let shared = a.intersection(&b).count();
    2.0 * shared as f64 / (a.len() + b.len()) as f64
}

/// Mean squared error over the variance of `truth`.
pub fn unexplained_variance(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    if truth.len() < 2 {
        return Err(Error::InvalidParameter("need at least two points".into()));
    }
    let var = variance(truth);
    if var <= 0.0 {
        return Err(Error::ZeroVariance("truth"));
    }
    let mse = predictions.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / truth.len() as f64;
    Ok(mse / var)
}

/// Pairwise Dice index between the rule sets of the folds of one
/// cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub mean_dice: f64,
    pub pairwise: Vec<f64>,
    pub rule_sets: Vec<Vec<Path>>,
}

impl StabilityReport {
    pub fn new(rule_sets: Vec<Vec<Path>>) -> Self {
        let mut pairwise = Vec::new();
        for i in 0..rule_sets.len() {
            for j in i + 1..rule_sets.len() {
                pairwise.push(dice_sorensen(&rule_sets[i], &rule_sets[j]));
            }
        }
        let mean_dice = if pairwise.is_empty() {
            1.0
        } else {
            pairwise.iter().sum::<f64>() / pairwise.len() as f64
        };
        StabilityReport {
            mean_dice,
            pairwise,
            rule_sets,
        }
    }
}

/// Held-out results of one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSummary {
    pub paths: Vec<Path>,
    pub test: Vec<usize>,
    pub predictions: Vec<f64>,
    pub size_before_discard: usize,
}

impl From<&FoldOutcome> for FoldSummary {
    fn from(o: &FoldOutcome) -> Self {
        FoldSummary {
            paths: o.paths.clone(),
            test: o.test.clone(),
            predictions: o.predictions.clone(),
            size_before_discard: o.size_before_discard,
        }
    }
}

/// Metrics of one cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatSummary {
    /// Pooled over all held-out points.
    pub error: f64,
    /// Mean of the per-fold errors.
    pub macro_error: f64,
    pub stability: StabilityReport,
    pub size: f64,
    pub size_before_discard: f64,
}

pub fn aggregate_repeat(data: &Dataset, folds: &[FoldSummary]) -> Result<RepeatSummary> {
    let mut predictions = Vec::with_capacity(data.n());
    let mut truth = Vec::with_capacity(data.n());
    let mut macro_sum = 0.0;
    let mut macro_count = 0;
    for fold in folds {
        let fold_truth: Vec<f64> = fold.test.iter().map(|&i| data.response()[i]).collect();
        if let Ok(e) = unexplained_variance(&fold.predictions, &fold_truth) {
            macro_sum += e;
            macro_count += 1;
        }
        predictions.extend_from_slice(&fold.predictions);
        truth.extend(fold_truth);
    }
    let k = folds.len() as f64;
    Ok(RepeatSummary {
        error: unexplained_variance(&predictions, &truth)?,
        macro_error: if macro_count > 0 { macro_sum / macro_count as f64 } else { f64::NAN },
        stability: StabilityReport::new(folds.iter().map(|f| f.paths.clone()).collect()),
        size: folds.iter().map(|f| f.paths.len() as f64).sum::<f64>() / k,
        size_before_discard: folds.iter().map(|f| f.size_before_discard as f64).sum::<f64>() / k,
    })
}

/// Repeated cross-validated performance of the full method at one `p0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub p0: f64,
    /// Pooled unexplained variance, averaged over repeats.
    pub unexplained_variance: f64,
    pub macro_unexplained_variance: f64,
    /// Mean rule count after dropping null weights.
    pub model_size: f64,
    pub size_before_discard: f64,
    pub stability: f64,
    pub num_trees: u64,
    pub folds: usize,
    pub repeats: usize,
    pub runtime_secs: f64,
    pub stability_reports: Vec<StabilityReport>,
}

/// Flat row for result tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub p0: f64,
    pub size: f64,
    pub stability: f64,
    pub error: f64,
    #[serde(rename = "M")]
    pub num_trees: u64,
    pub seed: u64,
}

impl EvaluationReport {
    pub fn row(&self, dataset: &str, seed: u64) -> ResultRow {
        ResultRow {
            dataset: dataset.to_string(),
            p0: self.p0,
            size: self.model_size,
            stability: self.stability,
            error: self.unexplained_variance,
            num_trees: self.num_trees,
            seed,
        }
    }
}

/// `repeats` independent `k`-fold cross-validations of the full method. The
/// quantile grid and forest of each fold use its training part only.
pub fn cv_evaluate(data: &Dataset, p0: f64, params: &SirusParams, k: usize, repeats: usize) -> Result<EvaluationReport> {
    let start = Instant::now();
    let params = SirusParams {
        p0: Some(p0),
        ..params.clone()
    };
    params.validate(data.p())?;
    let num_trees = match params.forest.num_trees {
        TreeCount::Fixed(m) => m as u64,
        TreeCount::Adaptive => full_data_forest(data, &params)?.0.num_trees(),
    };
    cv_evaluate_with_trees(data, &params, k, repeats, num_trees, start)
}

pub(crate) fn cv_evaluate_with_trees(
    data: &Dataset,
    params: &SirusParams,
    k: usize,
    repeats: usize,
    num_trees: u64,
    start: Instant,
) -> Result<EvaluationReport> {
    let p0 = params.p0.expect("threshold set");
    if repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be positive".into()));
    }
    let mut summaries = Vec::with_capacity(repeats);
    for repeat in 0..repeats as u64 {
        let folds = kfold_split(data.n(), k, derive_seed(params.forest.seed, 0, repeat))?;
        let outcomes = evaluate_folds(data, &folds, &[p0], params, num_trees, repeat)?;
        let per_fold: Vec<FoldSummary> = outcomes.iter().map(|o| FoldSummary::from(&o[0])).collect();
        summaries.push(aggregate_repeat(data, &per_fold)?);
    }
    let r = repeats as f64;
    let mean = |f: &dyn Fn(&RepeatSummary) -> f64| summaries.iter().map(f).sum::<f64>() / r;
    Ok(EvaluationReport {
        p0,
        unexplained_variance: mean(&|s| s.error),
        macro_unexplained_variance: mean(&|s| s.macro_error),
        model_size: mean(&|s| s.size),
        size_before_discard: mean(&|s| s.size_before_discard),
        stability: mean(&|s| s.stability.mean_dice),
        num_trees,
        folds: k,
        repeats,
        runtime_secs: start.elapsed().as_secs_f64(),
        stability_reports: summaries.into_iter().map(|s| s.stability).collect(),
    })
}

/// Cross-validated unexplained variance of a [`QuantileForest`], pooled over
/// folds and averaged over repeats.
pub fn cv_forest_error(data: &Dataset, params: &ForestParams, k: usize, repeats: usize) -> Result<f64> {
    params.validate(data.p())?;
    if repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be positive".into()));
    }
    let mut total = 0.0;
    for repeat in 0..repeats as u64 {
        let folds = kfold_split(data.n(), k, derive_seed(params.seed, 0, repeat))?;
        let mut predictions = Vec::with_capacity(data.n());
        let mut truth = Vec::with_capacity(data.n());
        for fold in 0..k {
            let (train_idx, test_idx) = folds.split(fold);
            let train = data.subset(&train_idx)?;
            let grid = QuantileGrid::compute(&train, params.q)?;
            let fold_params = ForestParams {
                seed: derive_seed(params.seed, 1 + repeat, fold as u64),
                ..params.clone()
            };
            let forest = QuantileForest::fit(&train, &grid, &fold_params)?;
            for &i in &test_idx {
                predictions.push(forest.predict(data.row(i).as_slice().expect("standard layout")));
                truth.push(data.response()[i]);
            }
        }
        total += unexplained_variance(&predictions, &truth)?;
    }
    Ok(total / repeats as f64)
}
