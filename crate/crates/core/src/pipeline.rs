//! End-to-end fitting: forest, selection, post-treatment, aggregation.

use log::{debug, warn};
use rayon::prelude::*;

use crate::aggregation::{lambda_grid, select_lambda, RuleDesignMatrix, SirusModel, WeightedRule};
use crate::data::{kfold_split, variance, Dataset, FoldAssignment, QuantileGrid};
use crate::error::{Error, Result};
use crate::forest::{count_paths, BinnedData, ForestParams, TreeCount};
use crate::rules::{rule_from_path, Path, PathFrequencyTable, PostTreatment, Rule};
use crate::tuning::{adaptive_forest, tune_p0, AdaptiveSettings, TuneSettings};

/// Largest number of rules a model may hold.
pub const MAX_RULES: usize = 25;

/// Everything needed to fit a model.
#[derive(Debug, Clone, PartialEq)]
pub struct SirusParams {
    pub forest: ForestParams,
    /// `None` selects p0 by cross-validated Pareto tuning.
    pub p0: Option<f64>,
    pub max_rules: usize,
    /// Folds of the inner cross-validation choosing lambda.
    pub lambda_folds: usize,
    pub tuning: TuneSettings,
    pub adaptive: AdaptiveSettings,
}

impl Default for SirusParams {
    fn default() -> Self {
        SirusParams {
            forest: ForestParams::default(),
            p0: None,
            max_rules: MAX_RULES,
            lambda_folds: 10,
            tuning: TuneSettings::default(),
            adaptive: AdaptiveSettings::default(),
        }
    }
}

impl SirusParams {
    pub fn with_p0(mut self, p0: f64) -> Self {
        self.p0 = Some(p0);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.forest.seed = seed;
        self
    }

    pub fn with_trees(mut self, num_trees: usize) -> Self {
        self.forest.num_trees = TreeCount::Fixed(num_trees);
        self
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        self.forest.validate(p)?;
        if let Some(p0) = self.p0 {
            if !(0.0..1.0).contains(&p0) {
                return Err(Error::InvalidParameter(format!("p0 = {p0} must lie in [0, 1)")));
            }
        }
        if self.max_rules == 0 {
            return Err(Error::InvalidParameter("max_rules must be positive".into()));
        }
        if self.lambda_folds < 2 {
            return Err(Error::InvalidParameter("lambda_folds must be at least 2".into()));
        }
        Ok(())
    }
}

/// Mixes `seed` with two stream indices (splitmix64 finalizer).
pub(crate) fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counts the paths of a forest, resolving an adaptive tree count.
pub fn forest_table(data: &Dataset, grid: &QuantileGrid, forest: &ForestParams, adaptive: &AdaptiveSettings) -> Result<PathFrequencyTable> {
    forest.validate(data.p())?;
    let binned = BinnedData::new(data, grid);
    Ok(match forest.num_trees {
        TreeCount::Fixed(m) => count_paths(&binned, grid, forest, 0, m as u64),
        TreeCount::Adaptive => adaptive_forest(&binned, grid, forest, adaptive).table,
    })
}

/// Rules surviving selection at `min_p0` and post-treatment, most frequent
/// first. Because post-treatment is prefix-stable, the rule set for any
/// larger threshold is a prefix of this list.
#[derive(Debug, Clone)]
pub(crate) struct Candidates {
    rules: Vec<(Rule, u64)>,
    num_trees: u64,
    pub degenerate: usize,
}

impl Candidates {
    pub fn new(table: &PathFrequencyTable, grid: &QuantileGrid, data: &Dataset, min_p0: f64) -> Self {
        let m = table.num_trees();
        let mut treatment = PostTreatment::new(grid);
        let mut rules = Vec::new();
        let mut degenerate = 0;
        for (path, count) in table.ranked() {
            if count as f64 / m as f64 <= min_p0 {
                break;
            }
            // empty sides on the training data carry no information
            let rule = match rule_from_path(path, grid, data) {
                Ok(rule) => rule,
                Err(Error::DegenerateRule(_)) => {
                    degenerate += 1;
                    continue;
                }
                Err(e) => unreachable!("path built from this grid: {e}"),
            };
            if treatment.offer(path) {
                rules.push((rule, count));
            }
        }
        Candidates {
            rules,
            num_trees: m,
            degenerate,
        }
    }

    /// Rules with frequency above `p0`.
    pub fn at(&self, p0: f64) -> &[(Rule, u64)] {
        let m = self.num_trees as f64;
        let end = self.rules.partition_point(|(_, c)| *c as f64 / m > p0);
        &self.rules[..end]
    }
}

/// Fits weights for `rules` and drops those with a null weight.
pub(crate) fn aggregate(
    rules: &[(Rule, u64)],
    data: &Dataset,
    grid: &QuantileGrid,
    p0: f64,
    num_trees: u64,
    params: &SirusParams,
    seed: u64,
) -> Result<SirusModel> {
    let mut rules = rules.to_vec();
    if rules.len() > params.max_rules {
        debug!("truncating {} rules to {}", rules.len(), params.max_rules);
        rules.truncate(params.max_rules);
    }
    let grid_lambda = lambda_grid(variance(data.response()));
    let columns: Vec<Rule> = rules.iter().map(|(r, _)| r.clone()).collect();
    let design = RuleDesignMatrix::new(&columns, data)?;
    let lambda = if rules.is_empty() || data.n() < params.lambda_folds {
        grid_lambda[grid_lambda.len() - 1]
    } else {
        let folds = kfold_split(data.n(), params.lambda_folds, seed)?;
        select_lambda(&design, &folds, &grid_lambda)
    };
    let fit = crate::aggregation::fit_nn_ridge(&design, lambda)?;
    let before = rules.len();
    let weighted = rules
        .into_iter()
        .zip(fit.weights)
        .filter(|(_, w)| *w > 0.0)
        .map(|((rule, count), weight)| WeightedRule {
            rule,
            weight,
            frequency: count as f64 / num_trees as f64,
        })
        .collect();
    Ok(SirusModel {
        intercept: fit.intercept,
        rules: weighted,
        lambda,
        p0,
        grid: grid.clone(),
        feature_names: data.feature_names().to_vec(),
        response_name: data.response_name().to_string(),
        response_mean: data.response_mean(),
        encoding: data.encoding().clone(),
        rules_before_discard: before,
        num_trees,
    })
}

/// Fits a model at a fixed `p0`.
pub fn fit_with_p0(data: &Dataset, p0: f64, params: &SirusParams) -> Result<SirusModel> {
    let params = SirusParams {
        p0: Some(p0),
        ..params.clone()
    };
    params.validate(data.p())?;
    let grid = QuantileGrid::compute(data, params.forest.q)?;
    let table = forest_table(data, &grid, &params.forest, &params.adaptive)?;
    let candidates = Candidates::new(&table, &grid, data, p0);
    if candidates.degenerate > 0 {
        warn!("{} selected paths are empty on one side and were dropped", candidates.degenerate);
    }
    aggregate(
        candidates.at(p0),
        data,
        &grid,
        p0,
        table.num_trees(),
        &params,
        derive_seed(params.forest.seed, 3, 0),
    )
}

/// Fits a model, tuning `p0` first when it is not given.
pub fn fit(data: &Dataset, params: &SirusParams) -> Result<SirusModel> {
    let p0 = match params.p0 {
        Some(p0) => p0,
        None => tune_p0(data, params)?.p0,
    };
    fit_with_p0(data, p0, params)
}

/// Held-out results of one fold for one `p0`.
#[derive(Debug, Clone)]
pub(crate) struct FoldOutcome {
    pub paths: Vec<Path>,
    pub test: Vec<usize>,
    pub predictions: Vec<f64>,
    pub size_before_discard: usize,
}

/// Fits every fold once and evaluates all `p0s` on it. Returns one vector
/// per fold, indexed by position in `p0s`.
pub(crate) fn evaluate_folds(
    data: &Dataset,
    folds: &FoldAssignment,
    p0s: &[f64],
    params: &SirusParams,
    num_trees: u64,
    repeat: u64,
) -> Result<Vec<Vec<FoldOutcome>>> {
    let min_p0 = p0s.iter().copied().fold(f64::INFINITY, f64::min);
    (0..folds.k)
        .into_par_iter()
        .map(|fold| {
            let (train_idx, test_idx) = folds.split(fold);
            let train = data.subset(&train_idx)?;
            let grid = QuantileGrid::compute(&train, params.forest.q)?;
            let forest = ForestParams {
                num_trees: TreeCount::Fixed(num_trees as usize),
                seed: derive_seed(params.forest.seed, 1 + repeat, fold as u64),
                ..params.forest.clone()
            };
            let table = forest_table(&train, &grid, &forest, &params.adaptive)?;
            let candidates = Candidates::new(&table, &grid, &train, min_p0);
            p0s.iter()
                .map(|&p0| {
                    let model = aggregate(
                        candidates.at(p0),
                        &train,
                        &grid,
                        p0,
                        num_trees,
                        params,
                        derive_seed(forest.seed, 3, 0),
                    )?;
                    let predictions = test_idx
                        .iter()
                        .map(|&i| model.predict_unchecked(data.row(i).as_slice().expect("standard layout")))
                        .collect();
                    Ok(FoldOutcome {
                        paths: model.paths(),
                        test: test_idx.clone(),
                        predictions,
                        size_before_discard: model.rules_before_discard,
                    })
                })
                .collect()
        })
        .collect()
}

/// Resolves the tree count used for every fold: the adaptive count on the
/// full data, or the fixed count.
pub(crate) fn full_data_forest(data: &Dataset, params: &SirusParams) -> Result<(PathFrequencyTable, QuantileGrid)> {
    let grid = QuantileGrid::compute(data, params.forest.q)?;
    let table = forest_table(data, &grid, &params.forest, &params.adaptive)?;
    Ok((table, grid))
}
