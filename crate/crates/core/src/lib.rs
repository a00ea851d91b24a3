//! Stable rule sets extracted from shallow random forests.
//!
//! Trees are grown with splits restricted to empirical quantiles, so the
//! same node can be recognized across trees by its sequence of
//! `(feature, rank, side)` constraints. Nodes that occur in more than a
//! fraction `p0` of the trees become rules, redundant rules are removed, and
//! the remaining ones are combined by a non-negative ridge regression.
//!
//! ```
//! use sirus::{fit_with_p0, Dataset, SirusParams};
//!
//! let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![(i % 20) as f64, (i / 20) as f64]).collect();
//! let y: Vec<f64> = rows.iter().map(|r| if r[0] < 10.0 { 1.0 } else { 5.0 }).collect();
//! let data = Dataset::from_rows(&rows, y).unwrap();
//!
//! let model = fit_with_p0(&data, 0.2, &SirusParams::default().with_trees(200)).unwrap();
//! assert!(model.num_rules() >= 1);
//! assert!((model.predict(&[3.0, 4.0]).unwrap() - 1.0).abs() < 0.5);
//! ```

pub mod aggregation;
pub mod data;
pub mod error;
pub mod forest;
pub mod metrics;
pub mod pipeline;
pub mod rules;
pub mod tuning;

pub use aggregation::{fit_nn_ridge, lambda_grid, predict, tune_lambda, RidgeFit, RuleDesignMatrix, SirusModel, WeightedRule};
pub use data::{kfold_split, load_dataset, read_dataset, Cut, Dataset, FeatureEncoding, FoldAssignment, InputColumn, QuantileGrid};
pub use error::{Error, Result};
pub use forest::{cart_variance_reduction, full_depth_forest_predict, grow_forest, ForestParams, QuantileForest, Sampling, TreeCount};
pub use metrics::{cv_evaluate, cv_forest_error, dice_sorensen, unexplained_variance, EvaluationReport, ResultRow, StabilityReport};
pub use pipeline::{fit, fit_with_p0, SirusParams, MAX_RULES};
pub use rules::{canonicalize_path, post_treat, rule_eval, rule_from_path, select_paths, Constraint, Path, PathFrequencyTable, Rule, Side};
pub use tuning::{
    adaptive_num_trees, binomial_cdf, pareto_distance, stopping_epsilon, tune_p0, AdaptiveSettings, ParetoPoint, TuneResult, TuneSettings,
};

/// Book chapters, compiled so that `cargo test --doc` runs their snippets.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/paths.md")]
    mod paths {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    mod aggregation {}
    #[doc = include_str!("../../../book/src/tuning.md")]
    mod tuning {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
