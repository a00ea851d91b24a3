//! Non-negative ridge aggregation of rules and the final rule model.
//!
//! Weights solve
//!
//! ```text
//! min_{beta >= 0, beta0}  (1/n) ||Y - beta0 1 - Gamma beta||^2 + lambda ||beta||^2
//! ```
//!
//! The intercept is unpenalized, so it is profiled out by centering. What
//! remains is a non-negative least squares problem on the augmented system
//! `[Gamma_c ; sqrt(n lambda) I] beta ~ [Y_c ; 0]`, solved exactly by an
//! active-set method in Gram form.

use serde::{Deserialize, Serialize};

use crate::data::{variance, Dataset, FeatureEncoding, FoldAssignment, QuantileGrid};
use crate::error::{Error, Result};
use crate::rules::{Constraint, Path, Rule, Side};

/// `Gamma[i][k] = g_k(X_i)` stored column by column, with the response.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleDesignMatrix {
    columns: Vec<Vec<f64>>,
    response: Vec<f64>,
}

impl RuleDesignMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>, response: Vec<f64>) -> Result<Self> {
        if columns.iter().any(|c| c.len() != response.len()) {
            return Err(Error::InvalidParameter("design column length differs from response".into()));
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response"));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rule design matrix"));
        }
        Ok(RuleDesignMatrix { columns, response })
    }

    /// Evaluates `rules` on every row of `data`.
    pub fn new(rules: &[Rule], data: &Dataset) -> Result<Self> {
        let features = data.features();
        let columns = rules
            .iter()
            .map(|rule| {
                features
                    .rows()
                    .into_iter()
                    .map(|row| rule.eval(row.as_slice().expect("standard layout")))
                    .collect()
            })
            .collect();
        Self::from_columns(columns, data.response().to_vec())
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn num_rules(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.columns[k]
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    /// Penalized objective `(1/n)||Y - b0 - Gamma b||^2 + lambda ||b||^2`.
    pub fn objective(&self, weights: &[f64], intercept: f64, lambda: f64) -> f64 {
        let n = self.n();
        let mut rss = 0.0;
        for i in 0..n {
            let fitted: f64 = intercept + self.columns.iter().zip(weights).map(|(c, w)| c[i] * w).sum::<f64>();
            rss += (self.response[i] - fitted).powi(2);
        }
        rss / n as f64 + lambda * weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Centered Gram matrix, cross products and means over `rows`.
    fn centered_moments(&self, rows: &[usize]) -> Moments {
        let c = self.num_rules();
        let n = rows.len() as f64;
        let means: Vec<f64> = self
            .columns
            .iter()
            .map(|col| rows.iter().map(|&i| col[i]).sum::<f64>() / n)
            .collect();
        let y_mean = rows.iter().map(|&i| self.response[i]).sum::<f64>() / n;
        let centered: Vec<Vec<f64>> = self
            .columns
            .iter()
            .zip(&means)
            .map(|(col, m)| rows.iter().map(|&i| col[i] - m).collect())
            .collect();
        let y_centered: Vec<f64> = rows.iter().map(|&i| self.response[i] - y_mean).collect();
        let mut gram = vec![vec![0.0; c]; c];
        for a in 0..c {
            for b in a..c {
                let v: f64 = centered[a].iter().zip(&centered[b]).map(|(x, y)| x * y).sum();
                gram[a][b] = v;
                gram[b][a] = v;
            }
        }
        let cross = centered
            .iter()
            .map(|col| col.iter().zip(&y_centered).map(|(x, y)| x * y).sum())
            .collect();
        Moments {
            gram,
            cross,
            means,
            y_mean,
            n,
        }
    }
}

struct Moments {
    gram: Vec<Vec<f64>>,
    cross: Vec<f64>,
    means: Vec<f64>,
    y_mean: f64,
    n: f64,
}

impl Moments {
    fn solve(&self, lambda: f64, warm: Option<&[f64]>) -> RidgeFit {
        let mut q = self.gram.clone();
        for (k, row) in q.iter_mut().enumerate() {
            row[k] += self.n * lambda;
        }
        let weights = nnls_gram(&q, &self.cross, warm);
        let intercept = self.y_mean - self.means.iter().zip(&weights).map(|(m, w)| m * w).sum::<f64>();
        RidgeFit { weights, intercept }
    }
}

/// Weights and intercept of a non-negative ridge fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

/// Exact minimizer of the non-negative ridge objective.
///
/// `lambda = 0` is accepted and gives plain non-negative least squares.
pub fn fit_nn_ridge(design: &RuleDesignMatrix, lambda: f64) -> Result<RidgeFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda}")));
    }
    if design.n() == 0 {
        return Err(Error::InvalidParameter("empty design".into()));
    }
    let rows: Vec<usize> = (0..design.n()).collect();
    Ok(design.centered_moments(&rows).solve(lambda, None))
}

/// Lawson-Hanson active set method for `min 1/2 x'Qx - b'x` subject to `x >= 0`.
///
/// `q` must be symmetric positive semi-definite. A warm start proposes an
/// initial passive set; it is dropped if its solution is infeasible.
pub fn nnls_gram(q: &[Vec<f64>], b: &[f64], warm: Option<&[f64]>) -> Vec<f64> {
    let c = b.len();
    let mut x = vec![0.0; c];
    if c == 0 {
        return x;
    }
    let scale = b
        .iter()
        .map(|v| v.abs())
        .chain((0..c).map(|k| q[k][k].abs()))
        .fold(1.0f64, f64::max);
    let tol = 1e-13 * scale;

    let mut passive = vec![false; c];
    if let Some(warm) = warm {
        let guess: Vec<bool> = warm.iter().map(|&v| v > 0.0).collect();
        if guess.iter().any(|&p| p) {
            let z = solve_passive(q, b, &guess);
            if guess.iter().zip(&z).all(|(&p, &v)| !p || v > 0.0) {
                x = z;
                passive = guess;
            }
        }
    }

    let max_iter = 10 * c + 50;
    let mut last_dropped: Option<usize> = None;
    for _ in 0..max_iter {
        let gradient = residual_gradient(q, b, &x);
        let entering = (0..c)
            .filter(|&k| !passive[k] && Some(k) != last_dropped)
            .max_by(|&i, &j| gradient[i].total_cmp(&gradient[j]));
        let Some(j) = entering.filter(|&j| gradient[j] > tol) else {
            break;
        };
        passive[j] = true;
        last_dropped = None;
        loop {
            let z = solve_passive(q, b, &passive);
            if (0..c).all(|k| !passive[k] || z[k] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for k in 0..c {
                if passive[k] && z[k] <= 0.0 {
                    let step = x[k] / (x[k] - z[k]);
                    if step < alpha {
                        alpha = step;
                    }
                }
            }
            for k in 0..c {
                if passive[k] {
                    x[k] += alpha * (z[k] - x[k]);
                }
            }
            for k in 0..c {
                if passive[k] && (x[k] <= 1e-15 * scale.sqrt() || z[k] <= 0.0 && x[k] <= 0.0) {
                    passive[k] = false;
                    x[k] = 0.0;
                    if k == j {
                        last_dropped = Some(k);
                    }
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    for v in &mut x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    x
}

/// `b - Qx`, the negative half-gradient.
fn residual_gradient(q: &[Vec<f64>], b: &[f64], x: &[f64]) -> Vec<f64> {
    q.iter()
        .zip(b)
        .map(|(row, bk)| bk - row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

/// Unconstrained minimizer over the passive coordinates, zero elsewhere.
fn solve_passive(q: &[Vec<f64>], b: &[f64], passive: &[bool]) -> Vec<f64> {
    let idx: Vec<usize> = (0..b.len()).filter(|&k| passive[k]).collect();
    let a: Vec<Vec<f64>> = idx.iter().map(|&r| idx.iter().map(|&s| q[r][s]).collect()).collect();
    let rhs: Vec<f64> = idx.iter().map(|&r| b[r]).collect();
    let sol = cholesky_solve(&a, &rhs).unwrap_or_else(|| pivoted_solve(a, rhs));
    let mut z = vec![0.0; b.len()];
    for (&k, v) in idx.iter().zip(sol) {
        z[k] = v;
    }
    z
}

fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let m = b.len();
    let mut l = vec![vec![0.0; m]; m];
    let max_diag = (0..m).map(|i| a[i][i]).fold(0.0f64, f64::max);
    for i in 0..m {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if s <= 1e-12 * max_diag {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; m];
    for i in 0..m {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        x[i] = (y[i] - (i + 1..m).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}

/// Gaussian elimination with partial pivoting; directions with a negligible
/// pivot are set to zero. Only reached for singular systems (`lambda = 0`).
fn pivoted_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let m = b.len();
    let max_abs = a.iter().flatten().map(|v| v.abs()).fold(0.0f64, f64::max);
    let mut pivot_cols = Vec::new();
    let mut row = 0;
    for col in 0..m {
        let Some(p) = (row..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())) else {
            break;
        };
        if a[p][col].abs() <= 1e-12 * max_abs {
            continue;
        }
        a.swap(row, p);
        b.swap(row, p);
        for r in row + 1..m {
            let f = a[r][col] / a[row][col];
            for c in col..m {
                a[r][c] -= f * a[row][c];
            }
            b[r] -= f * b[row];
        }
        pivot_cols.push(col);
        row += 1;
    }
    let mut x = vec![0.0; m];
    for (r, &col) in pivot_cols.iter().enumerate().rev() {
        let s: f64 = (col + 1..m).map(|c| a[r][c] * x[c]).sum();
        x[col] = (b[r] - s) / a[r][col];
    }
    x
}

/// 50 log-spaced values spanning `[1e-4, 1e2] * var_y`.
pub fn lambda_grid(var_y: f64) -> Vec<f64> {
    let scale = if var_y > 0.0 { var_y } else { 1.0 };
    let (lo, hi) = (1e-4f64.ln(), 1e2f64.ln());
    (0..50)
        .map(|i| scale * (lo + (hi - lo) * i as f64 / 49.0).exp())
        .collect()
}

/// Cross-validated mean squared error of each `lambda` in `grid`.
pub fn lambda_cv_errors(design: &RuleDesignMatrix, folds: &FoldAssignment, grid: &[f64]) -> Vec<f64> {
    let mut sse = vec![0.0; grid.len()];
    for fold in 0..folds.k {
        let (train, test) = folds.split(fold);
        if train.is_empty() || test.is_empty() {
            continue;
        }
        let moments = design.centered_moments(&train);
        // descending lambda: each solution warm-starts the next
        let mut warm: Option<Vec<f64>> = None;
        for (g, &lambda) in grid.iter().enumerate().rev() {
            let fit = moments.solve(lambda, warm.as_deref());
            for &i in &test {
                let pred = fit.intercept
                    + fit.weights.iter().enumerate().map(|(k, w)| w * design.columns[k][i]).sum::<f64>();
                sse[g] += (design.response[i] - pred).powi(2);
            }
            warm = Some(fit.weights);
        }
    }
    let n = design.n() as f64;
    sse.into_iter().map(|s| s / n).collect()
}

/// The `lambda` of `grid` with the smallest cross-validated error; ties go
/// to the larger value.
pub fn tune_lambda(rules: &[Rule], data: &Dataset, folds: &FoldAssignment, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    if grid.len() == 1 || rules.is_empty() {
        return Ok(grid.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    let design = RuleDesignMatrix::new(rules, data)?;
    Ok(select_lambda(&design, folds, grid))
}

pub(crate) fn select_lambda(design: &RuleDesignMatrix, folds: &FoldAssignment, grid: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| grid[i]).collect();
    let errors = lambda_cv_errors(design, folds, &sorted);
    let mut best = 0;
    for (i, &e) in errors.iter().enumerate() {
        if e <= errors[best] {
            best = i;
        }
    }
    sorted[best]
}

/// A selected rule with its aggregation weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedRule {
    pub rule: Rule,
    pub weight: f64,
    /// Occurrence frequency in the forest.
    pub frequency: f64,
}

/// `intercept + sum_k weight_k g_k(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SirusModel {
    pub intercept: f64,
    pub rules: Vec<WeightedRule>,
    pub lambda: f64,
    pub p0: f64,
    pub grid: QuantileGrid,
    pub feature_names: Vec<String>,
    pub response_name: String,
    pub response_mean: f64,
    pub encoding: FeatureEncoding,
    /// Rules kept by post-treatment before zero-weight rules were discarded.
    pub rules_before_discard: usize,
    pub num_trees: u64,
}

impl SirusModel {
    pub fn num_rules(&self) -> usize {
        self.rules.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.rules.iter().map(|r| r.weight).collect()
    }

    pub fn paths(&self) -> Vec<Path> {
        self.rules.iter().map(|r| r.rule.path.clone()).collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_names.len() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_names.len(),
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.intercept + self.rules.iter().map(|r| r.weight * r.rule.eval(x)).sum::<f64>()
    }

    /// Predictions for every row of `features`.
    pub fn predict_rows(&self, features: &ndarray::Array2<f64>) -> Result<Vec<f64>> {
        features
            .rows()
            .into_iter()
            .map(|row| self.predict(row.as_slice().expect("standard layout")))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.try_into()
    }
}

pub fn predict(model: &SirusModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

/// Persisted form of a [`SirusModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDocument {
    q: usize,
    p0: f64,
    lambda: f64,
    intercept: f64,
    rules: Vec<RuleDocument>,
    feature_names: Vec<String>,
    response_name: String,
    response_mean: f64,
    encoding: FeatureEncoding,
    grid: QuantileGrid,
    rules_before_discard: usize,
    num_trees: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RuleDocument {
    constraints: Vec<ConstraintDocument>,
    y_in: f64,
    y_out: f64,
    weight: f64,
    frequency: f64,
    /// Training rows inside and outside the rule.
    #[serde(default)]
    n_in: usize,
    #[serde(default)]
    n_out: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConstraintDocument {
    feature: usize,
    rank: usize,
    cut_value: f64,
    side: Side,
}

impl From<&SirusModel> for ModelDocument {
    fn from(model: &SirusModel) -> Self {
        let rules = model
            .rules
            .iter()
            .map(|r| RuleDocument {
                constraints: r
                    .rule
                    .path
                    .constraints()
                    .iter()
                    .zip(&r.rule.cut_values)
                    .map(|(c, &cut_value)| ConstraintDocument {
                        feature: c.feature,
                        rank: c.rank,
                        cut_value,
                        side: c.side,
                    })
                    .collect(),
                y_in: r.rule.y_in,
                y_out: r.rule.y_out,
                weight: r.weight,
                frequency: r.frequency,
                n_in: r.rule.n_in,
                n_out: r.rule.n_out,
            })
            .collect();
        ModelDocument {
            q: model.grid.q(),
            p0: model.p0,
            lambda: model.lambda,
            intercept: model.intercept,
            rules,
            feature_names: model.feature_names.clone(),
            response_name: model.response_name.clone(),
            response_mean: model.response_mean,
            encoding: model.encoding.clone(),
            grid: model.grid.clone(),
            rules_before_discard: model.rules_before_discard,
            num_trees: model.num_trees,
        }
    }
}

impl TryFrom<ModelDocument> for SirusModel {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        let p = doc.feature_names.len();
        let mut rules = Vec::with_capacity(doc.rules.len());
        for r in doc.rules {
            if r.constraints.iter().any(|c| c.feature >= p) {
                return Err(Error::InvalidPath("constraint on an unknown feature".into()));
            }
            // keep the stored order; paths are written canonical
            let path = crate::rules::canonicalize_path(
                r.constraints.iter().map(|c| Constraint::new(c.feature, c.rank, c.side)),
            )?;
            let mut pairs: Vec<(Constraint, f64)> = r
                .constraints
                .iter()
                .map(|c| (Constraint::new(c.feature, c.rank, c.side), c.cut_value))
                .collect();
            pairs.sort_by_key(|a| a.0);
            pairs.dedup_by(|a, b| a.0 == b.0);
            let cuts = pairs.into_iter().map(|(_, v)| v).collect();
            let mut rule = Rule::from_parts(path, cuts, r.y_in, r.y_out)?;
            rule.n_in = r.n_in;
            rule.n_out = r.n_out;
            if r.weight < 0.0 {
                return Err(Error::InvalidParameter("negative rule weight".into()));
            }
            rules.push(WeightedRule {
                rule,
                weight: r.weight,
                frequency: r.frequency,
            });
        }
        if doc.grid.q() != doc.q {
            return Err(Error::InvalidParameter("q differs from the stored grid".into()));
        }
        Ok(SirusModel {
            intercept: doc.intercept,
            rules,
            lambda: doc.lambda,
            p0: doc.p0,
            grid: doc.grid,
            feature_names: doc.feature_names,
            response_name: doc.response_name,
            response_mean: doc.response_mean,
            encoding: doc.encoding,
            rules_before_discard: doc.rules_before_discard,
            num_trees: doc.num_trees,
        })
    }
}

/// Variance of the response, used to scale the lambda grid.
pub fn response_variance(data: &Dataset) -> f64 {
    variance(data.response())
}
