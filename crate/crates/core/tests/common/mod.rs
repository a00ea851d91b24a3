//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::HashSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sirus::forest::grow_forest;
use sirus::{
    canonicalize_path, post_treat, select_paths, Dataset, ForestParams, Path, QuantileGrid, RuleDesignMatrix,
    TreeCount,
};

pub const DATA_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data");

pub fn data_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(DATA_DIR).join(name)
}

// ---------------------------------------------------------------------------
// Binomial CDF by exact rational summation
// ---------------------------------------------------------------------------

fn binomial_coefficients(m: u64) -> Vec<BigInt> {
    let mut row = vec![BigInt::one()];
    for j in 1..=m {
        let next = &row[(j - 1) as usize] * BigInt::from(m - j + 1) / BigInt::from(j);
        row.push(next);
    }
    row
}

/// `P(X <= k)` for every `k` in `0..=m`, exactly, for `X ~ Bin(m, num/den)`.
pub fn exact_binomial_cdf(m: u64, num: u64, den: u64) -> Vec<f64> {
    let p = BigRational::new(BigInt::from(num), BigInt::from(den));
    let q = BigRational::one() - &p;
    let coef = binomial_coefficients(m);
    let mut p_pow = vec![BigRational::one()];
    let mut q_pow = vec![BigRational::one()];
    for _ in 0..m {
        p_pow.push(p_pow.last().unwrap() * &p);
        q_pow.push(q_pow.last().unwrap() * &q);
    }
    let mut acc = BigRational::zero();
    (0..=m as usize)
        .map(|j| {
            acc += BigRational::from_integer(coef[j].clone()) * &p_pow[j] * &q_pow[m as usize - j];
            acc.to_f64().unwrap()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Non-negative ridge by projected gradient
// ---------------------------------------------------------------------------

pub struct RidgeInstance {
    pub design: RuleDesignMatrix,
    pub lambda: f64,
}

pub fn random_ridge_instance(rng: &mut ChaCha8Rng) -> RidgeInstance {
    let n = rng.random_range(5..=50);
    let c = rng.random_range(1..=10);
    let columns: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            // rule-like columns: two output levels
            let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let t: f64 = rng.random_range(0.2..0.8);
            (0..n).map(|_| if rng.random::<f64>() < t { a } else { b }).collect()
        })
        .collect();
    let response = (0..n)
        .map(|i| columns.iter().map(|col| col[i] * rng.random_range(-1.0..1.0)).sum::<f64>() + rng.random_range(-1.0..1.0))
        .collect();
    RidgeInstance {
        design: RuleDesignMatrix::from_columns(columns, response).unwrap(),
        lambda: 10f64.powf(rng.random_range(-2.0..0.5)),
    }
}

fn centered(design: &RuleDesignMatrix) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, f64) {
    let n = design.n() as f64;
    let means: Vec<f64> = (0..design.num_rules())
        .map(|k| design.column(k).iter().sum::<f64>() / n)
        .collect();
    let y_mean = design.response().iter().sum::<f64>() / n;
    let cols = (0..design.num_rules())
        .map(|k| design.column(k).iter().map(|v| v - means[k]).collect())
        .collect();
    let y = design.response().iter().map(|v| v - y_mean).collect();
    (cols, y, means, y_mean)
}

/// Minimizer of `(1/n)||Y - b0 - G b||^2 + lambda ||b||^2` over `b >= 0`
/// by projected gradient descent on the centered problem.
pub fn projected_gradient(design: &RuleDesignMatrix, lambda: f64) -> (Vec<f64>, f64) {
    let (cols, y, means, y_mean) = centered(design);
    let n = design.n() as f64;
    let c = cols.len();
    let gram: Vec<Vec<f64>> = (0..c)
        .map(|a| (0..c).map(|b| cols[a].iter().zip(&cols[b]).map(|(x, z)| x * z).sum::<f64>() / n).collect())
        .collect();
    let cross: Vec<f64> = cols.iter().map(|col| col.iter().zip(&y).map(|(x, z)| x * z).sum::<f64>() / n).collect();
    // gradient: 2 (gram b - cross) + 2 lambda b; Lipschitz bound by the trace
    let lipschitz = 2.0 * ((0..c).map(|k| gram[k][k]).sum::<f64>() + lambda);
    let step = 1.0 / lipschitz;
    let mut beta = vec![0.0; c];
    for _ in 0..2_000_000 {
        let mut delta: f64 = 0.0;
        let grad: Vec<f64> = (0..c)
            .map(|k| 2.0 * ((0..c).map(|l| gram[k][l] * beta[l]).sum::<f64>() - cross[k]) + 2.0 * lambda * beta[k])
            .collect();
        for k in 0..c {
            let next = (beta[k] - step * grad[k]).max(0.0);
            delta = delta.max((next - beta[k]).abs());
            beta[k] = next;
        }
        if delta < 1e-15 {
            break;
        }
    }
    let intercept = y_mean - means.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>();
    (beta, intercept)
}

/// Partial derivatives of the penalized objective in each weight.
pub fn objective_gradient(design: &RuleDesignMatrix, weights: &[f64], intercept: f64, lambda: f64) -> Vec<f64> {
    let n = design.n();
    let residual: Vec<f64> = (0..n)
        .map(|i| {
            design.response()[i]
                - intercept
                - (0..design.num_rules()).map(|k| design.column(k)[i] * weights[k]).sum::<f64>()
        })
        .collect();
    (0..design.num_rules())
        .map(|k| {
            -2.0 / n as f64 * design.column(k).iter().zip(&residual).map(|(g, r)| g * r).sum::<f64>()
                + 2.0 * lambda * weights[k]
        })
        .collect()
}

/// Complementary slackness and dual feasibility within `tol`.
pub fn kkt_holds(gradient: &[f64], weights: &[f64], tol: f64) -> bool {
    weights.iter().zip(gradient).all(|(&w, &g)| if w > 0.0 { g.abs() <= tol } else { w == 0.0 && g >= -tol })
}

// ---------------------------------------------------------------------------
// Post-treatment by explicit cell enumeration
// ---------------------------------------------------------------------------

/// One representative input per cell of the grid partition.
pub fn cell_representatives(grid: &QuantileGrid) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for j in 0..grid.p() {
        let cuts = grid.cuts(j);
        let mut reps: Vec<f64> = cuts.iter().map(|c| c.value).collect();
        reps.push(cuts.first().map_or(0.0, |c| c.value) - 1.0);
        points = points
            .into_iter()
            .flat_map(|pt| {
                reps.iter().map(move |&v| {
                    let mut next = pt.clone();
                    next.push(v);
                    next
                })
            })
            .collect();
    }
    points
}

/// Exact rank of the distinct rows `(1, 1_{H_1}(x), ...)` over all cells.
pub fn indicator_rank(paths: &[Path], grid: &QuantileGrid) -> usize {
    let rows: HashSet<Vec<bool>> = cell_representatives(grid)
        .iter()
        .map(|x| paths.iter().map(|p| p.contains(grid, x)).collect())
        .collect();
    let matrix: Vec<Vec<BigRational>> = rows
        .into_iter()
        .map(|r| {
            std::iter::once(BigRational::one())
                .chain(r.into_iter().map(|b| if b { BigRational::one() } else { BigRational::zero() }))
                .collect()
        })
        .collect();
    rational_rank(matrix)
}

pub fn rational_rank(mut m: Vec<Vec<BigRational>>) -> usize {
    let cols = m.first().map_or(0, Vec::len);
    let mut rank = 0;
    for col in 0..cols {
        let Some(pivot) = (rank..m.len()).find(|&r| !m[r][col].is_zero()) else {
            continue;
        };
        m.swap(rank, pivot);
        let lead = m[rank][col].clone();
        for r in rank + 1..m.len() {
            if m[r][col].is_zero() {
                continue;
            }
            let f = &m[r][col] / &lead;
            for c in col..cols {
                let v = &f * &m[rank][c];
                m[r][c] -= v;
            }
        }
        rank += 1;
    }
    rank
}

pub struct RandomForestCase {
    pub grid: QuantileGrid,
    pub selected: Vec<Path>,
}

/// A small random dataset, its depth-2 forest, and the paths selected at a
/// low threshold.
pub fn random_forest_case(seed: u64) -> RandomForestCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.random_range(2..=4);
    let n = rng.random_range(30..=80);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(0..12) as f64).collect()).collect();
    let y = rows
        .iter()
        .map(|r| if r[0] > 5.0 { 2.0 } else { 0.0 } + r[1] * 0.3 + rng.random_range(-1.0..1.0))
        .collect();
    let data = Dataset::from_rows(&rows, y).unwrap();
    let q = rng.random_range(3..=6);
    let grid = QuantileGrid::compute(&data, q).unwrap();
    let params = ForestParams {
        num_trees: TreeCount::Fixed(rng.random_range(20..=60)),
        q,
        seed,
        ..ForestParams::default()
    };
    let table = grow_forest(&data, &grid, &params).unwrap();
    let p0 = rng.random_range(0.0..0.1);
    RandomForestCase {
        selected: select_paths(&table, p0),
        grid,
    }
}

/// Checks of one random case; returns a description of the first failure.
pub fn check_post_treatment(case: &RandomForestCase) -> Result<(), String> {
    let kept = post_treat(&case.selected, &case.grid);
    let rank = indicator_rank(&kept, &case.grid);
    if rank != kept.len() + 1 {
        return Err(format!("{} kept rules but rank {}", kept.len(), rank));
    }
    if post_treat(&kept, &case.grid) != kept {
        return Err("post-treatment is not idempotent".into());
    }
    // every dropped path depends on the rules kept before it
    let mut prefix: Vec<Path> = Vec::new();
    for path in &case.selected {
        if kept.contains(path) {
            if !prefix.contains(path) {
                prefix.push(path.clone());
            }
            continue;
        }
        let mut with = prefix.clone();
        with.push(path.clone());
        if indicator_rank(&with, &case.grid) != indicator_rank(&prefix, &case.grid) {
            return Err(format!("{path} was dropped but is independent"));
        }
    }
    Ok(())
}

pub fn path(triplets: &[(usize, usize, sirus::Side)]) -> Path {
    canonicalize_path(triplets.iter().map(|&(f, r, s)| sirus::Constraint::new(f, r, s))).unwrap()
}
