mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sirus::tuning::{adaptive_num_trees, AdaptiveSettings};
use sirus::{
    cv_evaluate, fit, fit_with_p0, load_dataset, read_dataset, tune_p0, Dataset, Error, ForestParams, QuantileGrid,
    SirusModel, SirusParams, TreeCount, TuneSettings,
};

/// `y` jumps by 10 at the rank-5 cut of `x0`; three noise features.
fn one_step(seed: u64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let mut x0: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    x0.sort_by(f64::total_cmp);
    let step = x0[n.div_ceil(2) - 1];
    let y = rows
        .iter()
        .map(|r| if r[0] < step { 0.0 } else { 10.0 } + rng.random_range(-0.1..0.1))
        .collect();
    Dataset::from_rows(&rows, y).unwrap()
}

fn quick(trees: usize, folds: usize, repeats: usize) -> SirusParams {
    SirusParams {
        tuning: TuneSettings { folds, repeats },
        ..SirusParams::default().with_trees(trees)
    }
}

#[test]
fn a_single_dominant_split_yields_one_rule() {
    let data = one_step(1, 300);
    let model = fit(&data, &quick(400, 5, 2)).unwrap();
    assert_eq!(model.num_rules(), 1, "{:?}", model.paths());
    let c = model.rules[0].rule.path.constraints();
    assert_eq!((c.len(), c[0].feature), (1, 0));
}

#[test]
fn tuning_grows_one_forest_per_fold() {
    let data = one_step(2, 120);
    let tuned = tune_p0(&data, &quick(100, 4, 3)).unwrap();
    assert_eq!(tuned.forests_grown, 4 * 3);
    assert_eq!(tuned.selections.len(), 3);
    assert_eq!(tuned.points.len(), tuned.grid.len());
    assert!(tuned.points.iter().all(|p| p.size <= sirus::MAX_RULES as f64));
}

#[test]
fn alpha_one_stops_after_the_first_batch() {
    let data = one_step(3, 100);
    let grid = QuantileGrid::compute(&data, 10).unwrap();
    let settings = AdaptiveSettings { alpha: 1.0, ..AdaptiveSettings::default() };
    let m = adaptive_num_trees(&data, &grid, &ForestParams::default(), &settings).unwrap();
    assert_eq!(m, settings.batch as u64);
}

#[test]
fn a_single_possible_split_stops_after_the_first_batch() {
    // one feature with a single usable cut: every tree is the same stump
    let rows: Vec<Vec<f64>> = (0..80).map(|i| vec![if i % 4 == 0 { 0.0 } else { 1.0 }]).collect();
    let y = rows.iter().enumerate().map(|(i, r)| r[0] * 5.0 + (i % 3) as f64).collect();
    let data = Dataset::from_rows(&rows, y).unwrap();
    let grid = QuantileGrid::compute(&data, 2).unwrap();
    let params = ForestParams { q: 2, ..ForestParams::default() };
    let settings = AdaptiveSettings::default();
    let m = adaptive_num_trees(&data, &grid, &params, &settings).unwrap();
    assert_eq!(m, settings.batch as u64);
}

#[test]
fn a_constant_response_has_no_threshold_grid() {
    let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, (i * 7 % 11) as f64]).collect();
    let data = Dataset::from_rows(&rows, vec![2.0; 50]).unwrap();
    let err = tune_p0(&data, &quick(100, 5, 1)).unwrap_err();
    assert!(matches!(err, Error::DegenerateP0Grid { .. }), "{err}");
}

/// Fixed eleven-rule model over five Ozone features.
fn ozone_table_model() -> SirusModel {
    let names = ["temp", "ibt", "vis", "vh", "ibh"];
    let cut = |f: usize, rank: usize, value: f64, side: &str| {
        json!({"feature": f, "rank": rank, "cut_value": value, "side": side})
    };
    let rule = |constraints: Vec<serde_json::Value>, y_in: f64, y_out: f64, weight: f64, frequency: f64| {
        json!({"constraints": constraints, "y_in": y_in, "y_out": y_out, "weight": weight, "frequency": frequency})
    };
    let rules = vec![
        rule(vec![cut(0, 5, 65.0, "L")], 7.0, 19.0, 0.12, 0.29),
        rule(vec![cut(1, 5, 189.0, "L")], 7.0, 18.0, 0.07, 0.17),
        rule(vec![cut(0, 5, 65.0, "R"), cut(2, 5, 150.0, "L")], 20.0, 7.0, 0.31, 0.063),
        rule(vec![cut(3, 5, 5840.0, "L")], 10.0, 20.0, 0.072, 0.061),
        rule(vec![cut(4, 4, 2110.0, "L")], 16.0, 7.0, 0.14, 0.060),
        rule(vec![cut(4, 6, 2960.0, "L")], 15.0, 6.0, 0.10, 0.058),
        rule(vec![cut(0, 5, 65.0, "R"), cut(4, 4, 2110.0, "L")], 21.0, 8.0, 0.16, 0.051),
        rule(vec![cut(2, 5, 150.0, "L")], 14.0, 7.0, 0.18, 0.048),
        rule(vec![cut(0, 5, 65.0, "L"), cut(1, 3, 120.0, "L")], 5.0, 15.0, 0.15, 0.043),
        rule(vec![cut(0, 6, 70.0, "L")], 8.0, 20.0, 0.14, 0.040),
        rule(vec![cut(1, 6, 227.0, "L")], 9.0, 22.0, 0.21, 0.039),
    ];
    let grid_cuts = json!([
        [{"rank": 5, "value": 65.0}, {"rank": 6, "value": 70.0}],
        [{"rank": 3, "value": 120.0}, {"rank": 5, "value": 189.0}, {"rank": 6, "value": 227.0}],
        [{"rank": 5, "value": 150.0}],
        [{"rank": 5, "value": 5840.0}],
        [{"rank": 4, "value": 2110.0}, {"rank": 6, "value": 2960.0}],
    ]);
    let doc = json!({
        "q": 10,
        "p0": 0.038,
        "lambda": 1.0,
        "intercept": -7.8,
        "rules": rules,
        "feature_names": names,
        "response_name": "Ozone",
        "response_mean": 12.0,
        "encoding": {"columns": names.iter().map(|n| json!({"kind": "numeric", "name": n})).collect::<Vec<_>>()},
        "grid": {"q": 10, "cuts": grid_cuts},
        "rules_before_discard": 11,
        "num_trees": 10000,
    });
    SirusModel::from_json(&doc.to_string()).unwrap()
}

#[test]
fn an_eleven_rule_ozone_model_evaluates_by_hand() {
    let model = ozone_table_model();
    // temp=60, ibt=100, vis=200, vh=5000, ibh=3000
    let x = [60.0, 100.0, 200.0, 5000.0, 3000.0];
    // rule by rule: inside, inside, outside, inside, outside, outside,
    // outside, outside, inside, inside, inside
    let terms = [
        0.12 * 7.0,
        0.07 * 7.0,
        0.31 * 7.0,
        0.072 * 10.0,
        0.14 * 7.0,
        0.10 * 6.0,
        0.16 * 8.0,
        0.18 * 7.0,
        0.15 * 5.0,
        0.14 * 8.0,
        0.21 * 9.0,
    ];
    let want = -7.8 + terms.iter().sum::<f64>();
    assert!((want - 4.3).abs() < 1e-12);
    assert!((model.predict(&x).unwrap() - want).abs() < 1e-12);
    assert!(model.predict(&x[..4]).is_err());
}

#[test]
fn saved_models_predict_bit_identically() {
    let data = load_dataset(common::data_path("machine.csv"), "perf", &[]).unwrap();
    let model = fit_with_p0(&data, 0.04, &SirusParams::default().with_trees(500)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("model.json");
    std::fs::write(&file, model.to_json().unwrap()).unwrap();
    let back = SirusModel::from_json(&std::fs::read_to_string(&file).unwrap()).unwrap();
    assert_eq!(back, model);
    for i in 0..data.n() {
        let x = data.row(i).to_vec();
        assert_eq!(model.predict(&x).unwrap().to_bits(), back.predict(&x).unwrap().to_bits());
    }
}

#[test]
fn evaluation_is_reproducible() {
    let data = one_step(4, 150);
    let params = quick(150, 5, 2);
    let a = cv_evaluate(&data, 0.05, &params, 5, 2).unwrap();
    let b = cv_evaluate(&data, 0.05, &params, 5, 2).unwrap();
    assert_eq!(a.unexplained_variance, b.unexplained_variance);
    assert_eq!(a.stability, b.stability);
    assert_eq!(a.stability_reports.len(), 2);
    assert!(a.model_size <= a.size_before_discard);
    assert!(a.unexplained_variance < 0.15, "{}", a.unexplained_variance);
    assert_eq!(a.num_trees, 150);
}

#[test]
fn categorical_columns_and_missing_cells() {
    let csv = "a,color,y\n1,red,1.0\n2,blue,2.0\nNA,red,3.0\n4,green,4.5\n5,blue,\n6,red,6.5\n";
    let data = read_dataset(csv.as_bytes(), "y", &["color".to_string()]).unwrap();
    assert_eq!(data.dropped_rows(), 2);
    assert_eq!(data.feature_names(), ["a", "color=blue", "color=green", "color=red"]);
    assert_eq!(data.row(2).to_vec(), vec![4.0, 0.0, 1.0, 0.0]);
    let query = data.encoding().encode_csv("a,color\n3,green\n".as_bytes()).unwrap();
    assert_eq!(query.row(0).to_vec(), vec![3.0, 0.0, 1.0, 0.0]);
}

#[test]
fn fixed_tree_counts_are_honoured() {
    let data = one_step(5, 100);
    let params = SirusParams {
        forest: ForestParams { num_trees: TreeCount::Fixed(250), ..ForestParams::default() },
        ..SirusParams::default()
    };
    assert_eq!(fit_with_p0(&data, 0.1, &params).unwrap().num_trees, 250);
}
