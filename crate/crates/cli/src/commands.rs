use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use sirus::forest::baseline_params;
use sirus::{
    cv_evaluate, cv_forest_error, fit_with_p0, load_dataset, tune_p0, Dataset, ForestParams, SirusModel, SirusParams,
    TuneSettings,
};

use crate::args::{BenchmarkArgs, FitArgs, MethodArgs, PredictArgs, StabilityArgs, TrainArgs, TuneArgs};
use crate::error::CliError;
use crate::table::render_table;

pub fn sirus_params(method: &MethodArgs) -> SirusParams {
    SirusParams {
        forest: ForestParams {
            num_trees: method.trees,
            q: method.q,
            seed: method.seed,
            ..ForestParams::default()
        },
        p0: method.p0,
        tuning: TuneSettings {
            folds: method.folds,
            repeats: method.repeats,
        },
        ..SirusParams::default()
    }
}

fn load(train: &TrainArgs) -> Result<Dataset, CliError> {
    let data = load_dataset(&train.data, &train.response, &train.categorical)?;
    if data.dropped_rows() > 0 {
        warn!("{} rows with missing values dropped", data.dropped_rows());
    }
    Ok(data)
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), CliError> {
    match path {
        Some(path) => fs::write(path, content).map_err(|source| CliError::Write {
            path: path.to_path_buf(),
            source,
        }),
        None => io::stdout().write_all(content.as_bytes()).map_err(|source| CliError::Write {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Fixed p0, or the tuned one together with its Pareto points.
fn resolve_p0(data: &Dataset, params: &SirusParams) -> Result<(f64, Option<sirus::TuneResult>), CliError> {
    match params.p0 {
        Some(p0) => Ok((p0, None)),
        None => {
            let tuned = tune_p0(data, params)?;
            info!("tuned p0 = {} over {} repeats", tuned.p0, tuned.selections.len());
            Ok((tuned.p0, Some(tuned)))
        }
    }
}

pub fn fit(args: &FitArgs) -> Result<SirusModel, CliError> {
    let data = load(&args.train)?;
    let params = sirus_params(&args.train.method);
    let (p0, tuned) = resolve_p0(&data, &params)?;
    if let (Some(path), Some(tuned)) = (&args.pareto, &tuned) {
        write_output(Some(path), &to_csv(&tuned.points)?)?;
    }
    let model = fit_with_p0(&data, p0, &params)?;
    if model.rules.is_empty() {
        warn!("the model has no rules: every prediction is the intercept");
    }
    write_output(Some(&args.out), &model.to_json()?)?;
    write_output(args.table.as_deref(), &render_table(&model))?;
    Ok(model)
}

pub fn predict(args: &PredictArgs) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(&args.model).map_err(|e| CliError::Data(format!("{}: {e}", args.model.display())))?;
    let model = SirusModel::from_json(&text)?;
    let query = fs::read(&args.data).map_err(|e| CliError::Data(format!("{}: {e}", args.data.display())))?;
    let predictions = if query.iter().all(u8::is_ascii_whitespace) {
        Vec::new()
    } else {
        let features = model.encoding.encode_csv(query.as_slice())?;
        model.predict_rows(&features)?
    };
    let mut out = String::from("prediction\n");
    for p in &predictions {
        out.push_str(&format!("{p}\n"));
    }
    write_output(args.out.as_deref(), &out)?;
    Ok(predictions)
}

pub fn tune(args: &TuneArgs) -> Result<sirus::TuneResult, CliError> {
    let data = load(&args.train)?;
    let params = sirus_params(&args.train.method);
    let tuned = tune_p0(&data, &params)?;
    eprintln!("p0 = {} ({} trees)", tuned.p0, tuned.num_trees);
    write_output(args.out.as_deref(), &to_csv(&tuned.points)?)?;
    Ok(tuned)
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn stability(args: &StabilityArgs) -> Result<sirus::EvaluationReport, CliError> {
    let data = load(&args.train)?;
    let method = &args.train.method;
    let params = sirus_params(method);
    let (p0, _) = resolve_p0(&data, &params)?;
    let report = cv_evaluate(&data, p0, &params, method.folds, method.repeats)?;
    eprintln!(
        "p0 = {}  size = {:.2}  stability = {:.3}  error = {:.3}",
        report.p0, report.model_size, report.stability, report.unexplained_variance
    );
    write_output(
        args.out.as_deref(),
        &to_csv(&[report.row(&dataset_name(&args.train.data), method.seed)])?,
    )?;
    Ok(report)
}

/// One benchmark result; the forest baseline leaves rule columns empty.
#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkRow {
    pub dataset: String,
    pub method: &'static str,
    pub p0: Option<f64>,
    pub size: Option<f64>,
    pub stability: Option<f64>,
    pub error: f64,
    #[serde(rename = "M")]
    pub num_trees: u64,
    pub seed: u64,
}

fn benchmark_one(path: &Path, response: &str, args: &BenchmarkArgs) -> Result<Vec<BenchmarkRow>, CliError> {
    let train = TrainArgs {
        data: path.to_path_buf(),
        response: response.to_string(),
        categorical: args.categorical.clone(),
        method: args.method.clone(),
    };
    let data = load(&train)?;
    let params = sirus_params(&args.method);
    let (p0, _) = resolve_p0(&data, &params)?;
    let report = cv_evaluate(&data, p0, &params, args.method.folds, args.method.repeats)?;
    let baseline = ForestParams {
        q: args.method.q,
        ..baseline_params(args.method.seed)
    };
    let forest_error = cv_forest_error(&data, &baseline, args.method.folds, args.method.repeats)?;
    let name = dataset_name(path);
    Ok(vec![
        BenchmarkRow {
            dataset: name.clone(),
            method: "sirus",
            p0: Some(report.p0),
            size: Some(report.model_size),
            stability: Some(report.stability),
            error: report.unexplained_variance,
            num_trees: report.num_trees,
            seed: args.method.seed,
        },
        BenchmarkRow {
            dataset: name,
            method: "forest",
            p0: None,
            size: None,
            stability: None,
            error: forest_error,
            num_trees: sirus::QuantileForest::DEFAULT_TREES as u64,
            seed: args.method.seed,
        },
    ])
}

/// Rows of the datasets that succeeded, and whether any failed.
pub fn benchmark(args: &BenchmarkArgs) -> Result<(Vec<BenchmarkRow>, bool), CliError> {
    if args.response.len() != 1 && args.response.len() != args.data.len() {
        return Err(CliError::Config(format!(
            "{} datasets but {} response names",
            args.data.len(),
            args.response.len()
        )));
    }
    let mut rows = Vec::new();
    let mut failed = false;
    for (i, path) in args.data.iter().enumerate() {
        let response = &args.response[if args.response.len() == 1 { 0 } else { i }];
        match benchmark_one(path, response, args) {
            Ok(r) => rows.extend(r),
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                failed = true;
            }
        }
    }
    write_output(args.out.as_deref(), &to_csv(&rows)?)?;
    Ok((rows, failed))
}
