use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use sirus::{load_dataset, SirusModel};
use sirus_cli::table::parse_table;

const MACHINE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/machine.csv");

fn sirus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sirus"))
        .args(args)
        .env("SIRUS_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Fits Machine with a fixed threshold and tree count into `dir`.
fn fit_machine(dir: &Path) -> (PathBuf, PathBuf) {
    let (model, table) = (dir.join("model.json"), dir.join("rules.md"));
    let out = sirus(&[
        "fit", "--data", MACHINE, "--response", "perf", "--p0", "0.05", "--trees", "300", "--out",
        path_str(&model), "--table", path_str(&table),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (model, table)
}

#[test]
fn fit_then_predict_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (model_path, _) = fit_machine(dir.path());
    let preds = dir.path().join("pred.csv");
    let out = sirus(&["predict", "--model", path_str(&model_path), "--data", MACHINE, "--out", path_str(&preds)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let model = SirusModel::from_json(&fs::read_to_string(&model_path).unwrap()).unwrap();
    let data = load_dataset(MACHINE, "perf", &[]).unwrap();
    let text = fs::read_to_string(&preds).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("prediction"));
    let got: Vec<f64> = lines.map(|l| l.parse().unwrap()).collect();
    assert_eq!(got.len(), data.n());
    for (i, g) in got.iter().enumerate() {
        assert_eq!(g.to_bits(), model.predict(&data.row(i).to_vec()).unwrap().to_bits());
    }
}

#[test]
fn the_rule_table_describes_the_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let (model_path, table_path) = fit_machine(dir.path());
    let model = SirusModel::from_json(&fs::read_to_string(&model_path).unwrap()).unwrap();
    let table = parse_table(&fs::read_to_string(&table_path).unwrap()).unwrap();
    assert_eq!(table.response, "perf");
    assert_eq!(table.rules.len(), model.num_rules());
    assert!(table.rules.windows(2).all(|w| w[0].frequency >= w[1].frequency));
    for row in &table.rules {
        assert_eq!((0..model.num_rules()).filter(|&k| row.matches(&model, k)).count(), 1);
    }
}

#[test]
fn fits_are_reproducible_from_the_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ma, _) = fit_machine(a.path());
    let (mb, _) = fit_machine(b.path());
    assert_eq!(fs::read(ma).unwrap(), fs::read(mb).unwrap());
}

#[test]
fn an_empty_query_gives_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let (model_path, _) = fit_machine(dir.path());
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let out = sirus(&["predict", "--model", path_str(&model_path), "--data", path_str(&empty)]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "prediction\n");
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    // configuration
    assert_eq!(code(&sirus(&["fit", "--bogus"])), 2);
    assert_eq!(code(&sirus(&["fit", "--data", MACHINE, "--response", "perf", "--trees", "0"])), 2);
    let bad_p0 = sirus(&["fit", "--data", MACHINE, "--response", "perf", "--p0", "1.5", "--trees", "10"]);
    assert_eq!(code(&bad_p0), 2, "{}", String::from_utf8_lossy(&bad_p0.stderr));
    // data
    assert_eq!(code(&sirus(&["fit", "--data", "/no/such/file.csv", "--response", "y"])), 3);
    assert_eq!(code(&sirus(&["fit", "--data", MACHINE, "--response", "nope", "--p0", "0.1"])), 3);
    let (model_path, _) = fit_machine(dir.path());
    let wrong = dir.path().join("wrong.csv");
    fs::write(&wrong, "a,b\n1,2\n").unwrap();
    assert_eq!(code(&sirus(&["predict", "--model", path_str(&model_path), "--data", path_str(&wrong)])), 3);
    // runtime: a constant response leaves nothing to tune
    let flat = dir.path().join("flat.csv");
    fs::write(&flat, (0..40).fold(String::from("x,y\n"), |s, i| s + &format!("{i},1\n"))).unwrap();
    let out = sirus(&["tune", "--data", path_str(&flat), "--response", "y", "--trees", "100", "--repeats", "1"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn thread_count_comes_from_the_environment() {
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_sirus"))
            .args(["stability", "--data", MACHINE, "--response", "perf", "--p0", "0.05"])
            .args(["--trees", "100", "--folds", "3", "--repeats", "1"])
            .env("SIRUS_THREADS", threads)
            .output()
            .unwrap()
    };
    let (one, two) = (run("1"), run("2"));
    assert_eq!((code(&one), code(&two)), (0, 0));
    assert_eq!(one.stdout, two.stdout);
    assert_eq!(code(&run("zero")), 2);
}

#[test]
fn tuning_writes_the_pareto_points() {
    let dir = tempfile::tempdir().unwrap();
    let pareto = dir.path().join("pareto.csv");
    let out = sirus(&[
        "tune", "--data", MACHINE, "--response", "perf", "--trees", "150", "--folds", "3", "--repeats", "2", "--out",
        path_str(&pareto),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(pareto).unwrap();
    assert_eq!(text.lines().next(), Some("p0,size,error,stability,distance"));
    assert!(text.lines().count() > 2);
}

#[test]
fn benchmark_runs_quickly_on_a_small_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small.csv");
    let mut csv = String::from("a,b,c,y\n");
    for i in 0..60u32 {
        let (a, b, c) = (i % 7, (i * 5) % 11, (i * 3) % 13);
        csv.push_str(&format!("{a},{b},{c},{}\n", f64::from(u8::from(a < 3)) * 4.0 + f64::from(b) * 0.1));
    }
    fs::write(&small, csv).unwrap();
    let results = dir.path().join("bench.csv");
    let start = Instant::now();
    let out = sirus(&[
        "benchmark", "--data", path_str(&small), "--response", "y", "--trees", "100", "--folds", "3", "--repeats",
        "1", "--out", path_str(&results),
    ]);
    assert!(start.elapsed() < Duration::from_secs(10));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(results).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "dataset,method,p0,size,stability,error,M,seed");
    assert!(lines[1].starts_with("small,sirus,") && lines[2].starts_with("small,forest,"));
}

#[test]
fn benchmark_reports_a_failing_dataset_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let out = sirus(&[
        "benchmark", "--data", "/no/such.csv", "--data", MACHINE, "--response", "perf", "--p0", "0.1", "--trees", "50",
        "--folds", "2", "--repeats", "1",
    ]);
    assert_eq!(code(&out), 4);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("machine,sirus,"), "{stdout}");
    drop(dir);
}
