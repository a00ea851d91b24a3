//! Tunes p0 on a CSV file and reports cross-validated performance.
//!
//! ```text
//! cargo run --release --example evaluate -- data/machine.csv perf [repeats]
//! ```

use std::time::Instant;

use sirus::{cv_evaluate, load_dataset, tune_p0, SirusParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let (path, response) = (&args[1], &args[2]);
    let repeats: usize = args.get(3).map_or(Ok(10), |s| s.parse())?;
    let data = load_dataset(path, response, &[])?;
    let mut params = SirusParams::default();
    params.tuning.repeats = repeats;

    let start = Instant::now();
    let tuned = tune_p0(&data, &params)?;
    println!("trees {}  grid {}  p0 {:.5}  ({:.1}s)", tuned.num_trees, tuned.grid.len(), tuned.p0, start.elapsed().as_secs_f64());
    for p in &tuned.points {
        println!("  p0 {:.5}  size {:5.2}  error {:.3}  stability {:.3}  distance {:.3}", p.p0, p.size, p.error, p.stability, p.distance);
    }
    let report = cv_evaluate(&data, tuned.p0, &params, params.tuning.folds, repeats)?;
    println!(
        "size {:.2} ({:.2} before discard)  stability {:.3}  error {:.3} (macro {:.3})  total {:.1}s",
        report.model_size,
        report.size_before_discard,
        report.stability,
        report.unexplained_variance,
        report.macro_unexplained_variance,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
