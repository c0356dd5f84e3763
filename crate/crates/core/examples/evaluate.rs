//! Scores a predictor on a dataset directory and prints the per-sample table.
//!
//! cargo run --release --example evaluate -- <data_dir> [checkpoint|identity] [--native-res]

use std::path::Path;

use docwarp::dewarp::Predictor;
use docwarp::metrics::write_csv;
use docwarp::synth::read_dataset;
use docwarp::train::evaluate;

fn main() -> docwarp::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let native = args.iter().any(|a| a == "--native-res");
    let mut paths = args.iter().filter(|a| !a.starts_with("--"));
    let data = paths
        .next()
        .expect("usage: evaluate <data_dir> [checkpoint|identity] [--native-res]");
    let predictor = match paths.next().map(String::as_str) {
        None | Some("identity") => Predictor::identity(256),
        Some(p) => Predictor::load(Path::new(p))?,
    };
    let dataset = read_dataset(Path::new(data))?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let summary = evaluate(&predictor, &dataset, &all, native)?;
    write_csv(std::io::stdout().lock(), &summary.rows)?;
    if let Some(m) = summary.mean {
        println!("\nmean over {} samples\n{m}", summary.rows.len());
    }
    Ok(())
}
