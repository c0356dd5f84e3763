//! Generates a small synthetic dataset and reports how well each sample can
//! be reconstructed from its own ground truth.
//!
//! cargo run --release --example generate_dataset -- [count] [seed] [out_dir]

use std::path::PathBuf;

use docwarp::synth::{generate_dataset, read_dataset, reconstruction_ssim, ImageSource, SynthConfig};
use docwarp::verify::round_trip_error_px;

fn main() -> docwarp::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|s| s.parse().expect("count")).unwrap_or(8);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(1);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("docwarp-data"));

    let records = generate_dataset(
        &out,
        count,
        seed,
        &SynthConfig::default(),
        &ImageSource::Builtin,
        &ImageSource::Builtin,
    )?;
    println!("wrote {} samples to {}", records.len(), out.display());

    let dataset = read_dataset(&out)?;
    println!("{:>6}  {:>24}  {:>8}  {:>10}", "sample", "kinds", "ssim", "inverse px");
    for (k, r) in records.iter().enumerate() {
        let s = dataset.load(k)?;
        let kinds: Vec<String> = r.kinds().iter().map(|k| format!("{k:?}").to_lowercase()).collect();
        println!(
            "{k:>6}  {:>24}  {:>8.4}  {:>10.3}",
            kinds.join(","),
            reconstruction_ssim(&s)?,
            round_trip_error_px(&s.gt_grid)?
        );
    }
    Ok(())
}
