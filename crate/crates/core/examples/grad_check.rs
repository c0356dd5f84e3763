//! Finite-difference check of every layer type and of a small full model.
//!
//! cargo run --release --example grad_check -- [scale] [size] [seed]

use docwarp::model::ModelConfig;
use docwarp::verify::{layer_gradient_suite, model_gradient_check};

fn main() -> docwarp::Result<()> {
    let mut args = std::env::args().skip(1);
    let scale: f64 = args.next().map(|s| s.parse().expect("scale")).unwrap_or(0.125);
    let size: usize = args.next().map(|s| s.parse().expect("size")).unwrap_or(32);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(0);

    for c in layer_gradient_suite(seed, 1e-4)? {
        println!("{:<16} {:.3e}", c.name, c.report.max_rel_error());
    }
    let cfg = ModelConfig {
        input_size: size,
        scale,
        ..ModelConfig::default()
    };
    let report = model_gradient_check(&cfg, seed, 3, 1e-3)?;
    println!("\n{report}");
    Ok(())
}
