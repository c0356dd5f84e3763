//! Builds the network and prints every named intermediate shape.
//!
//! cargo run --release --example shape_walk -- [scale] [size] [--execute]
//!
//! Without `--execute` the convolutions are skipped, which makes the full
//! width model walk in about a second.

use std::time::Instant;

use docwarp::model::{ModelConfig, Network};
use docwarp::nn::{Graph, Shape, Tensor};

fn main() -> docwarp::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let execute = args.iter().any(|a| a == "--execute");
    let mut nums = args.iter().filter(|a| !a.starts_with("--"));
    let scale: f64 = nums.next().map(|s| s.parse().expect("scale")).unwrap_or(1.0);
    let size: usize = nums.next().map(|s| s.parse().expect("size")).unwrap_or(256);
    let cfg = ModelConfig {
        input_size: size,
        scale,
        ..ModelConfig::default()
    };
    let start = Instant::now();
    let (net, store) = Network::build(&cfg, 0)?;
    println!("{}\n", net.summary(&store));
    let mut g = if execute { Graph::inference() } else { Graph::shape_probe() };
    let x = g.input(Tensor::full(Shape::new(1, 3, size, size), 0.5f32));
    let out = net.forward(&mut g, &store, x)?;
    for (name, v) in out.named() {
        println!("{name:>3}  {}", g.shape(v));
    }
    println!("\nbuild + forward in {:.2?}", start.elapsed());
    Ok(())
}
