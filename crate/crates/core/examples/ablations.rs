//! Trains the four architecture presets on the same data and compares their
//! validation scores.
//!
//! cargo run --release --example ablations -- [samples] [epochs] [scale] [size]
//!
//! The defaults finish in minutes; rankings at this scale are noisy.

use docwarp::dewarp::Predictor;
use docwarp::model::{ModelConfig, Network};
use docwarp::synth::{generate_dataset, read_dataset, ImageSource, SynthConfig};
use docwarp::train::{ablation_presets, evaluate, train, TrainConfig};

fn main() -> docwarp::Result<()> {
    let mut args = std::env::args().skip(1);
    let samples: usize = args.next().map(|s| s.parse().expect("samples")).unwrap_or(64);
    let epochs: usize = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(2);
    let scale: f64 = args.next().map(|s| s.parse().expect("scale")).unwrap_or(0.25);
    let size: usize = args.next().map(|s| s.parse().expect("size")).unwrap_or(64);

    let work = std::env::temp_dir().join("docwarp-ablations");
    let _ = std::fs::remove_dir_all(&work);
    let data = work.join("data");
    generate_dataset(
        &data,
        samples,
        512,
        &SynthConfig::default(),
        &ImageSource::Builtin,
        &ImageSource::Builtin,
    )?;
    let dataset = read_dataset(&data)?;
    let base = ModelConfig {
        input_size: size,
        scale,
        ..ModelConfig::default()
    };

    println!(
        "{:<16} {:>10} {:>10} {:>8} {:>8}",
        "preset", "params", "last loss", "ms-ssim", "ld px"
    );
    for (name, model) in ablation_presets(&base) {
        let (net, store) = Network::build(&model, 0)?;
        let params = net.summary(&store).total;
        let cfg = TrainConfig {
            epochs,
            learning_rate: 1e-3,
            seed: 1,
            model,
            data_path: data.clone(),
            out_dir: work.join(name),
            ..TrainConfig::default()
        };
        let run = train(&cfg, &dataset, |_| {})?;
        let p = Predictor::load(&run.checkpoint)?;
        let m = evaluate(&p, &dataset, &run.val_indices, true)?.mean.expect("validation samples");
        println!(
            "{name:<16} {params:>10} {:>10.5} {:>8.4} {:>8.3}",
            run.log.last().map_or(f64::NAN, |r| r.combined_loss),
            m.ms_ssim,
            m.ld.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
