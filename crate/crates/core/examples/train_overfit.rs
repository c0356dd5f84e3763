//! Overfits a quarter-width model on a handful of generated samples and
//! compares the result with the unrectified baseline.
//!
//! cargo run --release --example train_overfit -- [steps] [learning_rate] [batch]

use docwarp::dewarp::Predictor;
use docwarp::model::ModelConfig;
use docwarp::synth::{generate_dataset, read_dataset, ImageSource, SynthConfig};
use docwarp::train::{evaluate, train, TrainConfig};

fn main() -> docwarp::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse().expect("steps")).unwrap_or(600);
    let lr: f64 = args.next().map(|s| s.parse().expect("learning rate")).unwrap_or(1e-3);
    let batch: usize = args.next().map(|s| s.parse().expect("batch")).unwrap_or(4);

    let work = std::env::temp_dir().join("docwarp-overfit");
    let data = work.join("data");
    let _ = std::fs::remove_dir_all(&work);
    generate_dataset(&data, 8, 11, &SynthConfig::default(), &ImageSource::Builtin, &ImageSource::Builtin)?;
    let dataset = read_dataset(&data)?;

    let cfg = TrainConfig {
        epochs: usize::MAX,
        max_steps: steps,
        batch_size: batch,
        learning_rate: lr,
        seed: 5,
        val_fraction: 0.0,
        model: ModelConfig {
            input_size: 64,
            scale: 0.25,
            ..ModelConfig::default()
        },
        data_path: data.clone(),
        out_dir: work.join("run"),
        ..TrainConfig::default()
    };
    let outcome = train(&cfg, &dataset, |r| {
        if r.step % 50 == 0 || r.step == 1 {
            println!(
                "step {:>5}  grid {:.5}  edge {:.4}  total {:.5}  {:>7.1}s",
                r.step, r.grid_loss, r.edge_loss, r.combined_loss, r.wall_time
            );
        }
    })?;

    let model = Predictor::load(&outcome.checkpoint)?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let trained = evaluate(&model, &dataset, &all, true)?.mean.expect("samples");
    let baseline = evaluate(&Predictor::identity(64), &dataset, &all, true)?.mean.expect("samples");
    println!("\nidentity baseline\n{baseline}\n\ntrained\n{trained}");
    Ok(())
}
