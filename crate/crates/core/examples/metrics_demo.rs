//! SSIM per pyramid level, MS-SSIM and local distortion for a page against
//! progressively stronger degradations.
//!
//! cargo run --release --example metrics_demo

use docwarp::grid::{sample, WarpGrid};
use docwarp::metrics::{local_distortion, ms_ssim, pyramid_ssim, weighted_average, LEVELS};
use docwarp::synth::synthetic_page;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> docwarp::Result<()> {
    let page = synthetic_page(256, &mut ChaCha8Rng::seed_from_u64(3));
    let identity = WarpGrid::identity(256, 256);
    println!("{:>10}  {:<42}  {:>7}  {:>6}", "shift px", "ssim per level", "ms-ssim", "ld px");
    for shift in [0.0f32, 0.5, 1.0, 2.0, 4.0] {
        let d = shift / 128.0;
        let grid = WarpGrid::from_fn(256, 256, |i, j| {
            let [x, y] = identity.get(i, j);
            [(x + d).clamp(-1.0, 1.0), y]
        });
        let moved = sample(&page, &grid, &[0.0; 3])?;
        let levels = pyramid_ssim(&moved, &page, LEVELS)?;
        let text: Vec<String> = levels.iter().map(|v| format!("{v:.3}")).collect();
        println!(
            "{shift:>10}  {:<42}  {:>7.4}  {:>6.3}",
            text.join(" "),
            ms_ssim(&moved, &page)?,
            local_distortion(&grid, &identity)?
        );
    }
    println!(
        "\nweighted average of [0.8, 0.9, 0.95, 0.99, 1.0]: {:.6}",
        weighted_average(&[0.8, 0.9, 0.95, 0.99, 1.0])
    );
    Ok(())
}
