//! Rectifies one image with a checkpoint (or a grid file) and writes the
//! result, the edge map and the predicted grid next to it.
//!
//! cargo run --release --example dewarp_image -- <checkpoint> <image.png> [--native-res]
//!
//! Without arguments a warped sample is generated and rectified with its own
//! ground-truth grid.

use std::path::{Path, PathBuf};

use docwarp::dewarp::{rectify, Predictor};
use docwarp::raster::Image;
use docwarp::synth::{generate_sample, ImageSource, SynthConfig};

fn main() -> docwarp::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let native = args.iter().any(|a| a == "--native-res");
    let paths: Vec<&String> = args.iter().filter(|a| !a.starts_with("--")).collect();
    let out_dir = std::env::temp_dir().join("docwarp-dewarp");
    std::fs::create_dir_all(&out_dir)?;

    let (predictor, photo) = match paths.as_slice() {
        [ckpt, image] => (Predictor::load(Path::new(ckpt.as_str()))?, Image::load_png(image.as_str())?),
        _ => {
            let (s, _) = generate_sample(0, 7, &SynthConfig::default(), &ImageSource::Builtin, &ImageSource::Builtin)?;
            s.flat.save_png(out_dir.join("flat.png"))?;
            (Predictor::Fixed(s.gt_grid), s.warped)
        }
    };
    let out = rectify(&predictor, &photo, native)?;
    let write = |name: &str| -> PathBuf { out_dir.join(name) };
    photo.save_png(write("input.png"))?;
    out.image.save_png(write("rectified.png"))?;
    out.grid.save(write("grid.wgrd"))?;
    if let Some(e) = &out.edges {
        e.save_png(write("edges.png"))?;
    }
    println!(
        "{}x{} -> {}x{} in {}",
        photo.width(),
        photo.height(),
        out.image.width(),
        out.image.height(),
        out_dir.display()
    );
    Ok(())
}
