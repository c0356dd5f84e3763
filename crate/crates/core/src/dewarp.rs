//! Inference: predict a dewarp grid for a photo and resample it.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{black, sample, upsample_grid, WarpGrid};
use crate::model::{load_model, Network};
use crate::nn::{checkpoint, Graph, ParamStore};
use crate::raster::Image;

/// Anything that maps a square input image to a dewarp grid.
#[allow(clippy::large_enum_variant)]
pub enum Predictor {
    Model {
        net: Network,
        store: ParamStore<f32>,
    },
    /// Always returns the same grid, whatever the input. Written as a plain
    /// grid file; handy as a baseline or test fixture.
    Fixed(WarpGrid),
}

/// Output of one prediction at model resolution.
pub struct Prediction {
    pub grid: WarpGrid,
    /// Sigmoid edge probabilities, when the model has an edge head.
    pub edges: Option<Image>,
}

impl Predictor {
    /// Opens a network checkpoint or a grid file, told apart by their magic bytes.
    pub fn load(path: &Path) -> Result<Self> {
        let head = fs::read(path)?;
        if WarpGrid::sniff(&head) {
            let grid = WarpGrid::decode(&head, path)?;
            if grid.height() != grid.width() {
                return Err(Error::format(path, "fixed grid must be square"));
            }
            return Ok(Predictor::Fixed(grid));
        }
        if !head.starts_with(checkpoint::MAGIC) {
            return Err(Error::format(path, "magic mismatch, neither a checkpoint nor a grid file"));
        }
        let (net, store) = load_model(path)?;
        Ok(Predictor::Model { net, store })
    }

    pub fn identity(size: usize) -> Self {
        Predictor::Fixed(WarpGrid::identity(size, size))
    }

    pub fn input_size(&self) -> usize {
        match self {
            Predictor::Model { net, .. } => net.config().input_size,
            Predictor::Fixed(g) => g.width(),
        }
    }

    /// `image` must already be `input_size` square.
    pub fn predict(&self, image: &Image) -> Result<Prediction> {
        let s = self.input_size();
        if (image.width(), image.height()) != (s, s) {
            return Err(Error::dim(format!(
                "predictor expects {s}x{s}, got {}x{}",
                image.width(),
                image.height()
            )));
        }
        match self {
            Predictor::Fixed(grid) => Ok(Prediction {
                grid: grid.clone(),
                edges: None,
            }),
            Predictor::Model { net, store } => {
                let mut g = Graph::inference();
                let x = g.input(image.to_rgb().to_tensor::<f32>());
                let out = net.forward(&mut g, store, x)?;
                let grid = WarpGrid::from_tensor(g.value(out.grid), 0)?;
                if !grid.all_finite() {
                    return Err(Error::Numeric("predicted grid is not finite".into()));
                }
                let edges = match out.edge_logits {
                    Some(l) => {
                        let p = g.sigmoid(l);
                        Some(Image::from_tensor(g.value(p), 0))
                    }
                    None => None,
                };
                Ok(Prediction { grid, edges })
            }
        }
    }
}

pub struct Rectified {
    pub image: Image,
    /// Grid the image was sampled with, at the output resolution.
    pub grid: WarpGrid,
    /// Grid at model resolution.
    pub model_grid: WarpGrid,
    pub edges: Option<Image>,
}

/// Resizes `photo` to the model input, predicts a grid and samples. With
/// `native` the grid is upsampled to the photo's size and the photo itself
/// is sampled; otherwise the output has the model's resolution.
pub fn rectify(predictor: &Predictor, photo: &Image, native: bool) -> Result<Rectified> {
    let s = predictor.input_size();
    let small = photo.resize(s, s);
    let pred = predictor.predict(&small)?;
    let (source, grid) = if native {
        (photo, upsample_grid(&pred.grid, photo.height(), photo.width())?)
    } else {
        (&small, pred.grid.clone())
    };
    let image = sample(source, &grid, &black(source.channels()))?;
    Ok(Rectified {
        image,
        grid,
        model_grid: pred.grid,
        edges: pred.edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{save_model, ModelConfig};

    fn photo(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |x, y, c| ((x * 7 + y * 3 + c * 50) % 256) as f32 / 255.0)
    }

    #[test]
    fn identity_stub_returns_resized_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("id.wgrd");
        WarpGrid::identity(64, 64).save(&path).unwrap();
        let p = Predictor::load(&path).unwrap();
        let img = photo(200, 150);
        let out = rectify(&p, &img, false).unwrap();
        assert_eq!(out.image, img.resize(64, 64));
        let native = rectify(&p, &img, true).unwrap();
        assert_eq!((native.image.width(), native.image.height()), (200, 150));
        assert!(native.image.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() < 1e-5));
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"JUNKJUNK").unwrap();
        assert!(matches!(Predictor::load(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn model_predictor_grid_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gbsu");
        let cfg = ModelConfig {
            input_size: 32,
            scale: 0.125,
            ..ModelConfig::default()
        };
        let (_, store) = Network::build(&cfg, 1).unwrap();
        save_model(&path, &cfg, &store).unwrap();
        let p = Predictor::load(&path).unwrap();
        let out = rectify(&p, &photo(90, 70), true).unwrap();
        assert_eq!((out.image.width(), out.image.height()), (90, 70));
        assert!(out.model_grid.coords().iter().all(|v| v.abs() < 1.0));
        assert_eq!(out.edges.as_ref().map(|e| e.width()), Some(32));
    }
}
