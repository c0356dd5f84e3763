//! Built-in procedural flat pages and background textures, so datasets can be
//! generated without any external images.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::raster::Image;

fn fill_rect(img: &mut Image, x0: usize, y0: usize, x1: usize, y1: usize, color: [f32; 3]) {
    let x1 = x1.min(img.width());
    let y1 = y1.min(img.height());
    for y in y0..y1 {
        for x in x0..x1 {
            img.pixel_mut(x, y).copy_from_slice(&color);
        }
    }
}

/// Light paper with paragraphs of word-like bars, the occasional figure
/// block and horizontal rules.
pub fn synthetic_page(size: usize, rng: &mut impl Rng) -> Image {
    let unit = size as f64 / 256.0;
    let px = |v: f64| ((v * unit).round() as usize).max(1);
    let tint: f32 = rng.gen_range(0.90..1.0);
    let paper = [tint, tint * rng.gen_range(0.97..1.0), tint * rng.gen_range(0.93..1.0)];
    let mut img = Image::from_fn(size, size, 3, |_, _, c| paper[c]);

    let margin = px(rng.gen_range(14.0..26.0));
    let right = size - margin;
    let bottom = size - margin;
    let mut y = margin;
    while y < bottom {
        let ink: f32 = rng.gen_range(0.0..0.3);
        let ink = [ink, ink, (ink * rng.gen_range(1.0f32..1.4)).min(1.0)];
        match rng.gen_range(0..10) {
            0 => {
                let h = px(rng.gen_range(20.0..50.0));
                let w = rng.gen_range((right - margin) / 3..=right - margin);
                let x0 = margin + rng.gen_range(0..=(right - margin - w));
                let shade: f32 = rng.gen_range(0.35..0.8);
                fill_rect(&mut img, x0, y, x0 + w, (y + h).min(bottom), [shade, shade * 0.95, shade * 0.9]);
                y += h + px(8.0);
            }
            1 => {
                let t = px(rng.gen_range(1.0..2.5));
                fill_rect(&mut img, margin, y, right, (y + t).min(bottom), ink);
                y += t + px(8.0);
            }
            _ => {
                let line_h = px(rng.gen_range(7.0..10.0));
                let glyph_h = ((line_h as f64 * rng.gen_range(0.5..0.7)).round() as usize).max(1);
                let lines = rng.gen_range(2..7);
                for l in 0..lines {
                    if y + glyph_h >= bottom {
                        break;
                    }
                    let indent = if l == 0 { px(rng.gen_range(0.0..12.0)) } else { 0 };
                    let end = if l + 1 == lines {
                        margin + (right - margin) * rng.gen_range(30..90) / 100
                    } else {
                        right
                    };
                    let mut x = margin + indent;
                    while x < end {
                        let w = px(rng.gen_range(5.0..22.0));
                        fill_rect(&mut img, x, y, (x + w).min(end), y + glyph_h, ink);
                        x += w + px(rng.gen_range(3.0..5.0));
                    }
                    y += line_h;
                }
                y += px(rng.gen_range(4.0..10.0));
            }
        }
    }
    img
}

/// Smooth value noise in `[0, 1]` with `cells` control points per side.
fn value_noise(size: usize, cells: usize, rng: &mut impl Rng) -> Image {
    let coarse = Image::from_fn(cells, cells, 1, |_, _, _| rng.gen_range(0.0..1.0));
    coarse.resize(size, size)
}

/// Background texture: blotchy noise, wood-like stripes or tiles.
pub fn synthetic_texture(size: usize, rng: &mut impl Rng) -> Image {
    let mut color = || -> [f32; 3] { [rng.gen_range(0.0..0.7), rng.gen_range(0.0..0.7), rng.gen_range(0.0..0.7)] };
    let a = color();
    let b = color();
    match rng.gen_range(0..3) {
        0 => {
            let cells = rng.gen_range(4..16);
            let n = value_noise(size, cells, rng);
            Image::from_fn(size, size, 3, |x, y, c| {
                let t = n.get(x, y, 0);
                a[c] * (1.0 - t) + b[c] * t
            })
        }
        1 => {
            let freq: f32 = rng.gen_range(0.05..0.3);
            let angle: f32 = rng.gen_range(0.0..std::f32::consts::PI);
            let n = value_noise(size, 6, rng);
            let (s, co) = angle.sin_cos();
            Image::from_fn(size, size, 3, |x, y, c| {
                let u = x as f32 * co + y as f32 * s;
                let t = 0.5 + 0.5 * (u * freq + 4.0 * n.get(x, y, 0)).sin();
                a[c] * (1.0 - t) + b[c] * t
            })
        }
        _ => {
            let tile = rng.gen_range(8..48);
            let grout = rng.gen_range(1..3);
            Image::from_fn(size, size, 3, |x, y, c| {
                if x % tile < grout || y % tile < grout {
                    b[c] * 0.5
                } else if (x / tile + y / tile) % 2 == 0 {
                    a[c]
                } else {
                    a[c] * 0.8 + b[c] * 0.2
                }
            })
        }
    }
}

/// Where flat pages or textures come from.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageSource {
    Builtin,
    Directory(Vec<PathBuf>),
}

impl ImageSource {
    /// PNG files of `dir` in name order; an empty or unreadable directory is an error.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::format(dir, format!("cannot list directory: {e}")))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::format(dir, "no PNG images found"));
        }
        Ok(ImageSource::Directory(files))
    }

    /// Produces one image and a label identifying it for the manifest.
    pub fn pick(&self, size: usize, page: bool, rng: &mut impl Rng) -> Result<(Image, String)> {
        match self {
            ImageSource::Builtin => {
                let img = if page {
                    synthetic_page(size, rng)
                } else {
                    synthetic_texture(size, rng)
                };
                Ok((img, "builtin".into()))
            }
            ImageSource::Directory(files) => {
                let path = &files[rng.gen_range(0..files.len())];
                let img = Image::load_png(path)?;
                Ok((img, path.display().to_string()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generators_are_deterministic_and_in_range() {
        for seed in 0..6 {
            let a = synthetic_page(128, &mut ChaCha8Rng::seed_from_u64(seed));
            let b = synthetic_page(128, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(a, b);
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let t = synthetic_texture(64, &mut ChaCha8Rng::seed_from_u64(seed));
            assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn page_has_ink() {
        let page = synthetic_page(256, &mut ChaCha8Rng::seed_from_u64(3));
        let dark = page.to_gray().data().iter().filter(|&&v| v < 0.5).count();
        assert!(dark > 500, "{dark}");
    }
}
