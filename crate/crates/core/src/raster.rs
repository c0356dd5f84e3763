//! Floating-point images (interleaved channels, values in `[0, 1]`) and PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Element, Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::dim(format!("{} values for a {width}x{height}x{channels} image", data.len())));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// ITU-R BT.601 luma; single-channel images are returned unchanged.
    pub fn to_gray(&self) -> Image {
        match self.channels {
            1 => self.clone(),
            3 | 4 => Image {
                width: self.width,
                height: self.height,
                channels: 1,
                data: self
                    .data
                    .chunks_exact(self.channels)
                    .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                    .collect(),
            },
            c => Image {
                width: self.width,
                height: self.height,
                channels: 1,
                data: self.data.chunks_exact(c).map(|p| p.iter().sum::<f32>() / c as f32).collect(),
            },
        }
    }

    pub fn to_rgb(&self) -> Image {
        match self.channels {
            3 => self.clone(),
            1 => Image {
                width: self.width,
                height: self.height,
                channels: 3,
                data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
            },
            _ => Image {
                width: self.width,
                height: self.height,
                channels: 3,
                data: self.data.chunks_exact(self.channels).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            },
        }
    }

    /// Rounds every value to the nearest multiple of 1/255 so PNG round trips are exact.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    /// Resizes with box averaging for integer downscale factors and
    /// half-pixel-centred bilinear interpolation otherwise.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        if width > 0
            && height > 0
            && self.width.is_multiple_of(width)
            && self.height.is_multiple_of(height)
            && self.width / width == self.height / height
        {
            return self.box_downscale(self.width / width);
        }
        let fy = self.height as f64 / height as f64;
        let fx = self.width as f64 / width as f64;
        let mut out = Image::filled(width, height, self.channels, 0.0);
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * fy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = (sy - y0 as f64) as f32;
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * fx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = (sx - x0 as f64) as f32;
                for c in 0..self.channels {
                    let top = self.get(x0, y0, c) * (1.0 - tx) + self.get(x1, y0, c) * tx;
                    let bot = self.get(x0, y1, c) * (1.0 - tx) + self.get(x1, y1, c) * tx;
                    out.set(x, y, c, top * (1.0 - ty) + bot * ty);
                }
            }
        }
        out
    }

    fn box_downscale(&self, factor: usize) -> Image {
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f32;
        let mut out = Image::filled(w, h, self.channels, 0.0);
        for y in 0..h {
            for x in 0..w {
                for c in 0..self.channels {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += self.get(x * factor + dx, y * factor + dy, c);
                        }
                    }
                    out.set(x, y, c, acc * norm);
                }
            }
        }
        out
    }

    /// `1 x C x H x W` tensor.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::from_fn(Shape::new(1, self.channels, self.height, self.width), |_, c, y, x| {
            T::from_f64(self.get(x, y, c) as f64)
        })
    }

    /// Reads batch item `b` of a `B x C x H x W` tensor.
    pub fn from_tensor<T: Element>(t: &Tensor<T>, b: usize) -> Image {
        let s = t.shape();
        Image::from_fn(s.width, s.height, s.channels, |x, y, c| t.at(b, c, y, x).as_f64() as f32)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let img = image::open(path.as_ref())?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(Image {
            width: w as usize,
            height: h as usize,
            channels: 3,
            data: rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        })
    }

    pub fn load_gray_png(path: impl AsRef<Path>) -> Result<Image> {
        let img = image::open(path.as_ref())?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        Ok(Image {
            width: w as usize,
            height: h as usize,
            channels: 1,
            data: gray.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        })
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            4 => image::ExtendedColorType::Rgba8,
            c => return Err(Error::Usage(format!("cannot write a {c}-channel PNG"))),
        };
        image::save_buffer_with_format(path.as_ref(), &self.to_u8(), w, h, color, image::ImageFormat::Png)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_weights() {
        let img = Image::from_vec(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((img.to_gray().get(0, 0, 0) - 0.299).abs() < 1e-7);
    }

    #[test]
    fn png_roundtrip_of_quantized_image_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::from_fn(7, 5, 3, |x, y, c| ((x * 31 + y * 17 + c * 5) % 256) as f32 / 255.0);
        img.quantize();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p).unwrap(), img);

        let mut gray = Image::from_fn(4, 4, 1, |x, y, _| ((x + y) % 2) as f32);
        gray.quantize();
        gray.save_png(dir.path().join("g.png")).unwrap();
        assert_eq!(Image::load_gray_png(dir.path().join("g.png")).unwrap(), gray);
    }

    #[test]
    fn resize_box_and_bilinear() {
        let img = Image::from_fn(4, 4, 1, |x, y, _| (x + 4 * y) as f32);
        let half = img.resize(2, 2);
        assert_eq!(half.data(), &[2.5, 4.5, 10.5, 12.5]);
        let constant = Image::filled(5, 3, 3, 0.4);
        assert!(constant.resize(8, 7).data().iter().all(|v| (v - 0.4).abs() < 1e-6));
    }
}
