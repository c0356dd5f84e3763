//! Dense warp grids: sampling, resizing, composition, inversion and file I/O.
//!
//! Coordinates are normalized with the align-corners-true convention: `-1`
//! and `+1` hit the centres of the first and last pixel of the source image.
//! A grid stores, for every output pixel, where to read from (a backward map).

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{Element, Shape, Tensor};
use crate::raster::Image;

/// Coordinate pair marking an output pixel with no source ("off-document").
pub const MARKER: [f32; 2] = [-2.0, -2.0];

const WGRD_MAGIC: &[u8; 4] = b"WGRD";
const WGRD_VERSION: u16 = 1;

/// Distance (pixels) within which a read snaps to the nearest pixel centre.
const SNAP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct WarpGrid {
    height: usize,
    width: usize,
    coords: Vec<f32>,
}

#[inline]
pub fn to_pixel(v: f64, size: usize) -> f64 {
    (v + 1.0) * 0.5 * (size as f64 - 1.0)
}

#[inline]
pub fn to_normalized(p: f64, size: usize) -> f64 {
    if size <= 1 {
        0.0
    } else {
        2.0 * p / (size as f64 - 1.0) - 1.0
    }
}

fn is_marker(x: f32, y: f32) -> bool {
    x <= -1.5 && y <= -1.5
}

impl WarpGrid {
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 2]) -> Self {
        let mut coords = Vec::with_capacity(height * width * 2);
        for i in 0..height {
            for j in 0..width {
                coords.extend_from_slice(&f(i, j));
            }
        }
        WarpGrid { height, width, coords }
    }

    pub fn from_vec(height: usize, width: usize, coords: Vec<f32>) -> Result<Self> {
        if coords.len() != height * width * 2 {
            return Err(Error::dim(format!("{} coordinates for a {height}x{width} grid", coords.len())));
        }
        Ok(WarpGrid { height, width, coords })
    }

    pub fn identity(height: usize, width: usize) -> Self {
        WarpGrid::from_fn(height, width, |i, j| {
            [to_normalized(j as f64, width) as f32, to_normalized(i as f64, height) as f32]
        })
    }

    pub fn constant(height: usize, width: usize, x: f32, y: f32) -> Self {
        WarpGrid::from_fn(height, width, |_, _| [x, y])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coords(&self) -> &[f32] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f32] {
        &mut self.coords
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> [f32; 2] {
        let k = 2 * (i * self.width + j);
        [self.coords[k], self.coords[k + 1]]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: [f32; 2]) {
        let k = 2 * (i * self.width + j);
        self.coords[k] = v[0];
        self.coords[k + 1] = v[1];
    }

    pub fn is_marker(&self, i: usize, j: usize) -> bool {
        let [x, y] = self.get(i, j);
        is_marker(x, y)
    }

    pub fn all_finite(&self) -> bool {
        self.coords.iter().all(|v| v.is_finite())
    }

    /// Largest per-coordinate difference, ignoring pixels where either grid is a marker.
    pub fn max_abs_diff(&self, other: &WarpGrid) -> Option<f64> {
        if (self.height, self.width) != (other.height, other.width) {
            return None;
        }
        let mut m = 0.0f64;
        for (a, b) in self.coords.chunks_exact(2).zip(other.coords.chunks_exact(2)) {
            if is_marker(a[0], a[1]) || is_marker(b[0], b[1]) {
                continue;
            }
            m = m.max((a[0] as f64 - b[0] as f64).abs()).max((a[1] as f64 - b[1] as f64).abs());
        }
        Some(m)
    }

    /// Largest Euclidean displacement in pixels of this grid from the identity,
    /// measured on a `size x size` frame, skipping markers.
    pub fn max_identity_error_px(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.height {
            for j in 0..self.width {
                if self.is_marker(i, j) {
                    continue;
                }
                let [x, y] = self.get(i, j);
                let dx = to_pixel(x as f64, self.width) - j as f64;
                let dy = to_pixel(y as f64, self.height) - i as f64;
                m = m.max(dx.hypot(dy));
            }
        }
        m
    }

    /// `1 x 2 x H x W` tensor with channel 0 = x, channel 1 = y.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::from_fn(Shape::new(1, 2, self.height, self.width), |_, c, y, x| {
            T::from_f64(self.coords[2 * (y * self.width + x) + c] as f64)
        })
    }

    /// Reads batch item `b` of a `B x 2 x H x W` tensor.
    pub fn from_tensor<T: Element>(t: &Tensor<T>, b: usize) -> Result<Self> {
        let s = t.shape();
        if s.channels != 2 || b >= s.batch {
            return Err(Error::dim(format!("cannot read grid {b} from tensor {s}")));
        }
        Ok(WarpGrid::from_fn(s.height, s.width, |i, j| {
            [t.at(b, 0, i, j).as_f64() as f32, t.at(b, 1, i, j).as_f64() as f32]
        }))
    }

    /// Bilinear evaluation at a continuous pixel position of this grid's lattice.
    /// Marker corners are dropped and the remaining weights renormalized;
    /// `None` when the position is outside the lattice or only markers contribute.
    pub fn interpolate(&self, px: f64, py: f64) -> Option<[f64; 2]> {
        let (w, h) = (self.width, self.height);
        let eps = 1e-6;
        if !(px >= -eps && py >= -eps && px <= (w - 1) as f64 + eps && py <= (h - 1) as f64 + eps) {
            return None;
        }
        let px = px.clamp(0.0, (w - 1) as f64);
        let py = py.clamp(0.0, (h - 1) as f64);
        let x0 = (px.floor() as usize).min(w.saturating_sub(2));
        let y0 = (py.floor() as usize).min(h.saturating_sub(2));
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let tx = px - x0 as f64;
        let ty = py - y0 as f64;
        let corners = [
            (y0, x0, (1.0 - tx) * (1.0 - ty)),
            (y0, x1, tx * (1.0 - ty)),
            (y1, x0, (1.0 - tx) * ty),
            (y1, x1, tx * ty),
        ];
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for (i, j, wt) in corners {
            if wt <= 0.0 {
                continue;
            }
            let [cx, cy] = self.get(i, j);
            if is_marker(cx, cy) {
                continue;
            }
            sx += wt * cx as f64;
            sy += wt * cy as f64;
            sw += wt;
        }
        if sw < 1e-9 {
            return None;
        }
        Some([sx / sw, sy / sw])
    }

    /// [`interpolate`](Self::interpolate) at normalized coordinates.
    pub fn interpolate_normalized(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        self.interpolate(to_pixel(x, self.width), to_pixel(y, self.height))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(14 + self.coords.len() * 4);
        buf.extend_from_slice(WGRD_MAGIC);
        buf.extend_from_slice(&WGRD_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        for v in &self.coords {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        WarpGrid::decode(&fs::read(path)?, path)
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < 14 || &bytes[..4] != WGRD_MAGIC {
            return Err(Error::format(origin, "magic mismatch, not a WGRD grid"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != WGRD_VERSION {
            return Err(Error::format(origin, format!("unsupported grid version {version}")));
        }
        let h = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let payload = &bytes[14..];
        if payload.len() != h * w * 8 {
            return Err(Error::format(
                origin,
                format!("expected {} payload bytes for {h}x{w}, found {}", h * w * 8, payload.len()),
            ));
        }
        let coords = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(WarpGrid {
            height: h,
            width: w,
            coords,
        })
    }

    /// True when `bytes` start with the grid file magic.
    pub fn sniff(bytes: &[u8]) -> bool {
        bytes.starts_with(WGRD_MAGIC)
    }
}

fn snap(p: f64) -> f64 {
    let r = p.round();
    if (p - r).abs() < SNAP {
        r
    } else {
        p
    }
}

/// Bilinear read of `source` at normalized `(x, y)`; `None` outside the image.
pub fn read_bilinear(source: &Image, x: f64, y: f64, out: &mut [f32]) -> bool {
    let (w, h) = (source.width(), source.height());
    let px = snap(to_pixel(x, w));
    let py = snap(to_pixel(y, h));
    let eps = 1e-6;
    if !(px >= -eps && py >= -eps && px <= (w - 1) as f64 + eps && py <= (h - 1) as f64 + eps) {
        return false;
    }
    let px = px.clamp(0.0, (w - 1) as f64);
    let py = py.clamp(0.0, (h - 1) as f64);
    let x0 = px.floor() as usize;
    let y0 = py.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = (px - x0 as f64) as f32;
    let ty = (py - y0 as f64) as f32;
    for (c, o) in out.iter_mut().enumerate() {
        let top = source.get(x0, y0, c) * (1.0 - tx) + source.get(x1, y0, c) * tx;
        let bot = source.get(x0, y1, c) * (1.0 - tx) + source.get(x1, y1, c) * tx;
        *o = top * (1.0 - ty) + bot * ty;
    }
    true
}

/// Resamples `source` through `grid`; reads outside the source (and markers) take `fill`.
pub fn sample(source: &Image, grid: &WarpGrid, fill: &[f32]) -> Result<Image> {
    if source.is_empty() || grid.coords.is_empty() {
        return Err(Error::Usage("cannot sample with an empty image or grid".into()));
    }
    if fill.len() != source.channels() {
        return Err(Error::Usage(format!(
            "fill has {} channels, image has {}",
            fill.len(),
            source.channels()
        )));
    }
    if !grid.all_finite() {
        return Err(Error::Numeric("grid contains non-finite coordinates".into()));
    }
    let ch = source.channels();
    let mut out = Image::filled(grid.width, grid.height, ch, 0.0);
    out.data_mut().par_chunks_mut(grid.width * ch).enumerate().for_each(|(i, row)| {
        for j in 0..grid.width {
            let [x, y] = grid.get(i, j);
            let px = &mut row[j * ch..(j + 1) * ch];
            if is_marker(x, y) || !read_bilinear(source, x as f64, y as f64, px) {
                px.copy_from_slice(fill);
            }
        }
    });
    Ok(out)
}

/// Black for any channel count.
pub fn black(channels: usize) -> Vec<f32> {
    vec![0.0; channels]
}

/// Bilinear (align-corners-true) resize of each coordinate channel.
pub fn upsample_grid(grid: &WarpGrid, height: usize, width: usize) -> Result<WarpGrid> {
    if height < 2 || width < 2 || grid.height < 2 || grid.width < 2 {
        return Err(Error::dim(format!(
            "grid resize needs at least 2x2 on both sides ({}x{} -> {height}x{width})",
            grid.height, grid.width
        )));
    }
    if (height, width) == (grid.height, grid.width) {
        return Ok(grid.clone());
    }
    let fy = (grid.height - 1) as f64 / (height - 1) as f64;
    let fx = (grid.width - 1) as f64 / (width - 1) as f64;
    let mut out = WarpGrid::constant(height, width, 0.0, 0.0);
    out.coords.par_chunks_mut(width * 2).enumerate().for_each(|(i, row)| {
        for j in 0..width {
            let v = grid
                .interpolate(j as f64 * fx, i as f64 * fy)
                .map(|[x, y]| [x as f32, y as f32])
                .unwrap_or(MARKER);
            row[2 * j] = v[0];
            row[2 * j + 1] = v[1];
        }
    });
    Ok(out)
}

/// Same operation as [`upsample_grid`], for any target size.
pub fn resize_grid(grid: &WarpGrid, height: usize, width: usize) -> Result<WarpGrid> {
    upsample_grid(grid, height, width)
}

/// `result(i,j) = inner` evaluated bilinearly at `outer(i,j)`.
/// Pixels where `outer` is a marker or leaves `inner`'s domain become markers.
pub fn compose(outer: &WarpGrid, inner: &WarpGrid) -> WarpGrid {
    let mut out = WarpGrid::constant(outer.height, outer.width, 0.0, 0.0);
    for i in 0..outer.height {
        for j in 0..outer.width {
            let [x, y] = outer.get(i, j);
            let v = if is_marker(x, y) {
                MARKER
            } else {
                inner
                    .interpolate_normalized(x as f64, y as f64)
                    .map(|[a, b]| [a as f32, b as f32])
                    .unwrap_or(MARKER)
            };
            out.set(i, j, v);
        }
    }
    out
}

/// Parameters of [`invert_grid_with`].
#[derive(Clone, Copy, Debug)]
pub struct InvertConfig {
    pub max_hole_fraction: f64,
    pub fill_iterations: usize,
    pub fill_tolerance: f64,
    pub newton_iterations: usize,
}

impl Default for InvertConfig {
    fn default() -> Self {
        InvertConfig {
            max_hole_fraction: 0.05,
            fill_iterations: 500,
            fill_tolerance: 1e-4,
            newton_iterations: 20,
        }
    }
}

pub fn invert_grid(forward: &WarpGrid) -> Result<WarpGrid> {
    invert_grid_with(forward, &InvertConfig::default())
}

/// Inverts a forward map on the same lattice size.
///
/// Each forward sample is splatted into the inverse lattice with bilinear
/// weights and the accumulated coordinates are normalized. Pixels covered by
/// the forward footprint but never reached are filled by neighbour averaging,
/// then every footprint pixel is polished with Newton steps against the
/// bilinear forward map. Pixels outside the footprint become [`MARKER`].
pub fn invert_grid_with(forward: &WarpGrid, cfg: &InvertConfig) -> Result<WarpGrid> {
    let (h, w) = (forward.height, forward.width);
    if h < 2 || w < 2 {
        return Err(Error::dim("grid inversion needs at least 2x2"));
    }
    if !forward.all_finite() {
        return Err(Error::Numeric("forward grid contains non-finite coordinates".into()));
    }
    let n = h * w;

    let mut acc = vec![[0.0f64; 2]; n];
    let mut weight = vec![0.0f64; n];
    for i in 0..h {
        for j in 0..w {
            let [fx, fy] = forward.get(i, j);
            if is_marker(fx, fy) {
                continue;
            }
            let px = to_pixel(fx as f64, w);
            let py = to_pixel(fy as f64, h);
            let x0 = px.floor();
            let y0 = py.floor();
            let src = [to_normalized(j as f64, w), to_normalized(i as f64, h)];
            for (dy, dx) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                let (cx, cy) = (x0 + dx, y0 + dy);
                if cx < 0.0 || cy < 0.0 || cx > (w - 1) as f64 || cy > (h - 1) as f64 {
                    continue;
                }
                let wt = (1.0 - (px - cx).abs()) * (1.0 - (py - cy).abs());
                if wt <= 0.0 {
                    continue;
                }
                let k = cy as usize * w + cx as usize;
                acc[k][0] += wt * src[0];
                acc[k][1] += wt * src[1];
                weight[k] += wt;
            }
        }
    }

    let footprint = rasterize_footprint(forward);
    let covered = footprint.iter().filter(|&&f| f).count();
    if covered == 0 {
        return Err(Error::DegenerateWarp("forward map covers no pixel of the frame".into()));
    }
    let mut known = vec![false; n];
    let mut est = vec![[0.0f64; 2]; n];
    let mut holes = Vec::new();
    for k in 0..n {
        if !footprint[k] {
            continue;
        }
        if weight[k] > 1e-9 {
            known[k] = true;
            est[k] = [acc[k][0] / weight[k], acc[k][1] / weight[k]];
        } else {
            holes.push(k);
        }
    }
    let hole_fraction = holes.len() as f64 / covered as f64;
    if hole_fraction > cfg.max_hole_fraction {
        return Err(Error::DegenerateWarp(format!(
            "{:.1}% of the inverse footprint unfilled after splatting",
            100.0 * hole_fraction
        )));
    }

    // A one-pixel ring around the footprint is solved too (by extrapolating the
    // forward map) so bilinear reads at the document edge see real neighbours.
    let region = dilate(&footprint, w, h);
    holes.extend((0..n).filter(|&k| region[k] && !footprint[k]));

    // Jacobi neighbour averaging over the holes.
    for &k in &holes {
        est[k] = [to_normalized((k % w) as f64, w), to_normalized((k / w) as f64, h)];
    }
    for _ in 0..cfg.fill_iterations {
        let prev = est.clone();
        let mut max_update = 0.0f64;
        for &k in &holes {
            let (i, j) = (k / w, k % w);
            let mut s = [0.0, 0.0];
            let mut cnt = 0.0;
            let mut visit = |kk: usize| {
                if region[kk] {
                    s[0] += prev[kk][0];
                    s[1] += prev[kk][1];
                    cnt += 1.0;
                }
            };
            if i > 0 {
                visit(k - w);
            }
            if i + 1 < h {
                visit(k + w);
            }
            if j > 0 {
                visit(k - 1);
            }
            if j + 1 < w {
                visit(k + 1);
            }
            if cnt > 0.0 {
                let v = [s[0] / cnt, s[1] / cnt];
                max_update = max_update.max((v[0] - prev[k][0]).abs()).max((v[1] - prev[k][1]).abs());
                est[k] = v;
            }
        }
        if max_update < cfg.fill_tolerance {
            break;
        }
    }

    let mut out = WarpGrid::constant(h, w, MARKER[0], MARKER[1]);
    out.coords.par_chunks_mut(w * 2).enumerate().for_each(|(i, row)| {
        for j in 0..w {
            let k = i * w + j;
            if !region[k] {
                continue;
            }
            let target = [j as f64, i as f64];
            let start = [to_pixel(est[k][0], w), to_pixel(est[k][1], h)];
            let p = newton_refine(forward, target, start, cfg.newton_iterations);
            row[2 * j] = to_normalized(p[0], w) as f32;
            row[2 * j + 1] = to_normalized(p[1], h) as f32;
        }
    });
    Ok(out)
}

/// Forward map in pixel units of the frame, with its Jacobian, at a
/// continuous lattice position.
fn forward_eval(forward: &WarpGrid, p: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let (h, w) = (forward.height, forward.width);
    let x0 = (p[0].floor() as usize).min(w - 2);
    let y0 = (p[1].floor() as usize).min(h - 2);
    let tx = p[0] - x0 as f64;
    let ty = p[1] - y0 as f64;
    let at = |i: usize, j: usize| {
        let [x, y] = forward.get(i, j);
        [to_pixel(x as f64, w), to_pixel(y as f64, h)]
    };
    let f00 = at(y0, x0);
    let f10 = at(y0, x0 + 1);
    let f01 = at(y0 + 1, x0);
    let f11 = at(y0 + 1, x0 + 1);
    let mut v = [0.0; 2];
    let mut jac = [[0.0; 2]; 2];
    for c in 0..2 {
        v[c] = (1.0 - ty) * ((1.0 - tx) * f00[c] + tx * f10[c]) + ty * ((1.0 - tx) * f01[c] + tx * f11[c]);
        jac[c][0] = (1.0 - ty) * (f10[c] - f00[c]) + ty * (f11[c] - f01[c]);
        jac[c][1] = (1.0 - tx) * (f01[c] - f00[c]) + tx * (f11[c] - f10[c]);
    }
    (v, jac)
}

fn newton_refine(forward: &WarpGrid, target: [f64; 2], start: [f64; 2], iterations: usize) -> [f64; 2] {
    let (h, w) = (forward.height, forward.width);
    let clamp = |p: [f64; 2]| [p[0].clamp(-1.0, w as f64), p[1].clamp(-1.0, h as f64)];
    let mut p = clamp(start);
    let (v, _) = forward_eval(forward, p);
    let mut best = (p, (v[0] - target[0]).hypot(v[1] - target[1]));
    for _ in 0..iterations {
        let (v, jac) = forward_eval(forward, p);
        let r = [v[0] - target[0], v[1] - target[1]];
        let err = r[0].hypot(r[1]);
        if err < best.1 {
            best = (p, err);
        }
        if err < 1e-7 {
            break;
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det.abs() < 1e-12 {
            break;
        }
        let dx = (jac[1][1] * r[0] - jac[0][1] * r[1]) / det;
        let dy = (-jac[1][0] * r[0] + jac[0][0] * r[1]) / det;
        // Damp large jumps so a step cannot leave the neighbourhood of the estimate.
        let step = dx.hypot(dy);
        let k = if step > 2.0 { 2.0 / step } else { 1.0 };
        p = clamp([p[0] - k * dx, p[1] - k * dy]);
    }
    let (v, _) = forward_eval(forward, p);
    let err = (v[0] - target[0]).hypot(v[1] - target[1]);
    if err < best.1 {
        p
    } else {
        best.0
    }
}

fn dilate(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = mask.to_vec();
    for i in 0..h {
        for j in 0..w {
            if !mask[i * w + j] {
                continue;
            }
            for ii in i.saturating_sub(1)..=(i + 1).min(h - 1) {
                for jj in j.saturating_sub(1)..=(j + 1).min(w - 1) {
                    out[ii * w + jj] = true;
                }
            }
        }
    }
    out
}

/// Pixels of the frame whose centre lies inside the image of some forward cell.
fn rasterize_footprint(forward: &WarpGrid) -> Vec<bool> {
    let (h, w) = (forward.height, forward.width);
    let mut mask = vec![false; h * w];
    let px = |i: usize, j: usize| -> Option<[f64; 2]> {
        let [x, y] = forward.get(i, j);
        if is_marker(x, y) {
            None
        } else {
            Some([to_pixel(x as f64, w), to_pixel(y as f64, h)])
        }
    };
    for i in 0..h - 1 {
        for j in 0..w - 1 {
            let (Some(a), Some(b), Some(c), Some(d)) = (px(i, j), px(i, j + 1), px(i + 1, j), px(i + 1, j + 1)) else {
                continue;
            };
            fill_triangle(&mut mask, w, h, a, b, d);
            fill_triangle(&mut mask, w, h, a, d, c);
        }
    }
    mask
}

fn fill_triangle(mask: &mut [bool], w: usize, h: usize, a: [f64; 2], b: [f64; 2], c: [f64; 2]) {
    let min_x = a[0].min(b[0]).min(c[0]).ceil().max(0.0);
    let max_x = a[0].max(b[0]).max(c[0]).floor().min((w - 1) as f64);
    let min_y = a[1].min(b[1]).min(c[1]).ceil().max(0.0);
    let max_y = a[1].max(b[1]).max(c[1]).floor().min((h - 1) as f64);
    if min_x > max_x || min_y > max_y {
        return;
    }
    let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    if area.abs() < 1e-12 {
        return;
    }
    let tol = 1e-7 * area.abs();
    for y in min_y as usize..=max_y as usize {
        for x in min_x as usize..=max_x as usize {
            let p = [x as f64, y as f64];
            let e = |u: [f64; 2], v: [f64; 2]| ((v[0] - u[0]) * (p[1] - u[1]) - (v[1] - u[1]) * (p[0] - u[0])) * area.signum();
            if e(a, b) >= -tol && e(b, c) >= -tol && e(c, a) >= -tol {
                mask[y * w + x] = true;
            }
        }
    }
}

/// Non-marker pixels of a grid whose coordinates lie inside `[-1, 1]`.
pub fn valid_mask(grid: &WarpGrid) -> Vec<bool> {
    grid.coords
        .chunks_exact(2)
        .map(|c| !is_marker(c[0], c[1]) && c[0].abs() <= 1.0 + 1e-6 && c[1].abs() <= 1.0 + 1e-6)
        .collect()
}
