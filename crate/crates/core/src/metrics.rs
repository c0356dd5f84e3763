//! Image quality metrics: SSIM, per-level pyramid SSIM, MS-SSIM and grid-space
//! local distortion.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{valid_mask, WarpGrid};
use crate::raster::Image;

pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
/// Window used when a pyramid level is smaller than [`WINDOW`].
pub const FALLBACK_WINDOW: usize = 3;
pub const FALLBACK_SIGMA: f64 = 0.5;

/// Per-level weights, finest level first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const LEVELS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MsSsimMode {
    /// `sum w_j SSIM_j / sum w_j`.
    #[default]
    WeightedAverage,
    /// `prod cs_j^w_j * SSIM_5^w_5` with weights normalized to sum 1.
    Product,
}

/// Single-channel f64 plane.
#[derive(Clone, Debug)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn from_image(img: &Image) -> Plane {
        let g = img.to_gray();
        Plane {
            w: g.width(),
            h: g.height(),
            v: g.data().iter().map(|&x| x as f64).collect(),
        }
    }

    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&other.v).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable "valid" correlation.
fn filter_valid(p: &Plane, k: &[f64]) -> Plane {
    let n = k.len();
    let ow = p.w + 1 - n;
    let oh = p.h + 1 - n;
    let mut tmp = vec![0.0; p.h * ow];
    for y in 0..p.h {
        let row = &p.v[y * p.w..(y + 1) * p.w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + t) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    Plane { w: ow, h: oh, v: out }
}

/// SSIM and contrast-structure maps over every valid window position.
fn ssim_maps(a: &Plane, b: &Plane, size: usize, sigma: f64) -> (Plane, Plane) {
    let k = gaussian_window(size, sigma);
    let mu_a = filter_valid(a, &k);
    let mu_b = filter_valid(b, &k);
    let aa = filter_valid(&a.map2(a, |x, _| x * x), &k);
    let bb = filter_valid(&b.map2(b, |x, _| x * x), &k);
    let ab = filter_valid(&a.map2(b, |x, y| x * y), &k);
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let n = mu_a.v.len();
    let mut s = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    for i in 0..n {
        let (ma, mb) = (mu_a.v[i], mu_b.v[i]);
        let va = aa.v[i] - ma * ma;
        let vb = bb.v[i] - mb * mb;
        let cov = ab.v[i] - ma * mb;
        let c = (2.0 * cov + c2) / (va + vb + c2);
        cs.push(c);
        s.push((2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1) * c);
    }
    (
        Plane {
            w: mu_a.w,
            h: mu_a.h,
            v: s,
        },
        Plane {
            w: mu_a.w,
            h: mu_a.h,
            v: cs,
        },
    )
}

fn window_for(w: usize, h: usize) -> Result<(usize, f64)> {
    let side = w.min(h);
    if side >= WINDOW {
        Ok((WINDOW, SIGMA))
    } else if side >= FALLBACK_WINDOW {
        Ok((FALLBACK_WINDOW, FALLBACK_SIGMA))
    } else {
        Err(Error::Metric(format!("{w}x{h} image is too small for SSIM")))
    }
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::dim(format!(
            "SSIM of {}x{} against {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ssim_planes(a: &Plane, b: &Plane) -> Result<(f64, f64)> {
    let (size, sigma) = window_for(a.w, a.h)?;
    let (s, cs) = ssim_maps(a, b, size, sigma);
    Ok((mean(&s.v), mean(&cs.v)))
}

/// Mean SSIM over all valid 11x11 windows (3x3 for images with a side below
/// 11). Colour images are converted to luma first.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    Ok(ssim_planes(&Plane::from_image(a), &Plane::from_image(b))?.0)
}

/// Mean SSIM over the windows whose centre pixel is set in `mask`.
pub fn ssim_masked(a: &Image, b: &Image, mask: &[bool]) -> Result<f64> {
    check_pair(a, b)?;
    if mask.len() != a.width() * a.height() {
        return Err(Error::dim("mask size does not match the images"));
    }
    let (pa, pb) = (Plane::from_image(a), Plane::from_image(b));
    let (size, sigma) = window_for(pa.w, pa.h)?;
    let (s, _) = ssim_maps(&pa, &pb, size, sigma);
    let r = size / 2;
    let mut acc = 0.0;
    let mut n = 0usize;
    for y in 0..s.h {
        for x in 0..s.w {
            if mask[(y + r) * pa.w + x + r] {
                acc += s.v[y * s.w + x];
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Metric("mask selects no SSIM window".into()));
    }
    Ok(acc / n as f64)
}

/// 5-tap binomial blur (edge-clamped) followed by 2x decimation.
fn downsample(p: &Plane) -> Plane {
    const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let at = |v: &[f64], w: usize, x: isize, y: isize, h: usize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        v[y * w + x]
    };
    let mut tmp = vec![0.0; p.w * p.h];
    for y in 0..p.h {
        for x in 0..p.w {
            tmp[y * p.w + x] = (0..5)
                .map(|t| K[t] * at(&p.v, p.w, x as isize + t as isize - 2, y as isize, p.h))
                .sum();
        }
    }
    let (ow, oh) = (p.w.div_ceil(2), p.h.div_ceil(2));
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let (sx, sy) = (2 * x as isize, 2 * y as isize);
            out.push((0..5).map(|t| K[t] * at(&tmp, p.w, sx, sy + t as isize - 2, p.h)).sum());
        }
    }
    Plane { w: ow, h: oh, v: out }
}

fn pyramid(a: &Image, b: &Image, levels: usize) -> Result<Vec<(f64, f64)>> {
    check_pair(a, b)?;
    let mut pa = Plane::from_image(a);
    let mut pb = Plane::from_image(b);
    let mut out = Vec::with_capacity(levels);
    for level in 0..levels {
        if level > 0 {
            pa = downsample(&pa);
            pb = downsample(&pb);
        }
        out.push(ssim_planes(&pa, &pb).map_err(|e| Error::Metric(format!("pyramid level {}: {e}", level + 1)))?);
    }
    Ok(out)
}

/// SSIM at each pyramid level; level 1 is the original resolution.
pub fn pyramid_ssim(a: &Image, b: &Image, levels: usize) -> Result<Vec<f64>> {
    Ok(pyramid(a, b, levels)?.into_iter().map(|(s, _)| s).collect())
}

/// Combines five per-level SSIM values with [`MS_SSIM_WEIGHTS`].
pub fn weighted_average(levels: &[f64]) -> f64 {
    let total: f64 = MS_SSIM_WEIGHTS.iter().sum();
    levels.iter().zip(MS_SSIM_WEIGHTS).map(|(s, w)| s * w).sum::<f64>() / total
}

pub fn ms_ssim(a: &Image, b: &Image) -> Result<f64> {
    ms_ssim_with(a, b, MsSsimMode::WeightedAverage)
}

pub fn ms_ssim_with(a: &Image, b: &Image, mode: MsSsimMode) -> Result<f64> {
    let levels = pyramid(a, b, LEVELS)?;
    Ok(match mode {
        MsSsimMode::WeightedAverage => weighted_average(&levels.iter().map(|l| l.0).collect::<Vec<_>>()),
        MsSsimMode::Product => {
            let total: f64 = MS_SSIM_WEIGHTS.iter().sum();
            levels
                .iter()
                .enumerate()
                .map(|(j, &(s, cs))| {
                    let v = if j + 1 == LEVELS { s } else { cs };
                    v.max(0.0).powf(MS_SSIM_WEIGHTS[j] / total)
                })
                .product()
        }
    })
}

/// Mean Euclidean distance in pixels between two dewarp grids over the
/// ground truth's in-frame region. One pixel is `2 / W` normalized units.
pub fn local_distortion(pred: &WarpGrid, gt: &WarpGrid) -> Result<f64> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::dim(format!(
            "grids {}x{} and {}x{} differ",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let sx = gt.width() as f64 / 2.0;
    let sy = gt.height() as f64 / 2.0;
    let region = valid_mask(gt);
    let mut acc = 0.0;
    let mut n = 0usize;
    for (k, (p, g)) in pred.coords().chunks_exact(2).zip(gt.coords().chunks_exact(2)).enumerate() {
        if !region[k] {
            continue;
        }
        let dx = (p[0] as f64 - g[0] as f64) * sx;
        let dy = (p[1] as f64 - g[1] as f64) * sy;
        acc += dx.hypot(dy);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Metric("ground-truth grid has no in-frame pixel".into()));
    }
    Ok(acc / n as f64)
}

/// Metrics for one rectified image.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub ssim_levels: [f64; LEVELS],
    pub ms_ssim: f64,
    pub ld: Option<f64>,
}

impl MetricsReport {
    pub fn compute(rectified: &Image, flat: &Image, grids: Option<(&WarpGrid, &WarpGrid)>) -> Result<Self> {
        let levels = pyramid_ssim(rectified, flat, LEVELS)?;
        let ld = match grids {
            Some((pred, gt)) => Some(local_distortion(pred, gt)?),
            None => None,
        };
        Ok(MetricsReport {
            ssim_levels: levels.clone().try_into().unwrap(),
            ms_ssim: weighted_average(&levels),
            ld,
        })
    }

    /// Element-wise mean; LD is averaged over the reports that have it.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let mut levels = [0.0; LEVELS];
        for r in reports {
            for (l, v) in levels.iter_mut().zip(r.ssim_levels) {
                *l += v / n;
            }
        }
        let lds: Vec<f64> = reports.iter().filter_map(|r| r.ld).collect();
        Some(MetricsReport {
            ssim_levels: levels,
            ms_ssim: reports.iter().map(|r| r.ms_ssim).sum::<f64>() / n,
            ld: (!lds.is_empty()).then(|| mean(&lds)),
        })
    }
}

pub const CSV_HEADER: &str = "sample,ssim_l1,ssim_l2,ssim_l3,ssim_l4,ssim_l5,ms_ssim,ld";

pub fn csv_row(sample: &str, r: &MetricsReport) -> String {
    let mut s = sample.to_string();
    for v in r.ssim_levels {
        s.push_str(&format!(",{v:.6}"));
    }
    s.push_str(&format!(",{:.6},", r.ms_ssim));
    if let Some(ld) = r.ld {
        s.push_str(&format!("{ld:.6}"));
    }
    s
}

pub fn write_csv(mut out: impl Write, rows: &[(String, MetricsReport)]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for (name, r) in rows {
        writeln!(out, "{}", csv_row(name, r))?;
    }
    Ok(())
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.ssim_levels.iter().enumerate() {
            writeln!(f, "ssim level {}  {v:.4}", i + 1)?;
        }
        write!(f, "ms-ssim        {:.4}", self.ms_ssim)?;
        if let Some(ld) = self.ld {
            write!(f, "\nld (px)        {ld:.3}")?;
        }
        Ok(())
    }
}
