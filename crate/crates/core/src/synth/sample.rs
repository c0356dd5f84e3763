use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mesh::{densify, perturb_mesh, PerturbRanges, Perturbation, SparseMesh, WarpKind};
use crate::error::{Error, Result};
use crate::grid::{self, invert_grid, valid_mask, WarpGrid};
use crate::metrics;
use crate::raster::Image;

/// Where the (perturbed) document lands in the frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacementRanges {
    /// Fraction of the frame area the document covers; the side scales by
    /// its square root.
    pub area: (f64, f64),
    pub max_rotation_deg: f64,
    /// Largest centre offset as a fraction of the free margin.
    pub offset: f64,
}

impl Default for PlacementRanges {
    fn default() -> Self {
        PlacementRanges {
            area: (0.7, 0.95),
            max_rotation_deg: 15.0,
            offset: 0.5,
        }
    }
}

impl PlacementRanges {
    /// Document fills the frame exactly.
    pub fn neutral() -> Self {
        PlacementRanges {
            area: (1.0, 1.0),
            max_rotation_deg: 0.0,
            offset: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub scale: f64,
    pub rotation: f64,
    pub offset: [f64; 2],
}

impl Placement {
    pub fn apply(&self, [x, y]: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        let (x, y) = (x * self.scale, y * self.scale);
        [c * x - s * y + self.offset[0], s * x + c * y + self.offset[1]]
    }
}

/// Full description of one synthetic warp; `seed` drives every random draw.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpSpec {
    /// One entry per perturbation, applied in order.
    pub kinds: Vec<WarpKind>,
    pub seed: u64,
    pub ranges: PerturbRanges,
    pub placement: PlacementRanges,
    pub mesh_size: usize,
    /// Side of the warped frame and of the ground-truth grid.
    pub size: usize,
    /// Sobel threshold as a fraction of the largest in-document gradient.
    pub edge_threshold: f32,
}

impl WarpSpec {
    pub fn new(kinds: Vec<WarpKind>, seed: u64) -> Self {
        WarpSpec {
            kinds,
            seed,
            ranges: PerturbRanges::default(),
            placement: PlacementRanges::default(),
            mesh_size: 21,
            size: 256,
            edge_threshold: 0.2,
        }
    }

    pub fn num_perturbations(&self) -> usize {
        self.kinds.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.ranges.validate()?;
        if self.mesh_size < 2 || self.size < 8 {
            return Err(Error::Config("mesh_size must be >= 2 and size >= 8".into()));
        }
        let (lo, hi) = self.placement.area;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config("placement area range must be positive and ordered".into()));
        }
        if !(self.edge_threshold > 0.0 && self.edge_threshold <= 1.0) {
            return Err(Error::Config("edge threshold must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// What was actually drawn for a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpRecord {
    pub perturbations: Vec<Perturbation>,
    pub placement: Placement,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocumentSample {
    pub flat: Image,
    pub warped: Image,
    /// Backward map: `sample(warped, gt_grid)` reconstructs `flat`.
    pub gt_grid: WarpGrid,
    pub edge_mask: Image,
}

/// Perturbed mesh placed in the frame, plus the record of the draws.
pub fn build_mesh(spec: &WarpSpec) -> Result<(SparseMesh, WarpRecord)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mesh = SparseMesh::regular(spec.mesh_size, spec.mesh_size);
    let mut perturbations = Vec::with_capacity(spec.kinds.len());
    for &kind in &spec.kinds {
        let (m, p) = perturb_mesh(&mesh, kind, &spec.ranges, &mut rng)?;
        mesh = m;
        perturbations.push(p);
    }
    let pr = &spec.placement;
    let area = if pr.area.1 > pr.area.0 {
        rng.gen_range(pr.area.0..pr.area.1)
    } else {
        pr.area.0
    };
    let scale = area.sqrt();
    let rotation = if pr.max_rotation_deg > 0.0 {
        rng.gen_range(-pr.max_rotation_deg..pr.max_rotation_deg).to_radians()
    } else {
        0.0
    };
    let free = (1.0 - scale).max(0.0) * pr.offset;
    let offset = if free > 0.0 {
        [rng.gen_range(-free..free), rng.gen_range(-free..free)]
    } else {
        [0.0, 0.0]
    };
    let placement = Placement { scale, rotation, offset };
    Ok((mesh.map(|p| placement.apply(p)), WarpRecord { perturbations, placement }))
}

/// Warps `flat` onto `texture`. Returns the sample and what was drawn.
pub fn synthesize_sample(flat: &Image, texture: &Image, spec: &WarpSpec) -> Result<(DocumentSample, WarpRecord)> {
    if flat.is_empty() || texture.is_empty() {
        return Err(Error::Usage("flat page and texture must be non-empty".into()));
    }
    let n = spec.size;
    let (mesh, record) = build_mesh(spec)?;
    let forward = densify(&mesh, n, n);
    let inverse = invert_grid(&forward)?;

    let mut flat = flat.to_rgb();
    flat.quantize();
    let texture = texture.to_rgb().resize(n, n);
    let doc = valid_mask(&inverse);
    let mut warped = texture;
    let mut px = [0.0f32; 3];
    for i in 0..n {
        for j in 0..n {
            if !doc[i * n + j] {
                continue;
            }
            let [x, y] = inverse.get(i, j);
            if grid::read_bilinear(&flat, x as f64, y as f64, &mut px) {
                warped.pixel_mut(j, i).copy_from_slice(&px);
            }
        }
    }
    warped.quantize();
    let doc_mask = Image::from_fn(n, n, 1, |x, y, _| if doc[y * n + x] { 1.0 } else { 0.0 });
    let edge_mask = edge_ground_truth(&warped, &doc_mask, spec.edge_threshold)?;
    Ok((
        DocumentSample {
            flat,
            warped,
            gt_grid: forward,
            edge_mask,
        },
        record,
    ))
}

fn sobel_magnitude(gray: &Image, x: usize, y: usize) -> f32 {
    let g = |dx: isize, dy: isize| gray.get((x as isize + dx) as usize, (y as isize + dy) as usize, 0);
    let gx = (g(1, -1) + 2.0 * g(1, 0) + g(1, 1)) - (g(-1, -1) + 2.0 * g(-1, 0) + g(-1, 1));
    let gy = (g(-1, 1) + 2.0 * g(0, 1) + g(1, 1)) - (g(-1, -1) + 2.0 * g(0, -1) + g(1, -1));
    gx.hypot(gy)
}

/// Binary edge map: the document outline (dilated once) united with Sobel
/// edges at `threshold * max` inside the document.
pub fn edge_ground_truth(warped: &Image, doc_mask: &Image, threshold: f32) -> Result<Image> {
    let (w, h) = (warped.width(), warped.height());
    if (doc_mask.width(), doc_mask.height()) != (w, h) {
        return Err(Error::dim(format!(
            "image {w}x{h} and mask {}x{} differ",
            doc_mask.width(),
            doc_mask.height()
        )));
    }
    let inside = |x: isize, y: isize| -> bool {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && doc_mask.get(x as usize, y as usize, 0) > 0.5
    };
    let gray = warped.to_gray();
    let mut out = Image::filled(w, h, 1, 0.0);

    // Sobel only where the whole 3x3 window lies in the document, so the
    // outline contrast does not set the threshold.
    let mut mag = vec![0.0f32; w * h];
    let mut max = 0.0f32;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let interior = (-1..=1).all(|dy| (-1..=1).all(|dx| inside(x as isize + dx, y as isize + dy)));
            if interior {
                let m = sobel_magnitude(&gray, x, y);
                mag[y * w + x] = m;
                max = max.max(m);
            }
        }
    }
    if max > 0.0 {
        for (o, &m) in out.data_mut().iter_mut().zip(&mag) {
            if m >= threshold * max {
                *o = 1.0;
            }
        }
    }

    let mut boundary = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            if inside(xi, yi) && !(inside(xi - 1, yi) && inside(xi + 1, yi) && inside(xi, yi - 1) && inside(xi, yi + 1)) {
                boundary[y * w + x] = true;
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            if !boundary[y * w + x] {
                continue;
            }
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    out.set(xx, yy, 0, 1.0);
                }
            }
        }
    }
    Ok(out)
}

/// SSIM between `flat` and the reconstruction `sample(warped, gt_grid)`,
/// restricted to pixels whose ground-truth source lies inside the frame.
pub fn reconstruction_ssim(s: &DocumentSample) -> Result<f64> {
    let n = s.gt_grid.height();
    let rec = grid::sample(&s.warped, &s.gt_grid, &grid::black(3))?;
    let flat = s.flat.resize(s.gt_grid.width(), n);
    metrics::ssim_masked(&rec.to_gray(), &flat.to_gray(), &valid_mask(&s.gt_grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::pages::{synthetic_page, synthetic_texture};

    #[test]
    fn zero_perturbations_with_neutral_placement_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flat = synthetic_page(64, &mut rng);
        let tex = synthetic_texture(64, &mut rng);
        let mut spec = WarpSpec::new(vec![], 3);
        spec.size = 64;
        spec.placement = PlacementRanges::neutral();
        let (s, rec) = synthesize_sample(&flat, &tex, &spec).unwrap();
        assert!(rec.perturbations.is_empty());
        assert!(s.gt_grid.max_abs_diff(&WarpGrid::identity(64, 64)).unwrap() <= 1e-5);
        let mut q = flat.clone();
        q.quantize();
        assert_eq!(s.warped, q);
    }

    #[test]
    fn zero_perturbations_centre_the_document() {
        let flat = Image::filled(64, 64, 3, 1.0);
        let tex = Image::filled(64, 64, 3, 0.0);
        let mut spec = WarpSpec::new(vec![], 3);
        spec.size = 64;
        spec.placement.max_rotation_deg = 0.0;
        spec.placement.offset = 0.0;
        let (s, rec) = synthesize_sample(&flat, &tex, &spec).unwrap();
        let gray = s.warped.to_gray();
        let white: Vec<usize> = (0..64).filter(|&x| gray.get(x, 32, 0) > 0.5).collect();
        let span = white.len() as f64 / 64.0;
        assert!((span - rec.placement.scale).abs() < 0.05);
        let centre = (white[0] + white[white.len() - 1]) as f64 / 2.0;
        assert!((centre - 31.5).abs() <= 1.0);
    }

    #[test]
    fn seeded_sample_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let flat = synthetic_page(96, &mut rng);
        let tex = synthetic_texture(96, &mut rng);
        let mut spec = WarpSpec::new(vec![WarpKind::Fold, WarpKind::Curve], 7);
        spec.size = 96;
        let a = synthesize_sample(&flat, &tex, &spec).unwrap();
        let b = synthesize_sample(&flat, &tex, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reconstruction_is_faithful() {
        for seed in 0..4 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let flat = synthetic_page(256, &mut rng);
            let tex = synthetic_texture(256, &mut rng);
            let spec = WarpSpec::new(vec![WarpKind::Fold, WarpKind::Curve, WarpKind::Fold], seed + 10);
            let (s, _) = synthesize_sample(&flat, &tex, &spec).unwrap();
            let v = reconstruction_ssim(&s).unwrap();
            assert!(v >= 0.9, "seed {seed}: {v}");
            assert!(s.edge_mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn uniform_document_gives_outline_only() {
        let warped = Image::from_fn(
            20,
            20,
            3,
            |x, y, _| if (5..15).contains(&x) && (5..15).contains(&y) { 0.8 } else { 0.0 },
        );
        let mask = Image::from_fn(
            20,
            20,
            1,
            |x, y, _| if (5..15).contains(&x) && (5..15).contains(&y) { 1.0 } else { 0.0 },
        );
        let e = edge_ground_truth(&warped, &mask, 0.2).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                let near = |v: usize| (4..=6).contains(&v) || (13..=15).contains(&v);
                let ring = (4..=15).contains(&x) && (4..=15).contains(&y) && (near(x) || near(y));
                assert_eq!(e.get(x, y, 0) == 1.0, ring, "{x} {y}");
            }
        }
        let blank = edge_ground_truth(&Image::filled(8, 8, 3, 0.0), &Image::filled(8, 8, 1, 0.0), 0.2).unwrap();
        assert!(blank.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizontal_rule_is_detected() {
        let warped = Image::from_fn(64, 64, 3, |_, y, _| if y == 30 || y == 31 { 0.0 } else { 1.0 });
        let mask = Image::filled(64, 64, 1, 1.0);
        let e = edge_ground_truth(&warped, &mask, 0.2).unwrap();
        let hit = (2..62).filter(|&x| e.get(x, 30, 0) == 1.0 && e.get(x, 31, 0) == 1.0).count();
        assert!(hit as f64 / 60.0 >= 0.9);
    }
}
