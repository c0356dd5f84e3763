use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{to_normalized, WarpGrid};

/// Sparse control lattice in normalized document coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMesh {
    rows: usize,
    cols: usize,
    positions: Vec<[f64; 2]>,
}

impl SparseMesh {
    /// Undeformed lattice spanning `[-1, 1]^2`.
    pub fn regular(rows: usize, cols: usize) -> Self {
        assert!(rows >= 2 && cols >= 2, "mesh needs at least 2x2 vertices");
        let mut positions = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                positions.push([to_normalized(c as f64, cols), to_normalized(r as f64, rows)]);
            }
        }
        SparseMesh { rows, cols, positions }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn get(&self, r: usize, c: usize) -> [f64; 2] {
        self.positions[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, p: [f64; 2]) {
        self.positions[r * self.cols + c] = p;
    }

    /// Smallest signed area over all cells (both triangles of every quad).
    pub fn min_cell_area(&self) -> f64 {
        let mut m = f64::INFINITY;
        for r in 0..self.rows - 1 {
            for c in 0..self.cols - 1 {
                let a = self.get(r, c);
                let b = self.get(r, c + 1);
                let d = self.get(r + 1, c + 1);
                let e = self.get(r + 1, c);
                m = m
                    .min(tri_area(a, b, d))
                    .min(tri_area(a, d, e))
                    .min(tri_area(a, b, e))
                    .min(tri_area(b, d, e));
            }
        }
        m
    }

    pub fn is_fold_free(&self) -> bool {
        self.min_cell_area() > 0.0
    }

    /// Largest absolute coordinate over the boundary vertices.
    pub fn boundary_extent(&self) -> f64 {
        let mut m = 0.0f64;
        for r in 0..self.rows {
            for c in 0..self.cols {
                if r == 0 || c == 0 || r + 1 == self.rows || c + 1 == self.cols {
                    let [x, y] = self.get(r, c);
                    m = m.max(x.abs()).max(y.abs());
                }
            }
        }
        m
    }

    pub fn map(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> SparseMesh {
        SparseMesh {
            rows: self.rows,
            cols: self.cols,
            positions: self.positions.iter().map(|&p| f(p)).collect(),
        }
    }
}

fn tri_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WarpKind {
    Fold,
    Curve,
}

impl fmt::Display for WarpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WarpKind::Fold => "fold",
            WarpKind::Curve => "curve",
        })
    }
}

impl FromStr for WarpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fold" => Ok(WarpKind::Fold),
            "curve" => Ok(WarpKind::Curve),
            other => Err(Error::Config(format!("unknown warp kind {other:?}"))),
        }
    }
}

/// Falloff radius of the curve kernel: half the diagonal of the `[-1, 1]^2` mesh.
pub const CURVE_RADIUS: f64 = std::f64::consts::SQRT_2;

/// Displacement weight at distance `d` from the perturbation line.
pub fn kernel(kind: WarpKind, d: f64, alpha: f64) -> f64 {
    match kind {
        WarpKind::Fold => alpha / (d + alpha),
        WarpKind::Curve => (1.0 - (d / CURVE_RADIUS).powf(alpha)).max(0.0),
    }
}

/// One applied deformation, fully described.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation {
    pub kind: WarpKind,
    pub anchor: [f64; 2],
    /// Unit displacement direction.
    pub direction: [f64; 2],
    pub alpha: f64,
    pub displacement: f64,
}

impl Perturbation {
    /// Moves every vertex by `w(d) * s * v`, `d` being its distance to the line
    /// through the anchor orthogonal to `v`.
    pub fn apply(&self, mesh: &SparseMesh) -> SparseMesh {
        let [vx, vy] = self.direction;
        mesh.map(|[x, y]| {
            let d = ((x - self.anchor[0]) * vx + (y - self.anchor[1]) * vy).abs();
            let k = kernel(self.kind, d, self.alpha) * self.displacement;
            [x + k * vx, y + k * vy]
        })
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{},{},{},{},{},{}",
            self.kind, self.anchor[0], self.anchor[1], self.direction[0], self.direction[1], self.alpha, self.displacement
        )
    }
}

impl FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed perturbation {s:?}"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let v: Vec<f64> = rest
            .split(',')
            .map(|t| t.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if v.len() != 6 {
            return Err(bad());
        }
        Ok(Perturbation {
            kind: kind.parse()?,
            anchor: [v[0], v[1]],
            direction: [v[2], v[3]],
            alpha: v[4],
            displacement: v[5],
        })
    }
}

/// Sampling ranges for [`perturb_mesh`].
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbRanges {
    pub fold_alpha: (f64, f64),
    pub curve_alpha: (f64, f64),
    pub displacement: (f64, f64),
    pub boundary_limit: f64,
    pub retries: usize,
    pub shrink: f64,
}

impl Default for PerturbRanges {
    fn default() -> Self {
        PerturbRanges {
            fold_alpha: (0.2, 0.6),
            curve_alpha: (1.5, 3.0),
            displacement: (0.05, 0.25),
            boundary_limit: 1.3,
            retries: 10,
            shrink: 0.7,
        }
    }
}

impl PerturbRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("fold_alpha", self.fold_alpha),
            ("curve_alpha", self.curve_alpha),
            ("displacement", self.displacement),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::Config(format!("{name} range must be positive and ordered")));
            }
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config("shrink factor must be in (0, 1)".into()));
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Applies one random fold or curve. A random mesh vertex serves as anchor.
/// Fold-overs and boundary excursions are retried with a smaller displacement.
pub fn perturb_mesh(mesh: &SparseMesh, kind: WarpKind, ranges: &PerturbRanges, rng: &mut impl Rng) -> Result<(SparseMesh, Perturbation)> {
    let anchor = mesh.positions[rng.gen_range(0..mesh.positions.len())];
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let alpha = draw(
        rng,
        match kind {
            WarpKind::Fold => ranges.fold_alpha,
            WarpKind::Curve => ranges.curve_alpha,
        },
    );
    let mut p = Perturbation {
        kind,
        anchor,
        direction: [angle.cos(), angle.sin()],
        alpha,
        displacement: draw(rng, ranges.displacement),
    };
    for _ in 0..=ranges.retries {
        let out = p.apply(mesh);
        if out.is_fold_free() && out.boundary_extent() <= ranges.boundary_limit {
            return Ok((out, p));
        }
        p.displacement *= ranges.shrink;
    }
    Err(Error::DegenerateWarp(format!(
        "{kind} perturbation still folds over after {} retries",
        ranges.retries
    )))
}

/// Bilinear interpolation of the vertex positions onto an `h x w` lattice.
/// Lattice pixel `(i, j)` sits at document coordinate
/// `(to_normalized(j, w), to_normalized(i, h))`.
pub fn densify(mesh: &SparseMesh, h: usize, w: usize) -> WarpGrid {
    WarpGrid::from_fn(h, w, |i, j| {
        let u = (j as f64) * (mesh.cols - 1) as f64 / (w.max(2) - 1) as f64;
        let v = (i as f64) * (mesh.rows - 1) as f64 / (h.max(2) - 1) as f64;
        let c0 = (u.floor() as usize).min(mesh.cols - 2);
        let r0 = (v.floor() as usize).min(mesh.rows - 2);
        let tu = u - c0 as f64;
        let tv = v - r0 as f64;
        let a = mesh.get(r0, c0);
        let b = mesh.get(r0, c0 + 1);
        let c = mesh.get(r0 + 1, c0);
        let d = mesh.get(r0 + 1, c0 + 1);
        let mut out = [0.0f32; 2];
        for k in 0..2 {
            out[k] = ((1.0 - tv) * ((1.0 - tu) * a[k] + tu * b[k]) + tv * ((1.0 - tu) * c[k] + tu * d[k])) as f32;
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernels_at_the_crease_and_far_away() {
        assert_eq!(kernel(WarpKind::Fold, 0.0, 0.37), 1.0);
        assert_eq!(kernel(WarpKind::Curve, 0.0, 2.0), 1.0);
        assert_eq!(kernel(WarpKind::Curve, CURVE_RADIUS, 2.0), 0.0);
        assert!(kernel(WarpKind::Fold, 100.0, 0.2) > 0.0);
        for kind in [WarpKind::Fold, WarpKind::Curve] {
            let mut prev = f64::INFINITY;
            for k in 0..100 {
                let w = kernel(kind, k as f64 * 0.03, 0.5);
                assert!(w <= prev);
                prev = w;
            }
        }
    }

    #[test]
    fn zero_displacement_leaves_mesh_unchanged() {
        let mesh = SparseMesh::regular(21, 21);
        let p = Perturbation {
            kind: WarpKind::Fold,
            anchor: [0.1, -0.3],
            direction: [0.6, 0.8],
            alpha: 0.4,
            displacement: 0.0,
        };
        assert_eq!(p.apply(&mesh), mesh);
    }

    #[test]
    fn fold_matches_scalar_oracle() {
        let mesh = SparseMesh::regular(21, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let anchor = mesh.positions()[rng.gen_range(0..441)];
        let p = Perturbation {
            kind: WarpKind::Fold,
            anchor,
            direction: [angle.cos(), angle.sin()],
            alpha: 0.5,
            displacement: 0.15,
        };
        let out = p.apply(&mesh);
        for r in 0..21 {
            for c in 0..21 {
                let x = -1.0 + 0.1 * c as f64;
                let y = -1.0 + 0.1 * r as f64;
                let d = ((x - anchor[0]) * angle.cos() + (y - anchor[1]) * angle.sin()).abs();
                let w = 0.5 / (d + 0.5);
                let got = out.get(r, c);
                assert!((got[0] - (x + w * 0.15 * angle.cos())).abs() < 1e-12);
                assert!((got[1] - (y + w * 0.15 * angle.sin())).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_perturbations_stay_valid() {
        let ranges = PerturbRanges::default();
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mesh = SparseMesh::regular(21, 21);
            for k in 0..4 {
                let kind = if (seed + k) % 2 == 0 { WarpKind::Fold } else { WarpKind::Curve };
                let (m, _) = perturb_mesh(&mesh, kind, &ranges, &mut rng).unwrap();
                assert!(m.is_fold_free());
                assert!(m.boundary_extent() <= 1.3);
                mesh = m;
            }
        }
    }

    #[test]
    fn densify_identity_and_knots() {
        let mesh = SparseMesh::regular(21, 21);
        assert!(densify(&mesh, 256, 256).max_abs_diff(&WarpGrid::identity(256, 256)).unwrap() <= 1e-5);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (bent, _) = perturb_mesh(&mesh, WarpKind::Curve, &PerturbRanges::default(), &mut rng).unwrap();
        let dense = densify(&bent, 41, 41);
        for r in 0..21 {
            for c in 0..21 {
                let g = dense.get(2 * r, 2 * c);
                let v = bent.get(r, c);
                assert!((g[0] as f64 - v[0]).abs() < 1e-6 && (g[1] as f64 - v[1]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn centre_vertex_shift_reaches_image_centre() {
        let mut mesh = SparseMesh::regular(3, 3);
        mesh.set(1, 1, [0.1, 0.0]);
        let g = densify(&mesh, 65, 65);
        let [x, y] = g.get(32, 32);
        assert!((x - 0.1).abs() < 1e-7 && y.abs() < 1e-7);
        // Halfway to the right edge the shift is halved.
        let [x, _] = g.get(32, 48);
        assert!((x as f64 - (0.5 + 0.05)).abs() < 1e-6);
    }

    #[test]
    fn perturbation_text_round_trip() {
        let p = Perturbation {
            kind: WarpKind::Curve,
            anchor: [0.1, -0.7],
            direction: [0.6, -0.8],
            alpha: 2.25,
            displacement: 0.123456789,
        };
        assert_eq!(p.to_string().parse::<Perturbation>().unwrap(), p);
    }
}
