//! Training losses: least-squares grid loss plus a weighted pixel-wise
//! binary cross-entropy on the edge map.

use crate::config::{parse_value, unknown};
use crate::error::{Error, Result};
use crate::model::ModelOutput;
use crate::nn::{Element, Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub bce_epsilon: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda: 0.9,
            bce_epsilon: 1e-7,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.bce_epsilon > 0.0 && self.bce_epsilon < 0.5) {
            return Err(Error::Config(format!("bce_epsilon must lie in (0, 0.5), got {}", self.bce_epsilon)));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lambda" => self.lambda = parse_value(key, value)?,
            "bce_epsilon" => self.bce_epsilon = parse_value(key, value)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![("lambda", self.lambda.to_string()), ("bce_epsilon", self.bce_epsilon.to_string())]
    }
}

/// Mean binary cross-entropy over pixels of a 1-channel probability map.
pub fn edge_loss<T: Element>(g: &mut Graph<'_, T>, prob: Var, gt: Var, eps: f64) -> Result<Var> {
    let (p, t) = (g.shape(prob), g.shape(gt));
    if p.channels != 1 {
        return Err(Error::dim(format!("edge prediction must have one channel, got {p}")));
    }
    if p != t {
        return Err(Error::dim(format!("edge prediction {p} vs ground truth {t}")));
    }
    g.bce(prob, gt, eps)
}

/// Mean squared error over every grid element.
pub fn grid_loss<T: Element>(g: &mut Graph<'_, T>, pred: Var, gt: Var) -> Result<Var> {
    g.mse(pred, gt)
}

/// `grid + lambda * edge` on plain numbers.
pub fn combine(grid: f64, edge: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        grid
    } else {
        grid + lambda * edge
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub grid: Var,
    pub edge: Option<Var>,
    pub combined: Var,
}

/// Combined objective on one forward pass. The edge term is dropped when the
/// model has no edge head or `gt_edges` is `None`; with `lambda = 0` it is
/// still reported but contributes nothing.
pub fn combined_loss<T: Element>(
    g: &mut Graph<'_, T>,
    out: &ModelOutput,
    gt_grid: Var,
    gt_edges: Option<Var>,
    cfg: &ObjectiveConfig,
) -> Result<LossTerms> {
    let grid = grid_loss(g, out.grid, gt_grid)?;
    let edge = match (out.edge_logits, gt_edges) {
        (Some(logits), Some(gt)) => {
            let prob = g.sigmoid(logits);
            Some(edge_loss(g, prob, gt, cfg.bce_epsilon)?)
        }
        _ => None,
    };
    let combined = match edge {
        Some(e) if cfg.lambda != 0.0 => {
            let weighted = g.scale(e, cfg.lambda);
            g.add(grid, weighted)?
        }
        _ => grid,
    };
    Ok(LossTerms { grid, edge, combined })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::WarpGrid;
    use crate::nn::{grad_check, GradCheckConfig, ParamStore, Shape, Tensor};

    fn t(shape: Shape, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    fn scalar(g: &Graph<'_, f64>, v: Var) -> f64 {
        g.value(v).data()[0]
    }

    #[test]
    fn edge_loss_values() {
        let s = Shape::new(1, 1, 1, 2);
        let mut g = Graph::<f64>::inference();
        let y = g.input(t(s, &[1.0, 0.0]));
        let p = g.input(t(s, &[0.9, 0.2]));
        let l = edge_loss(&mut g, p, y, 1e-7).unwrap();
        let oracle = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((scalar(&g, l) - oracle).abs() < 1e-12);
        assert!((oracle - 0.16425).abs() < 1e-5);

        let half = g.input(t(s, &[0.5, 0.5]));
        let l = edge_loss(&mut g, half, y, 1e-7).unwrap();
        assert!((scalar(&g, l) - 2f64.ln()).abs() < 1e-12);

        let perfect = g.input(t(s, &[1.0, 0.0]));
        let l = edge_loss(&mut g, perfect, y, 1e-7).unwrap();
        assert!(scalar(&g, l) <= -(1.0 - 1e-7f64).ln() + 1e-15);

        let wrong = g.input(t(Shape::new(1, 1, 2, 1), &[0.5, 0.5]));
        assert!(edge_loss(&mut g, wrong, y, 1e-7).is_err());
    }

    #[test]
    fn grid_loss_values() {
        let id = WarpGrid::identity(16, 16);
        let shifted = WarpGrid::from_fn(16, 16, |i, j| {
            let [x, y] = id.get(i, j);
            [x + 0.05, y]
        });
        let mut g = Graph::<f64>::inference();
        let a = g.input(id.to_tensor());
        let b = g.input(shifted.to_tensor());
        let l = grid_loss(&mut g, a, b).unwrap();
        assert!((scalar(&g, l) - 0.05f64.powi(2) / 2.0).abs() < 1e-9);

        let s = Shape::new(1, 2, 3, 3);
        let z = g.input(Tensor::zeros(s));
        let off = g.input(Tensor::full(s, 0.1));
        let l = grid_loss(&mut g, z, off).unwrap();
        assert!((scalar(&g, l) - 0.01).abs() < 1e-15);
        let l = grid_loss(&mut g, z, z).unwrap();
        assert_eq!(scalar(&g, l), 0.0);
    }

    #[test]
    fn combination_arithmetic() {
        let ln2 = 2f64.ln();
        assert!((combine(0.01, ln2, 0.9) - (0.01 + 0.9 * ln2)).abs() < 1e-15);
        #[allow(clippy::approx_constant)]
        let truncated = combine(0.01, 0.6931, 0.9);
        assert!((truncated - 0.63379).abs() < 1e-9);
        assert_eq!(combine(0.37, 5.0, 0.0), 0.37);
        assert_eq!(combine(0.37, 0.0, 0.9), 0.37);
        assert!(combine(0.1, 0.2, 0.9) < combine(0.1, 0.3, 0.9));
        assert!(combine(0.1, 0.2, 0.9) < combine(0.2, 0.2, 0.9));
        assert!(ObjectiveConfig {
            lambda: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ObjectiveConfig {
            bce_epsilon: 0.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn loss_gradients() {
        let mut store = ParamStore::<f64>::new();
        let s = Shape::new(1, 1, 3, 3);
        let p = store
            .insert("p", vec![9], Tensor::from_fn(s, |_, _, y, x| 0.1 + 0.08 * (y * 3 + x) as f64))
            .unwrap();
        let q = store
            .insert(
                "q",
                vec![18],
                Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, c, y, x| (c + y) as f64 * 0.1 - x as f64 * 0.2),
            )
            .unwrap();
        let edges = Tensor::from_fn(s, |_, _, y, x| ((x + y) % 2) as f64);
        let target = Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, c, y, _| c as f64 * 0.3 - y as f64 * 0.1);
        let cfg = GradCheckConfig::default().with_rel_tol(1e-5);
        let report = grad_check(&store, &cfg, |g, st| {
            let pv = g.param(st, p);
            let qv = g.param(st, q);
            let e = g.input(edges.clone());
            let tv = g.input(target.clone());
            let le = edge_loss(g, pv, e, 1e-7)?;
            let lg = grid_loss(g, qv, tv)?;
            let w = g.scale(le, 0.9);
            g.add(lg, w)
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}
