use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::Config(format!("unknown optimizer {s:?} (adam or sgd)"))),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state over every tensor of a store, in store order.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, store: &ParamStore<f32>) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Adam => {
                let zeros: Vec<Vec<f32>> = store.ids().map(|id| vec![0.0; store.get(id).data().len()]).collect();
                (zeros.clone(), zeros)
            }
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Optimizer { kind, lr, step: 0, m, v }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients. Tensors without a
    /// gradient slot are left alone.
    pub fn step(&mut self, store: &mut ParamStore<f32>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let (data, grad) = store.get_mut(id).data_and_grad_mut();
            let Some(grad) = grad else { continue };
            match self.kind {
                OptimizerKind::Sgd => {
                    let lr = self.lr as f32;
                    for (p, g) in data.iter_mut().zip(grad) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for i in 0..data.len() {
                        let g = grad[i] as f64;
                        let mi = ADAM_BETA1 * m[i] as f64 + (1.0 - ADAM_BETA1) * g;
                        let vi = ADAM_BETA2 * v[i] as f64 + (1.0 - ADAM_BETA2) * g * g;
                        m[i] = mi as f32;
                        v[i] = vi as f32;
                        let update = self.lr * (mi / bc1) / ((vi / bc2).sqrt() + ADAM_EPS);
                        data[i] = (data[i] as f64 - update) as f32;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Shape, Tensor};

    fn store_with_grad(value: f32, grad: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        let id = s.insert("p", vec![1], Tensor::full(Shape::scalar(), value)).unwrap();
        s.get_mut(id).accumulate_grad(&[grad]).unwrap();
        s
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = store_with_grad(1.0, 3.0);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, &s);
        opt.step(&mut s);
        let v = s.get(s.id("p").unwrap()).data()[0];
        assert!((v - 0.99).abs() < 1e-6, "{v}");
    }

    #[test]
    fn sgd_follows_gradient() {
        let mut s = store_with_grad(1.0, 2.0);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &s);
        opt.step(&mut s);
        assert!((s.get(s.id("p").unwrap()).data()[0] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut s = ParamStore::new();
        let id = s
            .insert("p", vec![2], Tensor::from_vec(Shape::new(2, 1, 1, 1), vec![3.0, -2.0]).unwrap())
            .unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05, &s);
        for _ in 0..500 {
            s.zero_grads();
            let g: Vec<f32> = s.get(id).data().iter().map(|p| 2.0 * (p - 0.5)).collect();
            s.get_mut(id).accumulate_grad(&g).unwrap();
            opt.step(&mut s);
        }
        assert!(s.get(id).data().iter().all(|p| (p - 0.5).abs() < 1e-2));
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
