use std::collections::HashMap;

use rand::Rng;

use super::graph::Gradients;
use super::tensor::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to one entry of a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a parameter is used for; mirrors the layer kinds the model is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3,
    Conv1x1,
    Upsample2x,
    MaxPool2x2,
    Activation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationMode {
    Relu,
    Sigmoid,
    Tanh,
    None,
}

/// One convolution layer's parameters as stored in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub weight: Option<ParamId>,
    pub bias: Option<ParamId>,
    pub activation: ActivationMode,
}

#[derive(Clone, Debug)]
struct Entry<T: Element> {
    name: String,
    dims: Vec<usize>,
    tensor: Tensor<T>,
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Element = f32> {
    entries: Vec<Entry<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a tensor. `dims` is the logical shape written to checkpoints
    /// (for example `[out]` for a bias stored as `out x 1 x 1 x 1`).
    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, mut tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Internal(format!("duplicate parameter name {name}")));
        }
        if dims.iter().product::<usize>() != tensor.shape().numel() {
            return Err(Error::dim(format!("logical dims {dims:?} do not match tensor {}", tensor.shape())));
        }
        if name.len() > u16::MAX as usize || dims.len() > u8::MAX as usize {
            return Err(Error::Usage(format!("parameter name or rank too long: {name}")));
        }
        tensor.set_requires_grad(true);
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry { name, dims, tensor });
        Ok(id)
    }

    /// Adds a conv kernel `(out, in, k, k)` with He-uniform init and an optional zero bias.
    pub fn add_conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Result<LayerParams> {
        let shape = Shape::new(cout, cin, kernel, kernel);
        let bound = (6.0 / (cin * kernel * kernel) as f64).sqrt();
        let data = (0..shape.numel()).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
        let weight = self.insert(
            format!("{name}.weight"),
            vec![cout, cin, kernel, kernel],
            Tensor::from_vec(shape, data)?,
        )?;
        let bias = if with_bias {
            Some(self.insert(format!("{name}.bias"), vec![cout], Tensor::zeros(Shape::new(cout, 1, 1, 1)))?)
        } else {
            None
        };
        Ok(LayerParams {
            kind: if kernel == 1 { LayerKind::Conv1x1 } else { LayerKind::Conv3x3 },
            weight: Some(weight),
            bias,
            activation: ActivationMode::None,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn dims(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].dims
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.shape().numel()).sum()
    }

    /// Scalar count over entries whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.tensor.shape().numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    /// Adds the parameter gradients of one backward pass into the grad slots.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (id, g) in grads.params() {
            let entry = self
                .entries
                .get_mut(id.0)
                .ok_or_else(|| Error::Internal(format!("gradient for unknown parameter {id:?}")))?;
            entry.tensor.accumulate_grad(g)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.all_finite())
    }

    pub fn grads_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.tensor.grad().is_none_or(|g| g.iter().all(|v| v.is_finite())))
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    dims: e.dims.clone(),
                    tensor: e.tensor.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Bitwise comparison of names, dims and values.
    pub fn same_values(&self, other: &ParamStore<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.dims == b.dims
                    && a.tensor.data().len() == b.tensor.data().len()
                    && a.tensor
                        .data()
                        .iter()
                        .zip(b.tensor.data())
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}
