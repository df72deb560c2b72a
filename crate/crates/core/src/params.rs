//! Named trainable parameters and the two convolution layers built on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::kernels::ConvGeom;
use crate::tensor::{Float, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat, insertion-ordered parameter registry. Names are dotted layer
/// paths ending in `.weight` or `.bias`.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<F>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<F>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Number of trainable scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Zeroes every parameter whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (n, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            if n.starts_with(prefix) {
                t.data_mut().fill(F::zero());
            }
        }
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Seeded He-uniform initializer: weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)),
/// biases zero.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn he_uniform<F: Float>(&mut self, shape: Shape, fan_in: usize) -> Tensor<F> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..shape.numel())
            .map(|_| F::from_f64_lossy(self.rng.random_range(-bound..bound)))
            .collect();
        Tensor::from_vec(shape, data).expect("init shape")
    }
}

/// Square-kernel convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        init: &mut Init,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geom: ConvGeom,
    ) -> Self {
        Self::summing(store, init, name, in_channels, out_channels, geom, 1)
    }

    /// A convolution whose input is the sum of `branches` feature maps; the
    /// fan-in counts every branch.
    pub fn summing<F: Float>(
        store: &mut ParamStore<F>,
        init: &mut Init,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geom: ConvGeom,
        branches: usize,
    ) -> Self {
        let k = geom.kernel;
        let fan_in = branches * in_channels * k * k;
        let w = init.he_uniform(Shape::new(out_channels, in_channels, k, k), fan_in);
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::zeros(Shape::new(out_channels, 1, 1, 1)),
        );
        Conv2d {
            weight,
            bias,
            geom,
            in_channels,
            out_channels,
        }
    }

    pub fn forward<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, b, self.geom)
    }

    pub fn param_count(&self) -> usize {
        self.geom.kernel * self.geom.kernel * self.in_channels * self.out_channels
            + self.out_channels
    }
}

/// Transposed convolution with kernel = stride = `factor`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub factor: usize,
}

impl ConvTranspose2d {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        init: &mut Init,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        factor: usize,
    ) -> Self {
        let w = init.he_uniform(
            Shape::new(in_channels, out_channels, factor, factor),
            in_channels,
        );
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::zeros(Shape::new(out_channels, 1, 1, 1)),
        );
        ConvTranspose2d {
            weight,
            bias,
            factor,
        }
    }

    pub fn forward<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv_transpose(x, w, b, self.factor)
    }
}
