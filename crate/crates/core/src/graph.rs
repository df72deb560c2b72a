//! Define-by-run reverse-mode autodiff over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so node indices are already a
//! topological order and `backward` simply walks them in reverse. Each node's
//! activation is dropped as soon as its own backward step has run.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Float, Shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Var,
        factor: usize,
    },
    MaxPool2 {
        x: Var,
        arg: Vec<u8>,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    MulChannels {
        x: Var,
        gate: Var,
    },
    Concat(Vec<Var>),
    Upsample {
        x: Var,
        factor: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<u8>,
        probs: Tensor<f64>,
    },
}

struct Node<F> {
    value: Option<Tensor<F>>,
    shape: Shape,
    op: Op,
    requires_grad: bool,
}

/// A single forward evaluation.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    params: HashMap<ParamId, Var>,
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients<F> {
    grads: HashMap<ParamId, Tensor<F>>,
}

impl<F: Float> Gradients<F> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.grads.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor<F>) {
        self.grads.insert(id, grad);
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<F: Float> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op, requires_grad: bool) -> Var {
        let shape = value.shape();
        self.nodes.push(Node {
            value: Some(value),
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        self.nodes[v.0]
            .value
            .as_ref()
            .expect("node value is alive until backward")
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Inserts a trainable parameter, once per graph.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.c != ws.c {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                ws.c, xs.c
            )));
        }
        if kernels::conv2d_out_shape(xs, ws.n, geom).is_none() {
            return Err(Error::Shape(format!(
                "{}x{} kernel does not fit input {xs}",
                geom.kernel, geom.kernel
            )));
        }
        let out = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b), geom);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn conv_transpose(&mut self, x: Var, w: Var, b: Var, factor: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.c != ws.n {
            return Err(Error::Shape(format!(
                "transposed conv expects {} input channels, got {}",
                ws.n, xs.c
            )));
        }
        let out =
            kernels::conv_transpose_forward(self.value(x), self.value(w), self.value(b), factor);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::ConvTranspose { x, w, b, factor }, rg))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "2x2 pooling needs even spatial size, got {}x{}",
                s.h, s.w
            )));
        }
        let (out, arg) = kernels::max_pool2_forward(self.value(x));
        let rg = self.rg(x);
        Ok(self.push(out, Op::MaxPool2 { x, arg }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(F::zero()));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "cannot add {} and {}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// `x * gate` where `gate` has one channel broadcast over all of `x`'s.
    pub fn mul_channels(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (xs, gs) = (self.shape(x), self.shape(gate));
        let same = gs == xs;
        if !same && gs != Shape::new(xs.n, 1, xs.h, xs.w) {
            return Err(Error::Shape(format!("cannot gate {xs} with {gs}")));
        }
        let p = xs.plane();
        let mut out = self.value(x).clone();
        let gv = self.value(gate).data();
        for n in 0..xs.n {
            let item = out.item_mut(n);
            for c in 0..xs.c {
                let goff = if same { (n * xs.c + c) * p } else { n * p };
                for (o, &g) in item[c * p..(c + 1) * p].iter_mut().zip(&gv[goff..goff + p]) {
                    *o = *o * g;
                }
            }
        }
        let rg = self.rg(x) || self.rg(gate);
        Ok(self.push(out, Op::MulChannels { x, gate }, rg))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]);
        let mut c = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(Error::Shape(format!("cannot concatenate {s} with {first}")));
            }
            c += s.c;
        }
        let os = Shape::new(first.n, c, first.h, first.w);
        let mut data = Vec::with_capacity(os.numel());
        for n in 0..first.n {
            for &p in parts {
                data.extend_from_slice(self.value(p).item(n));
            }
        }
        let out = Tensor::from_vec(os, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn upsample(&mut self, x: Var, factor: usize) -> Var {
        let out = kernels::upsample_nearest_forward(self.value(x), factor);
        let rg = self.rg(x);
        self.push(out, Op::Upsample { x, factor }, rg)
    }

    /// Mean over every pixel of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u8]) -> Result<Var> {
        let s = self.shape(logits);
        if targets.len() != s.n * s.plane() {
            return Err(Error::Shape(format!(
                "{} targets for logits {s}",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= s.c) {
            return Err(Error::Config(format!(
                "target class {bad} out of range for {} classes",
                s.c
            )));
        }
        let (loss, probs) = softmax_cross_entropy(self.value(logits), targets);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(F::from_f64_lossy(loss)),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar node; consumes the graph.
    pub fn backward(mut self, loss: Var) -> Gradients<F> {
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), F::one()));
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else {
                self.nodes[i].value = None;
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Input);
            match op {
                Op::Input => {}
                Op::Param(id) => {
                    out.grads.insert(id, dy);
                }
                Op::Conv2d { x, w, b, geom } => {
                    let (dx, dw, db) = kernels::conv2d_backward(
                        self.value(x),
                        self.value(w),
                        &dy,
                        geom,
                        self.rg(x),
                    );
                    self.accumulate(&mut grads, w, dw);
                    self.accumulate(&mut grads, b, db);
                    if let Some(dx) = dx {
                        self.accumulate(&mut grads, x, dx);
                    }
                }
                Op::ConvTranspose { x, w, b, factor } => {
                    let (dx, dw, db) = kernels::conv_transpose_backward(
                        self.value(x),
                        self.value(w),
                        &dy,
                        factor,
                        self.rg(x),
                    );
                    self.accumulate(&mut grads, w, dw);
                    self.accumulate(&mut grads, b, db);
                    if let Some(dx) = dx {
                        self.accumulate(&mut grads, x, dx);
                    }
                }
                Op::MaxPool2 { x, arg } => {
                    let dx = kernels::max_pool2_backward(self.shape(x), &arg, &dy);
                    self.accumulate(&mut grads, x, dx);
                }
                Op::Relu(x) => {
                    let y = self.nodes[i].value.as_ref().expect("relu output");
                    let mut dx = dy;
                    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
                        if v <= F::zero() {
                            *d = F::zero();
                        }
                    }
                    self.accumulate(&mut grads, x, dx);
                }
                Op::Sigmoid(x) => {
                    let y = self.nodes[i].value.as_ref().expect("sigmoid output");
                    let mut dx = dy;
                    for (d, &s) in dx.data_mut().iter_mut().zip(y.data()) {
                        *d = *d * s * (F::one() - s);
                    }
                    self.accumulate(&mut grads, x, dx);
                }
                Op::Add(a, b) => {
                    if self.rg(b) {
                        self.accumulate(&mut grads, b, dy.clone());
                    }
                    self.accumulate(&mut grads, a, dy);
                }
                Op::MulChannels { x, gate } => {
                    let xs = self.shape(x);
                    let gs = self.shape(gate);
                    let same = xs == gs;
                    let p = xs.plane();
                    if self.rg(gate) {
                        let xv = self.value(x);
                        let mut dg = Tensor::zeros(gs);
                        for n in 0..xs.n {
                            for c in 0..xs.c {
                                let off = (n * xs.c + c) * p;
                                let goff = if same { off } else { n * p };
                                let dgs = &mut dg.data_mut()[goff..goff + p];
                                for ((g, &d), &xx) in dgs
                                    .iter_mut()
                                    .zip(&dy.data()[off..off + p])
                                    .zip(&xv.data()[off..off + p])
                                {
                                    *g = *g + d * xx;
                                }
                            }
                        }
                        self.accumulate(&mut grads, gate, dg);
                    }
                    if self.rg(x) {
                        let gv = self.value(gate);
                        let mut dx = dy;
                        for n in 0..xs.n {
                            for c in 0..xs.c {
                                let off = (n * xs.c + c) * p;
                                let goff = if same { off } else { n * p };
                                for (d, &g) in dx.data_mut()[off..off + p]
                                    .iter_mut()
                                    .zip(&gv.data()[goff..goff + p])
                                {
                                    *d = *d * g;
                                }
                            }
                        }
                        self.accumulate(&mut grads, x, dx);
                    }
                }
                Op::Concat(parts) => {
                    let os = dy.shape();
                    let mut offset = 0;
                    for &p in &parts {
                        let s = self.shape(p);
                        if self.rg(p) {
                            let len = s.c * s.plane();
                            let mut data = Vec::with_capacity(s.numel());
                            for n in 0..os.n {
                                data.extend_from_slice(&dy.item(n)[offset..offset + len]);
                            }
                            let part = Tensor::from_vec(s, data).expect("concat slice shape");
                            self.accumulate(&mut grads, p, part);
                        }
                        offset += s.c * s.plane();
                    }
                }
                Op::Upsample { x, factor } => {
                    let dx = kernels::upsample_nearest_backward(self.shape(x), &dy, factor);
                    self.accumulate(&mut grads, x, dx);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let s = self.shape(logits);
                    let scale =
                        dy.to_scalar().to_f64().unwrap_or(f64::NAN) / (s.n * s.plane()) as f64;
                    let p = s.plane();
                    let mut dl = Tensor::zeros(s);
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let off = (n * s.c + c) * p;
                            for q in 0..p {
                                let onehot = if targets[n * p + q] as usize == c {
                                    1.0
                                } else {
                                    0.0
                                };
                                dl.data_mut()[off + q] =
                                    F::from_f64_lossy((probs.data()[off + q] - onehot) * scale);
                            }
                        }
                    }
                    self.accumulate(&mut grads, logits, dl);
                }
            }
            self.nodes[i].value = None;
        }
        out
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

#[inline]
pub(crate) fn sigmoid<F: Float>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

/// Returns the mean loss and the per-pixel softmax, both in f64.
pub(crate) fn softmax_cross_entropy<F: Float>(
    logits: &Tensor<F>,
    targets: &[u8],
) -> (f64, Tensor<f64>) {
    let s = logits.shape();
    let p = s.plane();
    let mut probs = Tensor::<f64>::zeros(s);
    let mut total = 0.0;
    let ld = logits.data();
    let mut row = vec![0.0f64; s.c];
    for n in 0..s.n {
        for q in 0..p {
            let mut m = f64::NEG_INFINITY;
            for (c, r) in row.iter_mut().enumerate() {
                *r = ld[(n * s.c + c) * p + q].to_f64().unwrap_or(f64::NAN);
                m = m.max(*r);
            }
            let z: f64 = row.iter().map(|r| (r - m).exp()).sum();
            let lz = m + z.ln();
            let t = targets[n * p + q] as usize;
            total += lz - row[t];
            for (c, r) in row.iter().enumerate() {
                probs.data_mut()[(n * s.c + c) * p + q] = (r - lz).exp();
            }
        }
    }
    (total / (s.n * p) as f64, probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_sigmoid_gradients() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add(
            "p",
            Tensor::from_vec((1, 1, 1, 3), vec![-1.0, 0.5, 2.0]).unwrap(),
        );
        let mut g = Graph::new();
        let p = g.param(&store, id);
        let r = g.relu(p);
        let s = g.sigmoid(r);
        let gate = g.input(Tensor::full((1, 1, 1, 3), 1.0));
        let y = g.mul_channels(s, gate).unwrap();
        // two-class logits [y, 1] with target 0
        let targets = [0u8; 3];
        let two = g.concat(&[y, gate]).unwrap();
        let loss = g.cross_entropy(two, &targets).unwrap();
        let lv = g.value(loss).to_scalar();
        let grads = g.backward(loss);
        let d = grads.get(id).unwrap();
        for k in 0..3 {
            let f = |delta: f64| {
                let mut st = store.clone();
                st.get_mut(id).data_mut()[k] += delta;
                let mut g = Graph::new();
                let p = g.param(&st, id);
                let r = g.relu(p);
                let s = g.sigmoid(r);
                let gate = g.input(Tensor::full((1, 1, 1, 3), 1.0));
                let y = g.mul_channels(s, gate).unwrap();
                let two = g.concat(&[y, gate]).unwrap();
                let l = g.cross_entropy(two, &targets).unwrap();
                g.value(l).to_scalar()
            };
            let num = (f(1e-6) - f(-1e-6)) / 2e-6;
            assert!(
                (num - d.data()[k]).abs() < 1e-8,
                "k={k} {num} vs {}",
                d.data()[k]
            );
        }
        assert!(lv.is_finite());
    }

    #[test]
    fn cross_entropy_rejects_bad_target() {
        let mut g = Graph::<f32>::new();
        let l = g.input(Tensor::zeros((1, 5, 1, 2)));
        assert!(matches!(g.cross_entropy(l, &[0, 5]), Err(Error::Config(_))));
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::zeros((1, 2, 4, 4)));
        let b = g.input(Tensor::zeros((1, 2, 2, 2)));
        assert!(g.add(a, b).is_err());
        let odd = g.input(Tensor::zeros((1, 1, 3, 4)));
        assert!(g.max_pool2(odd).is_err());
        let gate = g.input(Tensor::zeros((1, 1, 2, 2)));
        assert!(g.mul_channels(a, gate).is_err());
    }
}
