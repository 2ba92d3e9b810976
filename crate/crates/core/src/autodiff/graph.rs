//! Define-by-run reverse-mode tape.
//!
//! Every op evaluates eagerly when recorded and stores its output value.
//! The recorded op list can be replayed against fresh leaf bindings, which
//! is what the finite-difference checker uses.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{Real, Tensor};

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub type Bindings<T> = HashMap<String, Tensor<T>>;

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf { name: String, requires_grad: bool },
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    Shift(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Binarize(Var, T),
    Sum(Var),
    Softmax(Var),
    BatchMatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    FcAxis {
        x: Var,
        w: Var,
        b: Option<Var>,
        axis: usize,
    },
    Resize {
        x: Var,
        h: usize,
        w: usize,
    },
    Concat(Vec<Var>),
    SliceChannels {
        x: Var,
        start: usize,
        len: usize,
    },
    Gather {
        x: Var,
        index: Arc<[usize]>,
        shape: Vec<usize>,
    },
    RepeatChannels {
        x: Var,
        count: usize,
    },
    BceLogits {
        x: Var,
        target: Var,
    },
}

impl<T: Real> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf { .. } | Constant => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | BatchMatMul(a, b) => vec![*a, *b],
            Scale(a, _) | Shift(a, _) | Relu(a) | Sigmoid(a) | Binarize(a, _) | Sum(a)
            | Softmax(a) => vec![*a],
            Conv2d { x, w, b, .. } | FcAxis { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Resize { x, .. }
            | SliceChannels { x, .. }
            | Gather { x, .. }
            | RepeatChannels { x, .. } => vec![*x],
            Concat(xs) => xs.clone(),
            BceLogits { x, target } => vec![*x, *target],
        }
    }

    pub(crate) fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf { .. } => "leaf",
            Constant => "constant",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Div(..) => "div",
            Scale(..) => "scale",
            Shift(..) => "shift",
            Relu(..) => "relu",
            Sigmoid(..) => "sigmoid",
            Binarize(..) => "binarize",
            Sum(..) => "sum",
            Softmax(..) => "softmax",
            BatchMatMul(..) => "bmm",
            Conv2d { .. } => "conv2d",
            FcAxis { .. } => "fc_axis",
            Resize { .. } => "resize",
            Concat(..) => "concat",
            SliceChannels { .. } => "slice",
            Gather { .. } => "gather",
            RepeatChannels { .. } => "repeat_channels",
            BceLogits { .. } => "bce_logits",
        }
    }

    fn differentiable(&self) -> bool {
        !matches!(self, Op::Binarize(..))
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    leaves: HashMap<String, Var>,
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            leaves: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf_var(&self, name: &str) -> Option<Var> {
        self.leaves.get(name).copied()
    }

    /// Leaf names in recording order.
    pub fn leaf_names(&self) -> Vec<String> {
        let mut v: Vec<_> = self.leaves.iter().map(|(n, v)| (v.0, n.clone())).collect();
        v.sort();
        v.into_iter().map(|(_, n)| n).collect()
    }

    /// Current leaf values, usable as bindings for [`Graph::forward`].
    pub fn bindings(&self) -> Bindings<T> {
        self.leaves
            .iter()
            .map(|(n, v)| (n.clone(), self.nodes[v.0].value.clone()))
            .collect()
    }

    fn push(&mut self, op: Op<T>) -> Result<Var> {
        let value = self.eval(&op)?;
        let needs_grad = match &op {
            Op::Leaf { requires_grad, .. } => *requires_grad,
            Op::Constant => false,
            other => other.inputs().iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn add_leaf(&mut self, name: &str, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if self.leaves.contains_key(name) {
            return Err(Error::Config(format!("duplicate leaf name `{name}`")));
        }
        self.nodes.push(Node {
            op: Op::Leaf {
                name: name.to_string(),
                requires_grad,
            },
            value,
            needs_grad: requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.leaves.insert(name.to_string(), v);
        Ok(v)
    }

    /// Named leaf that receives a gradient.
    pub fn param(&mut self, name: &str, value: Tensor<T>) -> Result<Var> {
        self.add_leaf(name, value, true)
    }

    /// Named leaf without gradient (rebindable on replay).
    pub fn input(&mut self, name: &str, value: Tensor<T>) -> Result<Var> {
        self.add_leaf(name, value, false)
    }

    /// Anonymous fixed value; kept as-is on replay.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        self.push(Op::Scale(a, k))
    }

    pub fn shift(&mut self, a: Var, k: T) -> Result<Var> {
        self.push(Op::Shift(a, k))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -T::one())?;
        self.shift(neg, T::one())
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sigmoid(a))
    }

    /// Hard threshold at `level`. Not differentiable: backward passes zero
    /// and gradient checks refuse graphs containing it.
    pub fn binarize(&mut self, a: Var, level: T) -> Result<Var> {
        self.push(Op::Binarize(a, level))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Softmax(a))
    }

    /// `(B,M,K) x (B,K,N)`; rank-2 operands are treated as `B = 1`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::BatchMatMul(a, b))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        self.push(Op::Conv2d { x, w, b, stride, pad })
    }

    pub fn fc_axis(&mut self, x: Var, axis: usize, w: Var, b: Option<Var>) -> Result<Var> {
        self.push(Op::FcAxis { x, w, b, axis })
    }

    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        self.push(Op::Resize { x, h, w })
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        self.push(Op::Concat(xs.to_vec()))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.push(Op::SliceChannels { x, start, len })
    }

    /// `out[i] = x[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Arc<[usize]>, shape: Vec<usize>) -> Result<Var> {
        self.push(Op::Gather { x, index, shape })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n = self.value(x).len();
        let index: Arc<[usize]> = (0..n).collect();
        self.gather(x, index, shape.to_vec())
    }

    /// Reorders axes of `x`: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (index, out_shape) = permute_index(&shape, perm)?;
        self.gather(x, index.into(), out_shape)
    }

    /// Repeats a single-channel `(1,H,W)` map over `count` channels.
    pub fn repeat_channels(&mut self, x: Var, count: usize) -> Result<Var> {
        self.push(Op::RepeatChannels { x, count })
    }

    /// Elementwise `BCE(sigmoid(x), target)`.
    pub fn bce_logits(&mut self, x: Var, target: Var) -> Result<Var> {
        self.push(Op::BceLogits { x, target })
    }

    fn v(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn eval(&self, op: &Op<T>) -> Result<Tensor<T>> {
        use Op::*;
        Ok(match op {
            Leaf { .. } | Constant => unreachable!("leaves are not evaluated"),
            Add(a, b) => self.v(*a).zip_map(self.v(*b), |x, y| x + y)?,
            Sub(a, b) => self.v(*a).zip_map(self.v(*b), |x, y| x - y)?,
            Mul(a, b) => self.v(*a).zip_map(self.v(*b), |x, y| x * y)?,
            Div(a, b) => self.v(*a).zip_map(self.v(*b), |x, y| x / y)?,
            Scale(a, k) => self.v(*a).map(|x| x * *k),
            Shift(a, k) => self.v(*a).map(|x| x + *k),
            // NaN passes through so a poisoned input is not silently zeroed.
            Relu(a) => self.v(*a).map(|x| if x > T::zero() || x.is_nan() { x } else { T::zero() }),
            Sigmoid(a) => self.v(*a).map(kernels::sigmoid),
            Binarize(a, level) => self
                .v(*a)
                .map(|x| if x >= *level { T::one() } else { T::zero() }),
            Sum(a) => Tensor::scalar(self.v(*a).sum()),
            Softmax(a) => {
                let x = self.v(*a);
                let row = *x.shape().last().unwrap();
                Tensor::new(x.shape().to_vec(), kernels::softmax_forward(x.data(), row))?
            }
            BatchMatMul(a, b) => {
                let (dims, out_shape) = bmm_dims(self.v(*a).shape(), self.v(*b).shape())?;
                let [batch, m, k, n] = dims;
                let data = kernels::bmm_forward(self.v(*a).data(), self.v(*b).data(), batch, m, k, n);
                Tensor::new(out_shape, data)?
            }
            Conv2d { x, w, b, stride, pad } => {
                let geom = conv_geom(self.v(*x).shape(), self.v(*w).shape(), *stride, *pad)?;
                if let Some(b) = b {
                    same_shape("conv2d bias", self.v(*b).shape(), &[geom.cout])?;
                }
                let data = kernels::conv2d_forward(
                    self.v(*x).data(),
                    self.v(*w).data(),
                    b.map(|b| self.v(b).data()),
                    geom,
                );
                Tensor::new(vec![geom.cout, geom.ho(), geom.wo()], data)?
            }
            FcAxis { x, w, b, axis } => {
                let (dims, n) = fc_dims(self.v(*x).shape(), self.v(*w).shape(), *axis)?;
                if let Some(b) = b {
                    same_shape("fc_axis bias", self.v(*b).shape(), &[n])?;
                }
                let data = kernels::fc_axis_forward(
                    self.v(*x).data(),
                    dims,
                    *axis,
                    self.v(*w).data(),
                    b.map(|b| self.v(b).data()),
                );
                Tensor::new(self.v(*x).shape().to_vec(), data)?
            }
            Resize { x, h, w } => {
                let (c, hi, wi) = self.v(*x).chw()?;
                if *h == 0 || *w == 0 {
                    return Err(Error::shape("resize", "target extents must be positive"));
                }
                let data = kernels::resize_forward(self.v(*x).data(), c, hi, wi, *h, *w);
                Tensor::new(vec![c, *h, *w], data)?
            }
            Concat(xs) => {
                let first = xs
                    .first()
                    .ok_or_else(|| Error::shape("concat", "no inputs"))?;
                let rest = self.v(*first).shape()[1..].to_vec();
                let mut channels = 0;
                let mut data = Vec::new();
                for x in xs {
                    let t = self.v(*x);
                    if t.shape()[1..] != rest[..] {
                        return Err(Error::shape(
                            "concat",
                            format!("trailing extents {:?} vs {:?}", &t.shape()[1..], rest),
                        ));
                    }
                    channels += t.shape()[0];
                    data.extend_from_slice(t.data());
                }
                let mut shape = vec![channels];
                shape.extend(rest);
                Tensor::new(shape, data)?
            }
            SliceChannels { x, start, len } => {
                let t = self.v(*x);
                let c = t.shape()[0];
                if *len == 0 || start + len > c {
                    return Err(Error::shape(
                        "slice_channels",
                        format!("range {start}..{} outside {c} channels", start + len),
                    ));
                }
                let plane = t.len() / c;
                let mut shape = t.shape().to_vec();
                shape[0] = *len;
                Tensor::new(shape, t.data()[start * plane..(start + len) * plane].to_vec())?
            }
            Gather { x, index, shape } => {
                let t = self.v(*x);
                let n: usize = shape.iter().product();
                if n != index.len() {
                    return Err(Error::shape("gather", format!("{} indices for shape {shape:?}", index.len())));
                }
                if let Some(&bad) = index.iter().find(|&&i| i >= t.len()) {
                    return Err(Error::shape("gather", format!("index {bad} out of {}", t.len())));
                }
                let src = t.data();
                Tensor::new(shape.clone(), index.iter().map(|&i| src[i]).collect())?
            }
            RepeatChannels { x, count } => {
                let t = self.v(*x);
                let (c, h, w) = t.chw()?;
                if c != 1 || *count == 0 {
                    return Err(Error::shape("repeat_channels", format!("input has {c} channels")));
                }
                let mut data = Vec::with_capacity(count * h * w);
                for _ in 0..*count {
                    data.extend_from_slice(t.data());
                }
                Tensor::new(vec![*count, h, w], data)?
            }
            BceLogits { x, target } => self
                .v(*x)
                .zip_map(self.v(*target), kernels::bce_with_logits)?,
        })
    }

    /// Replays every recorded op with new leaf values and returns the value
    /// of the last recorded node.
    pub fn forward(&mut self, bindings: &Bindings<T>) -> Result<Tensor<T>> {
        for (name, var) in &self.leaves {
            let new = bindings
                .get(name)
                .ok_or_else(|| Error::MissingBinding { leaf: name.clone() })?;
            let old = &self.nodes[var.0].value;
            if new.shape() != old.shape() {
                return Err(Error::BindingShape {
                    leaf: name.clone(),
                    expected: old.shape().to_vec(),
                    got: new.shape().to_vec(),
                });
            }
        }
        for (name, var) in &self.leaves {
            self.nodes[var.0].value = bindings[name].clone();
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf { .. } | Op::Constant) {
                continue;
            }
            let value = self.eval(&self.nodes[i].op)?;
            self.nodes[i].value = value;
        }
        self
            .nodes
            .last()
            .map(|n| n.value.clone())
            .ok_or_else(|| Error::shape("forward", "empty graph"))
    }

    /// Whether every op reachable from `output` is differentiable.
    pub fn is_differentiable(&self, output: Var) -> bool {
        let mut seen = vec![false; output.0 + 1];
        let mut stack = vec![output];
        while let Some(v) = stack.pop() {
            if std::mem::replace(&mut seen[v.0], true) {
                continue;
            }
            let op = &self.nodes[v.0].op;
            if !op.differentiable() {
                return false;
            }
            stack.extend(op.inputs());
        }
        true
    }

    /// Sign pattern of every ReLU input. Two evaluations with equal
    /// patterns lie in the same smooth piece of the function.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                pattern.extend(self.v(a).data().iter().map(|&x| x > T::zero()));
            }
        }
        pattern
    }

    /// Index and description of the first node holding a non-finite
    /// value; leaves are described by name.
    pub fn first_non_finite(&self) -> Option<(usize, String)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
            .map(|(i, n)| {
                let name = match &n.op {
                    Op::Leaf { name, .. } => format!("leaf `{name}`"),
                    op => op.name().to_string(),
                };
                (i, name)
            })
    }

    pub fn leaf_name_of(&self, v: Var) -> Option<&str> {
        match &self.nodes[v.0].op {
            Op::Leaf { name, .. } => Some(name),
            _ => None,
        }
    }

    /// Gradient of the scalar `output` with respect to every node.
    pub fn backward_all(&self, output: Var) -> Result<Vec<Option<Tensor<T>>>> {
        let out = self.v(output);
        if !out.is_scalar() {
            return Err(Error::NonScalarOutput(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::ones(out.shape()));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            for (input, contribution) in self.vjp(&node.op, &node.value, &g)? {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(contribution.data())
                        .for_each(|(a, &c)| *a += c),
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(grads)
    }

    /// `d(output)/d(leaf)` for every gradient-requiring leaf; leaves that do
    /// not influence `output` get zero tensors.
    pub fn backward(&self, output: Var) -> Result<BTreeMap<String, Tensor<T>>> {
        let grads = self.backward_all(output)?;
        let mut out = BTreeMap::new();
        for (name, var) in &self.leaves {
            let node = &self.nodes[var.0];
            if let Op::Leaf { requires_grad: true, .. } = node.op {
                let g = grads
                    .get(var.0)
                    .cloned()
                    .flatten()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                out.insert(name.clone(), g);
            }
        }
        Ok(out)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Vector-Jacobian products of one op: `(input, d(output)/d(input)^T g)`.
    fn vjp(&self, op: &Op<T>, y: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        use Op::*;
        let mut out = Vec::new();
        match op {
            Leaf { .. } | Constant => {}
            Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|x| -x)));
            }
            Mul(a, b) => {
                if self.wants(*a) {
                    out.push((*a, g.zip_map(self.v(*b), |x, y| x * y)?));
                }
                if self.wants(*b) {
                    out.push((*b, g.zip_map(self.v(*a), |x, y| x * y)?));
                }
            }
            Div(a, b) => {
                let bv = self.v(*b);
                if self.wants(*a) {
                    out.push((*a, g.zip_map(bv, |x, d| x / d)?));
                }
                if self.wants(*b) {
                    // d(a/b)/db = -y/b
                    let t = g.zip_map(y, |x, q| -x * q)?;
                    out.push((*b, t.zip_map(bv, |x, d| x / d)?));
                }
            }
            Scale(a, k) => out.push((*a, g.map(|x| x * *k))),
            Shift(a, _) => out.push((*a, g.clone())),
            Relu(a) => out.push((
                *a,
                g.zip_map(self.v(*a), |x, v| if v > T::zero() { x } else { T::zero() })?,
            )),
            Sigmoid(a) => out.push((*a, g.zip_map(y, |x, s| x * s * (T::one() - s))?)),
            Binarize(a, _) => out.push((*a, Tensor::zeros(self.v(*a).shape()))),
            Sum(a) => out.push((*a, Tensor::full(self.v(*a).shape(), g.item()))),
            Softmax(a) => {
                let row = *y.shape().last().unwrap();
                let dx = kernels::softmax_backward(y.data(), g.data(), row);
                out.push((*a, Tensor::new(y.shape().to_vec(), dx)?));
            }
            BatchMatMul(a, b) => {
                let (av, bv) = (self.v(*a), self.v(*b));
                let (dims, _) = bmm_dims(av.shape(), bv.shape())?;
                let (da, db) = kernels::bmm_backward(
                    av.data(),
                    bv.data(),
                    g.data(),
                    dims,
                    (self.wants(*a), self.wants(*b)),
                );
                if let Some(da) = da {
                    out.push((*a, Tensor::new(av.shape().to_vec(), da)?));
                }
                if let Some(db) = db {
                    out.push((*b, Tensor::new(bv.shape().to_vec(), db)?));
                }
            }
            Conv2d { x, w, b, stride, pad } => {
                let (xv, wv) = (self.v(*x), self.v(*w));
                let geom = conv_geom(xv.shape(), wv.shape(), *stride, *pad)?;
                let (dx, dw, db) =
                    kernels::conv2d_backward(xv.data(), wv.data(), g.data(), geom, self.wants(*x));
                if let Some(dx) = dx {
                    out.push((*x, Tensor::new(xv.shape().to_vec(), dx)?));
                }
                out.push((*w, Tensor::new(wv.shape().to_vec(), dw)?));
                if let Some(b) = b {
                    out.push((*b, Tensor::new(vec![geom.cout], db)?));
                }
            }
            FcAxis { x, w, b, axis } => {
                let (xv, wv) = (self.v(*x), self.v(*w));
                let (dims, n) = fc_dims(xv.shape(), wv.shape(), *axis)?;
                let (dx, dw, db) = kernels::fc_axis_backward(
                    xv.data(),
                    dims,
                    *axis,
                    wv.data(),
                    g.data(),
                    self.wants(*x),
                );
                if let Some(dx) = dx {
                    out.push((*x, Tensor::new(xv.shape().to_vec(), dx)?));
                }
                out.push((*w, Tensor::new(vec![n, n], dw)?));
                if let Some(b) = b {
                    out.push((*b, Tensor::new(vec![n], db)?));
                }
            }
            Resize { x, h, w } => {
                let (c, hi, wi) = self.v(*x).chw()?;
                let dx = kernels::resize_backward(g.data(), c, hi, wi, *h, *w);
                out.push((*x, Tensor::new(vec![c, hi, wi], dx)?));
            }
            Concat(xs) => {
                let mut offset = 0;
                for x in xs {
                    let shape = self.v(*x).shape().to_vec();
                    let n = self.v(*x).len();
                    if self.wants(*x) {
                        out.push((*x, Tensor::new(shape, g.data()[offset..offset + n].to_vec())?));
                    }
                    offset += n;
                }
            }
            SliceChannels { x, start, len } => {
                let xv = self.v(*x);
                let plane = xv.len() / xv.shape()[0];
                let mut dx = Tensor::zeros(xv.shape());
                dx.data_mut()[start * plane..(start + len) * plane].copy_from_slice(g.data());
                out.push((*x, dx));
            }
            Gather { x, index, .. } => {
                let mut dx = Tensor::zeros(self.v(*x).shape());
                let d = dx.data_mut();
                for (&i, &gv) in index.iter().zip(g.data()) {
                    d[i] += gv;
                }
                out.push((*x, dx));
            }
            RepeatChannels { x, count } => {
                let plane = self.v(*x).len();
                let mut dx = Tensor::zeros(self.v(*x).shape());
                for c in 0..*count {
                    for (a, &b) in dx.data_mut().iter_mut().zip(&g.data()[c * plane..(c + 1) * plane]) {
                        *a += b;
                    }
                }
                out.push((*x, dx));
            }
            BceLogits { x, target } => {
                // d/dx BCE(sigmoid(x), t) = sigmoid(x) - t
                let p = self.v(*x).map(kernels::sigmoid);
                let d = p.zip_map(self.v(*target), |s, t| s - t)?;
                out.push((*x, d.zip_map(g, |a, b| a * b)?));
                if self.wants(*target) {
                    // d/dt = -x
                    out.push((*target, g.zip_map(self.v(*x), |a, v| -a * v)?));
                }
            }
        }
        Ok(out)
    }
}

fn conv_geom(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    let [cin, h, wd] = x[..] else {
        return Err(Error::shape("conv2d", format!("input must be (C,H,W), got {x:?}")));
    };
    let [cout, wcin, k, k2] = w[..] else {
        return Err(Error::shape("conv2d", format!("weight must be (O,I,k,k), got {w:?}")));
    };
    if wcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels, weight expects {wcin}"),
        ));
    }
    if k != k2 {
        return Err(Error::shape("conv2d", "kernel must be square"));
    }
    if ConvGeom::out_extent(h, k, stride, pad).is_none() || ConvGeom::out_extent(wd, k, stride, pad).is_none() {
        return Err(Error::shape(
            "conv2d",
            format!("output would be empty for input {h}x{wd}, kernel {k}, pad {pad}, stride {stride}"),
        ));
    }
    Ok(ConvGeom {
        cin,
        h,
        w: wd,
        cout,
        k,
        stride,
        pad,
    })
}

fn fc_dims(x: &[usize], w: &[usize], axis: usize) -> Result<([usize; 3], usize)> {
    let [a, b, c] = x[..] else {
        return Err(Error::shape("fc_axis", format!("input must be rank 3, got {x:?}")));
    };
    if axis > 1 {
        return Err(Error::shape("fc_axis", format!("axis {axis} not in {{0,1}}")));
    }
    let n = if axis == 0 { a } else { b };
    if w != [n, n] {
        return Err(Error::shape(
            "fc_axis",
            format!("weight {w:?} does not match axis extent {n}"),
        ));
    }
    Ok(([a, b, c], n))
}

fn bmm_dims(a: &[usize], b: &[usize]) -> Result<([usize; 4], Vec<usize>)> {
    let (ba, m, k) = match a[..] {
        [m, k] => (None, m, k),
        [bt, m, k] => (Some(bt), m, k),
        _ => return Err(Error::shape("bmm", format!("lhs rank {a:?}"))),
    };
    let (bb, k2, n) = match b[..] {
        [k, n] => (None, k, n),
        [bt, k, n] => (Some(bt), k, n),
        _ => return Err(Error::shape("bmm", format!("rhs rank {b:?}"))),
    };
    if ba != bb || k != k2 {
        return Err(Error::shape("bmm", format!("{a:?} x {b:?}")));
    }
    let batch = ba.unwrap_or(1);
    let shape = match ba {
        Some(bt) => vec![bt, m, n],
        None => vec![m, n],
    };
    Ok(([batch, m, k, n], shape))
}

/// Gather index realising an axis permutation of a row-major tensor.
pub fn permute_index(shape: &[usize], perm: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::shape("permute", format!("{perm:?} is not a permutation of rank {rank}")));
    }
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let n: usize = shape.iter().product();
    let mut index = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    for _ in 0..n {
        index.push(counter.iter().zip(perm).map(|(&c, &p)| c * in_strides[p]).sum());
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            if counter[ax] < out_shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    Ok((index, out_shape))
}
