//! Define-then-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in topological order, so a node's index is always
//! greater than the indices of its inputs. [`Graph::forward`] evaluates
//! every pending node, [`Graph::backward`] walks the tape once in reverse.
//!
//! [`Graph::grad_graph`] builds the gradient of a node as new graph nodes
//! instead of numbers. Those nodes can be differentiated again with
//! `backward`, which is the one second-order path the WGAN-GP penalty
//! needs. Only linear ops, the elementwise activations and reductions
//! have symbolic rules; max-pool and the fused loss do not.

use std::rc::Rc;

use crate::autodiff::tensor::{gemm, matmul_raw, transpose_raw, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

const NO_SOURCE: u32 = u32::MAX;

/// Linear index map used for im2col, padding, cropping and upsampling.
///
/// Output element `i` reads input element `src[i]`, or zero when the slot
/// has no source. The adjoint of a gather is a scatter-add over the same
/// map and vice versa.
#[derive(Debug)]
pub struct GatherMap {
    src: Vec<u32>,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
}

impl GatherMap {
    pub fn new(in_shape: &[usize], out_shape: &[usize], src: Vec<Option<usize>>) -> Result<Self> {
        let in_len: usize = in_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        if src.len() != out_len {
            return Err(Error::shape("gather map", format!("{} sources for output {:?}", src.len(), out_shape)));
        }
        let mut packed = Vec::with_capacity(src.len());
        for s in src {
            match s {
                Some(i) if i < in_len => packed.push(i as u32),
                Some(i) => {
                    return Err(Error::shape(
                        "gather map",
                        format!("source {} out of range for input {:?}", i, in_shape),
                    ))
                }
                None => packed.push(NO_SOURCE),
            }
        }
        Ok(GatherMap { src: packed, in_shape: in_shape.to_vec(), out_shape: out_shape.to_vec() })
    }

    pub fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    fn gather(&self, input: &[f64]) -> Vec<f64> {
        self.src.iter().map(|&s| if s == NO_SOURCE { 0.0 } else { input[s as usize] }).collect()
    }

    fn scatter_add(&self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.in_shape.iter().product()];
        for (&s, &v) in self.src.iter().zip(input) {
            if s != NO_SOURCE {
                out[s as usize] += v;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input(String),
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    MulConst(NodeId, Rc<Tensor>),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    AddBias(NodeId, NodeId),
    SumRows(NodeId),
    BroadcastRows(NodeId, usize),
    SumCols(NodeId),
    BroadcastCols(NodeId, usize),
    Gather(NodeId, Rc<GatherMap>),
    ScatterAdd(NodeId, Rc<GatherMap>),
    Reshape(NodeId, Vec<usize>),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Mean(NodeId),
    Sum(NodeId),
    Expand(NodeId, Vec<usize>),
    MaxPoolRows(NodeId, usize),
    BceWithLogits(NodeId, Rc<Tensor>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MulConst(..) => "mul_const",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::AddBias(..) => "add_bias",
            Op::SumRows(..) => "sum_rows",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::SumCols(..) => "sum_cols",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::Gather(..) => "gather",
            Op::ScatterAdd(..) => "scatter_add",
            Op::Reshape(..) => "reshape",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Mean(..) => "mean",
            Op::Sum(..) => "sum",
            Op::Expand(..) => "expand",
            Op::MaxPoolRows(..) => "max_pool_rows",
            Op::BceWithLogits(..) => "bce_with_logits",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Input(_) | Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) | Op::AddBias(a, b) => {
                vec![a, b]
            }
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::MulConst(a, _)
            | Op::Transpose(a)
            | Op::SumRows(a)
            | Op::BroadcastRows(a, _)
            | Op::SumCols(a)
            | Op::BroadcastCols(a, _)
            | Op::Gather(a, _)
            | Op::ScatterAdd(a, _)
            | Op::Reshape(a, _)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Mean(a)
            | Op::Sum(a)
            | Op::Expand(a, _)
            | Op::MaxPoolRows(a, _)
            | Op::BceWithLogits(a, _) => vec![a],
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros of `shape` when no gradient reached it.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op) -> NodeId {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { op, value: None, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value: Some(value), requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    /// A trainable leaf; `backward` reports its gradient.
    pub fn parameter(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    /// A named placeholder bound at [`Graph::forward`] time.
    pub fn input(&mut self, name: &str, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op: Op::Input(name.to_string()), value: None, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a, b))
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(a, c))
    }
    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::AddScalar(a, c))
    }
    /// Elementwise product with a tensor that is not differentiated.
    pub fn mul_const(&mut self, a: NodeId, c: Tensor) -> NodeId {
        self.push(Op::MulConst(a, Rc::new(c)))
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }
    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose(a))
    }
    /// `[n,m] + [m]`, the bias added to every row.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::AddBias(a, bias))
    }
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumRows(a))
    }
    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> NodeId {
        self.push(Op::BroadcastRows(a, rows))
    }
    /// `[n,m] -> [n]`, summing each row.
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumCols(a))
    }
    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> NodeId {
        self.push(Op::BroadcastCols(a, cols))
    }
    pub fn gather(&mut self, a: NodeId, map: Rc<GatherMap>) -> NodeId {
        self.push(Op::Gather(a, map))
    }
    pub fn scatter_add(&mut self, a: NodeId, map: Rc<GatherMap>) -> NodeId {
        self.push(Op::ScatterAdd(a, map))
    }
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::Reshape(a, shape.to_vec()))
    }
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }
    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        self.push(Op::LeakyRelu(a, slope))
    }
    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }
    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }
    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a))
    }
    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sqrt(a))
    }
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }
    /// Broadcast a single-element tensor to `shape`.
    pub fn expand(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::Expand(a, shape.to_vec()))
    }
    /// `[groups*rows, c] -> [groups, c]`, max over the rows of each group.
    pub fn max_pool_rows(&mut self, a: NodeId, rows: usize) -> NodeId {
        self.push(Op::MaxPoolRows(a, rows))
    }
    /// Mean binary cross-entropy between `sigmoid(logits)` and `targets`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: Tensor) -> NodeId {
        self.push(Op::BceWithLogits(logits, Rc::new(targets)))
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.nodes.get(id.0).ok_or_else(|| Error::State(format!("unknown node {}", id.0)))?.value.as_ref().ok_or_else(
            || {
                Error::State(format!(
                    "node {} ({}) has not been evaluated; run forward first",
                    id.0,
                    self.nodes[id.0].op.name()
                ))
            },
        )
    }

    /// Evaluates every pending node up to and including `root`, binding
    /// named inputs from `inputs`, and returns the value of `root`.
    pub fn forward(&mut self, root: NodeId, inputs: &[(&str, &Tensor)]) -> Result<&Tensor> {
        if root.0 >= self.nodes.len() {
            return Err(Error::State(format!("unknown node {}", root.0)));
        }
        for i in 0..=root.0 {
            if self.nodes[i].value.is_some() {
                continue;
            }
            let value = match &self.nodes[i].op {
                Op::Input(name) => inputs
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, t)| (*t).clone())
                    .ok_or_else(|| Error::State(format!("input '{}' is not bound", name)))?,
                _ => self.eval_node(i)?,
            };
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{} (node {}) produced a non-finite value",
                    self.nodes[i].op.name(),
                    i
                )));
            }
            self.nodes[i].value = Some(value);
        }
        self.value(root)
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0].value.as_ref().expect("inputs are evaluated before their consumers")
    }

    fn eval_node(&self, i: usize) -> Result<Tensor> {
        let op = &self.nodes[i].op;
        let name = op.name();
        let same_shape = |a: &Tensor, b: &Tensor| -> Result<()> {
            if a.shape() != b.shape() {
                Err(Error::shape(name, format!("{:?} vs {:?}", a.shape(), b.shape())))
            } else {
                Ok(())
            }
        };
        let matrix = |t: &Tensor| -> Result<(usize, usize)> {
            match *t.shape() {
                [r, c] => Ok((r, c)),
                _ => Err(Error::shape(name, format!("expected a matrix, got {:?}", t.shape()))),
            }
        };
        let out = match op {
            Op::Input(_) | Op::Leaf => unreachable!("leaves carry their value"),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                same_shape(x, y)?;
                match op {
                    Op::Add(..) => x.zip_map(y, |p, q| p + q),
                    Op::Sub(..) => x.zip_map(y, |p, q| p - q),
                    Op::Mul(..) => x.zip_map(y, |p, q| p * q),
                    _ => x.zip_map(y, |p, q| p / q),
                }
            }
            Op::Scale(a, c) => self.val(*a).map(|v| v * c),
            Op::AddScalar(a, c) => self.val(*a).map(|v| v + c),
            Op::MulConst(a, c) => {
                let x = self.val(*a);
                same_shape(x, c)?;
                x.zip_map(c, |p, q| p * q)
            }
            Op::MatMul(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                let ((m, k), (k2, n)) = (matrix(x)?, matrix(y)?);
                if k != k2 {
                    return Err(Error::shape(name, format!("{:?} x {:?}", x.shape(), y.shape())));
                }
                Tensor::new(vec![m, n], matmul_raw(x.data(), y.data(), m, k, n))?
            }
            Op::Transpose(a) => {
                let x = self.val(*a);
                let (r, c) = matrix(x)?;
                Tensor::new(vec![c, r], transpose_raw(x.data(), r, c))?
            }
            Op::AddBias(a, b) => {
                let (x, bias) = (self.val(*a), self.val(*b));
                let (_, m) = matrix(x)?;
                if bias.shape() != [m] {
                    return Err(Error::shape(name, format!("{:?} + bias {:?}", x.shape(), bias.shape())));
                }
                let mut out = x.clone();
                for row in out.data_mut().chunks_mut(m) {
                    for (o, b) in row.iter_mut().zip(bias.data()) {
                        *o += b;
                    }
                }
                out
            }
            Op::SumRows(a) => {
                let x = self.val(*a);
                let (_, m) = matrix(x)?;
                let mut out = vec![0.0; m];
                for row in x.data().chunks(m) {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                Tensor::new(vec![m], out)?
            }
            Op::BroadcastRows(a, n) => {
                let x = self.val(*a);
                if x.shape().len() != 1 {
                    return Err(Error::shape(name, format!("expected a vector, got {:?}", x.shape())));
                }
                let m = x.len();
                let mut data = Vec::with_capacity(n * m);
                for _ in 0..*n {
                    data.extend_from_slice(x.data());
                }
                Tensor::new(vec![*n, m], data)?
            }
            Op::SumCols(a) => {
                let x = self.val(*a);
                let (r, m) = matrix(x)?;
                let data = x.data().chunks(m.max(1)).map(|row| row.iter().sum()).collect();
                Tensor::new(vec![r], data)?
            }
            Op::BroadcastCols(a, m) => {
                let x = self.val(*a);
                if x.shape().len() != 1 {
                    return Err(Error::shape(name, format!("expected a vector, got {:?}", x.shape())));
                }
                let mut data = Vec::with_capacity(x.len() * m);
                for &v in x.data() {
                    data.extend(std::iter::repeat_n(v, *m));
                }
                Tensor::new(vec![x.len(), *m], data)?
            }
            Op::Gather(a, map) => {
                let x = self.val(*a);
                if x.shape() != map.in_shape() {
                    return Err(Error::shape(name, format!("map expects {:?}, got {:?}", map.in_shape(), x.shape())));
                }
                Tensor::new(map.out_shape().to_vec(), map.gather(x.data()))?
            }
            Op::ScatterAdd(a, map) => {
                let x = self.val(*a);
                if x.shape() != map.out_shape() {
                    return Err(Error::shape(name, format!("map expects {:?}, got {:?}", map.out_shape(), x.shape())));
                }
                Tensor::new(map.in_shape().to_vec(), map.scatter_add(x.data()))?
            }
            Op::Reshape(a, shape) => self.val(*a).clone().reshaped(shape)?,
            Op::Relu(a) => self.val(*a).map(|v| v.max(0.0)),
            Op::LeakyRelu(a, s) => self.val(*a).map(|v| if v > 0.0 { v } else { v * s }),
            Op::Tanh(a) => self.val(*a).map(f64::tanh),
            Op::Sigmoid(a) => self.val(*a).map(sigmoid),
            Op::Square(a) => self.val(*a).map(|v| v * v),
            Op::Sqrt(a) => self.val(*a).map(f64::sqrt),
            Op::Mean(a) => {
                let x = self.val(*a);
                if x.is_empty() {
                    return Err(Error::shape(name, "mean of an empty tensor"));
                }
                Tensor::scalar(x.sum() / x.len() as f64)
            }
            Op::Sum(a) => Tensor::scalar(self.val(*a).sum()),
            Op::Expand(a, shape) => {
                let x = self.val(*a);
                if x.len() != 1 {
                    return Err(Error::shape(name, format!("expected one element, got {:?}", x.shape())));
                }
                Tensor::full(shape, x.item())
            }
            Op::MaxPoolRows(a, rows) => {
                let x = self.val(*a);
                let (r, c) = matrix(x)?;
                if *rows == 0 || r % rows != 0 {
                    return Err(Error::shape(name, format!("{} rows not divisible into groups of {}", r, rows)));
                }
                let groups = r / rows;
                let mut out = vec![f64::NEG_INFINITY; groups * c];
                for (ri, row) in x.data().chunks(c).enumerate() {
                    let g = ri / rows;
                    for (o, &v) in out[g * c..(g + 1) * c].iter_mut().zip(row) {
                        if v > *o {
                            *o = v;
                        }
                    }
                }
                Tensor::new(vec![groups, c], out)?
            }
            Op::BceWithLogits(a, t) => {
                let z = self.val(*a);
                same_shape(z, t)?;
                if z.is_empty() {
                    return Err(Error::shape(name, "empty batch"));
                }
                let total: f64 =
                    z.data().iter().zip(t.data()).map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()).sum();
                Tensor::scalar(total / z.len() as f64)
            }
        };
        Ok(out)
    }

    fn check_evaluated(&self, root: NodeId) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::State(format!("unknown node {}", root.0)));
        }
        if let Some(i) = (0..=root.0).find(|&i| self.nodes[i].value.is_none()) {
            return Err(Error::State(format!(
                "backward requested before forward: node {} ({}) is not evaluated",
                i,
                self.nodes[i].op.name()
            )));
        }
        Ok(())
    }

    /// Reverse pass from `root`. `seed` defaults to ones shaped like the root.
    pub fn backward(&self, root: NodeId, seed: Option<Tensor>) -> Result<Gradients> {
        self.check_evaluated(root)?;
        let root_shape = self.val(root).shape().to_vec();
        let seed = seed.unwrap_or_else(|| Tensor::full(&root_shape, 1.0));
        if seed.shape() != root_shape.as_slice() {
            return Err(Error::shape("backward", format!("seed {:?} for output {:?}", seed.shape(), root_shape)));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, contribution) in self.vjp(i, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Numeric vector-Jacobian products of node `i` for upstream gradient `g`.
    fn vjp(&self, i: usize, g: &Tensor) -> Result<Vec<(NodeId, Tensor)>> {
        let out = match &self.nodes[i].op {
            Op::Input(_) | Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => {
                vec![(*a, g.zip_map(self.val(*b), |p, q| p * q)), (*b, g.zip_map(self.val(*a), |p, q| p * q))]
            }
            Op::Div(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                let gb: Vec<f64> =
                    g.data().iter().zip(x.data()).zip(y.data()).map(|((&g, &x), &y)| -g * x / (y * y)).collect();
                vec![(*a, g.zip_map(y, |p, q| p / q)), (*b, Tensor::new(y.shape().to_vec(), gb)?)]
            }
            Op::Scale(a, c) => vec![(*a, g.map(|v| v * c))],
            Op::AddScalar(a, _) => vec![(*a, g.clone())],
            Op::MulConst(a, c) => vec![(*a, g.zip_map(c, |p, q| p * q))],
            Op::MatMul(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                let (m, k) = (x.shape()[0], x.shape()[1]);
                let n = y.shape()[1];
                vec![
                    (*a, Tensor::new(vec![m, k], gemm(g.data(), false, y.data(), true, m, n, k))?),
                    (*b, Tensor::new(vec![k, n], gemm(x.data(), true, g.data(), false, k, m, n))?),
                ]
            }
            Op::Transpose(a) => {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                vec![(*a, Tensor::new(vec![c, r], transpose_raw(g.data(), r, c))?)]
            }
            Op::AddBias(a, b) => {
                let m = self.val(*b).len();
                let mut gb = vec![0.0; m];
                for row in g.data().chunks(m) {
                    for (o, v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                vec![(*a, g.clone()), (*b, Tensor::new(vec![m], gb)?)]
            }
            Op::SumRows(a) => {
                let n = self.val(*a).shape()[0];
                let mut data = Vec::with_capacity(n * g.len());
                for _ in 0..n {
                    data.extend_from_slice(g.data());
                }
                vec![(*a, Tensor::new(self.val(*a).shape().to_vec(), data)?)]
            }
            Op::BroadcastRows(a, _) => {
                let m = self.val(*a).len();
                let mut ga = vec![0.0; m];
                for row in g.data().chunks(m) {
                    for (o, v) in ga.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                vec![(*a, Tensor::new(vec![m], ga)?)]
            }
            Op::SumCols(a) => {
                let shape = self.val(*a).shape().to_vec();
                let m = shape[1];
                let mut data = Vec::with_capacity(shape[0] * m);
                for &v in g.data() {
                    data.extend(std::iter::repeat_n(v, m));
                }
                vec![(*a, Tensor::new(shape, data)?)]
            }
            Op::BroadcastCols(a, m) => {
                let data = g.data().chunks((*m).max(1)).map(|r| r.iter().sum()).collect();
                vec![(*a, Tensor::new(self.val(*a).shape().to_vec(), data)?)]
            }
            Op::Gather(a, map) => {
                vec![(*a, Tensor::new(map.in_shape().to_vec(), map.scatter_add(g.data()))?)]
            }
            Op::ScatterAdd(a, map) => {
                vec![(*a, Tensor::new(map.out_shape().to_vec(), map.gather(g.data()))?)]
            }
            Op::Reshape(a, _) => vec![(*a, g.clone().reshaped(self.val(*a).shape())?)],
            Op::Relu(a) => vec![(*a, g.zip_map(self.val(*a), |g, x| if x > 0.0 { g } else { 0.0 }))],
            Op::LeakyRelu(a, s) => vec![(*a, g.zip_map(self.val(*a), |g, x| if x > 0.0 { g } else { g * s }))],
            Op::Tanh(_) | Op::Sigmoid(_) => {
                let y = self.nodes[i].value.as_ref().expect("evaluated");
                let a = self.nodes[i].op.inputs()[0];
                let d = if matches!(self.nodes[i].op, Op::Tanh(_)) {
                    g.zip_map(y, |g, y| g * (1.0 - y * y))
                } else {
                    g.zip_map(y, |g, y| g * y * (1.0 - y))
                };
                vec![(a, d)]
            }
            Op::Square(a) => vec![(*a, g.zip_map(self.val(*a), |g, x| 2.0 * g * x))],
            Op::Sqrt(a) => {
                let y = self.nodes[i].value.as_ref().expect("evaluated");
                vec![(*a, g.zip_map(y, |g, y| g / (2.0 * y)))]
            }
            Op::Mean(a) => {
                let x = self.val(*a);
                vec![(*a, Tensor::full(x.shape(), g.item() / x.len() as f64))]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(self.val(*a).shape(), g.item()))],
            Op::Expand(a, _) => vec![(*a, Tensor::full(self.val(*a).shape(), g.sum()))],
            Op::MaxPoolRows(a, rows) => {
                let x = self.val(*a);
                let (r, c) = (x.shape()[0], x.shape()[1]);
                let y = self.nodes[i].value.as_ref().expect("evaluated");
                let mut ga = vec![0.0; r * c];
                let mut routed = vec![false; y.len()];
                for ri in 0..r {
                    let grp = ri / rows;
                    for ci in 0..c {
                        let o = grp * c + ci;
                        if !routed[o] && x.data()[ri * c + ci] == y.data()[o] {
                            ga[ri * c + ci] = g.data()[o];
                            routed[o] = true;
                        }
                    }
                }
                vec![(*a, Tensor::new(vec![r, c], ga)?)]
            }
            Op::BceWithLogits(a, t) => {
                let z = self.val(*a);
                let scale = g.item() / z.len() as f64;
                vec![(*a, z.zip_map(t, |z, y| (sigmoid(z) - y) * scale))]
            }
        };
        Ok(out)
    }

    /// Builds `d sum(root) / d wrt` as graph nodes so the result can itself
    /// be differentiated. Call [`Graph::forward`] afterwards to evaluate
    /// the new nodes. Returns one gradient node per entry of `wrt`.
    pub fn grad_graph(&mut self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        self.check_evaluated(root)?;
        let n = root.0 + 1;
        // Only nodes that depend on a `wrt` node carry gradient to it.
        let mut on_path = vec![false; n];
        for &w in wrt {
            if w.0 < n {
                on_path[w.0] = true;
            }
        }
        for i in 0..n {
            if !on_path[i] && self.nodes[i].op.inputs().iter().any(|p| on_path[p.0]) {
                on_path[i] = true;
            }
        }
        let mut grads: Vec<Option<NodeId>> = vec![None; n];
        if on_path[root.0] {
            let ones = Tensor::full(self.val(root).shape(), 1.0);
            grads[root.0] = Some(self.constant(ones));
        }
        for i in (0..n).rev() {
            if !on_path[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            for (input, contribution) in self.symbolic_vjp(i, g)? {
                if !on_path[input.0] {
                    continue;
                }
                grads[input.0] = Some(match grads[input.0] {
                    Some(acc) => self.add(acc, contribution),
                    None => contribution,
                });
            }
        }
        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            let id = match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.value(w)?.shape().to_vec();
                    self.constant(Tensor::zeros(&shape))
                }
            };
            out.push(id);
        }
        Ok(out)
    }

    fn symbolic_vjp(&mut self, i: usize, g: NodeId) -> Result<Vec<(NodeId, NodeId)>> {
        let node = NodeId(i);
        let op = self.nodes[i].op.clone();
        let out = match op {
            Op::Input(_) | Op::Leaf => vec![],
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => vec![(a, g), (b, self.scale(g, -1.0))],
            Op::Mul(a, b) => {
                let ga = self.mul(g, b);
                let gb = self.mul(g, a);
                vec![(a, ga), (b, gb)]
            }
            Op::Div(a, b) => {
                let ga = self.div(g, b);
                let q = self.div(node, b);
                let t = self.mul(g, q);
                vec![(a, ga), (b, self.scale(t, -1.0))]
            }
            Op::Scale(a, c) => vec![(a, self.scale(g, c))],
            Op::AddScalar(a, _) => vec![(a, g)],
            Op::MulConst(a, c) => vec![(a, self.push(Op::MulConst(g, c)))],
            Op::MatMul(a, b) => {
                let bt = self.transpose(b);
                let ga = self.matmul(g, bt);
                let at = self.transpose(a);
                let gb = self.matmul(at, g);
                vec![(a, ga), (b, gb)]
            }
            Op::Transpose(a) => vec![(a, self.transpose(g))],
            Op::AddBias(a, b) => vec![(a, g), (b, self.sum_rows(g))],
            Op::SumRows(a) => {
                let rows = self.val(a).shape()[0];
                vec![(a, self.broadcast_rows(g, rows))]
            }
            Op::BroadcastRows(a, _) => vec![(a, self.sum_rows(g))],
            Op::SumCols(a) => {
                let cols = self.val(a).shape()[1];
                vec![(a, self.broadcast_cols(g, cols))]
            }
            Op::BroadcastCols(a, _) => vec![(a, self.sum_cols(g))],
            Op::Gather(a, map) => vec![(a, self.scatter_add(g, map))],
            Op::ScatterAdd(a, map) => vec![(a, self.gather(g, map))],
            Op::Reshape(a, _) => {
                let shape = self.val(a).shape().to_vec();
                vec![(a, self.reshape(g, &shape))]
            }
            Op::Relu(a) => {
                let mask = self.val(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                vec![(a, self.mul_const(g, mask))]
            }
            Op::LeakyRelu(a, s) => {
                let mask = self.val(a).map(|x| if x > 0.0 { 1.0 } else { s });
                vec![(a, self.mul_const(g, mask))]
            }
            Op::Tanh(a) => {
                let sq = self.square(node);
                let neg = self.scale(sq, -1.0);
                let d = self.add_scalar(neg, 1.0);
                vec![(a, self.mul(g, d))]
            }
            Op::Sigmoid(a) => {
                let neg = self.scale(node, -1.0);
                let one_minus = self.add_scalar(neg, 1.0);
                let d = self.mul(node, one_minus);
                vec![(a, self.mul(g, d))]
            }
            Op::Square(a) => {
                let two_x = self.scale(a, 2.0);
                vec![(a, self.mul(g, two_x))]
            }
            Op::Sqrt(a) => {
                let two_y = self.scale(node, 2.0);
                vec![(a, self.div(g, two_y))]
            }
            Op::Mean(a) => {
                let shape = self.val(a).shape().to_vec();
                let len = self.val(a).len() as f64;
                let s = self.scale(g, 1.0 / len);
                vec![(a, self.expand(s, &shape))]
            }
            Op::Sum(a) => {
                let shape = self.val(a).shape().to_vec();
                vec![(a, self.expand(g, &shape))]
            }
            Op::Expand(a, _) => vec![(a, self.sum(g))],
            Op::MaxPoolRows(..) | Op::BceWithLogits(..) => {
                return Err(Error::Unsupported(format!("second-order gradient through {}", op.name())))
            }
        };
        Ok(out)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
