use std::collections::HashMap;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::{GradBuffer, ParamId, ParamStore};
use super::tensor::Tensor;

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation whose forward and backward rules live outside the engine.
///
/// `backward` returns one gradient per input, shaped like that input.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_output: &Tensor<T>) -> Vec<Tensor<T>>;
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, T),
    Sigmoid(NodeId),
    Tanh(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols {
        input: NodeId,
        start: usize,
    },
    Row {
        input: NodeId,
        row: usize,
    },
    Gather {
        table: NodeId,
        indices: Vec<usize>,
    },
    Mask {
        input: NodeId,
        mask: Vec<T>,
    },
    LogSumExp(NodeId),
    Max {
        input: NodeId,
        argmax: usize,
    },
    Sum(NodeId),
    SelectSum {
        input: NodeId,
        positions: Vec<(usize, usize)>,
    },
    Custom {
        inputs: Vec<NodeId>,
        op: Box<dyn CustomOp<T>>,
    },
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

struct Node<T: Scalar> {
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Option<GradBuffer<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to a non-parameter node, if it
    /// was reached.
    pub fn node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].as_ref()
    }

    /// Gradient with respect to a parameter; zeros when not reached.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.as_ref().map(|b| b.get(id))
    }

    pub fn into_params(self) -> Option<GradBuffer<T>> {
        self.params
    }
}

/// Tape of operations recorded for one forward pass.
pub struct Graph<'p, T: Scalar> {
    params: Option<&'p ParamStore<T>>,
    param_nodes: HashMap<ParamId, NodeId>,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> fmt::Debug for Graph<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("has_params", &self.params.is_some())
            .finish()
    }
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<T: Scalar>(op: &'static str, t: Tensor<T>) -> Result<Tensor<T>> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite { op })
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// A graph without trainable parameters.
    pub fn new() -> Self {
        Graph {
            params: None,
            param_nodes: HashMap::new(),
            nodes: Vec::new(),
        }
    }

    /// A graph that can reference tensors of `params` without copying them.
    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Graph {
            params: Some(params),
            param_nodes: HashMap::new(),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        match &self.nodes[id.0].value {
            Value::Owned(t) => t,
            Value::Param(p) => self.params.expect("param node on a graph without params").get(*p),
        }
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A free input whose gradient is reported by [`Gradients::node`].
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// The node standing for parameter `id`; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        assert!(self.params.is_some(), "Graph::param on a graph without params");
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: true,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, n);
        n
    }

    fn param_of(&self, id: NodeId) -> Option<ParamId> {
        match self.nodes[id.0].value {
            Value::Param(p) => Some(p),
            Value::Owned(_) => None,
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let v = check_finite("matmul", v)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    fn zip_same(&self, op: &'static str, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        check_finite(op, Tensor::from_vec(ta.shape().to_vec(), data)?)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// Adds a `1 × c` row to every row of an `r × c` matrix (broadcast over
    /// the sequence axis).
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err("add_row", ta.shape(), tr.shape()));
        }
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tr.data()[i % c])
            .collect();
        let v = check_finite("add_row", Tensor::from_vec(vec![ta.rows(), c], data)?)?;
        let rg = self.any_grad(&[a, row]);
        Ok(self.push(v, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> Result<NodeId> {
        let v = check_finite("scale", self.value(a).map(|x| x * factor))?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(v, Op::Scale(a, factor), rg))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = check_finite("sigmoid", self.value(a).map(sigmoid))?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(v, Op::Sigmoid(a), rg))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = check_finite("tanh", self.value(a).map(T::tanh))?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(v, Op::Tanh(a), rg))
    }

    /// Concatenation along the feature (column) axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat_cols of nothing".into()));
        }
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]).shape(), t.shape()));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let v = Tensor::from_vec(vec![rows, cols], data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Concatenation along the sequence (row) axis.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat_rows of nothing".into()));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]).shape(), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let v = Tensor::from_vec(vec![rows, cols], data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start .. start + len`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(a);
        if start + len > t.cols() || len == 0 {
            return Err(shape_err("slice_cols", t.shape(), &[start, len]));
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.row_slice(r)[start..start + len]);
        }
        let v = Tensor::from_vec(vec![rows, len], data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(v, Op::SliceCols { input: a, start }, rg))
    }

    /// Row `row` as a `1 × c` tensor.
    pub fn row(&mut self, a: NodeId, row: usize) -> Result<NodeId> {
        let t = self.value(a);
        if row >= t.rows() {
            return Err(shape_err("row", t.shape(), &[row]));
        }
        let v = Tensor::row(t.row_slice(row).to_vec());
        let rg = self.any_grad(&[a]);
        Ok(self.push(v, Op::Row { input: a, row }, rg))
    }

    /// Embedding look-up: stacks rows `indices` of `table` into a
    /// `len(indices) × d` matrix.
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        if indices.is_empty() {
            return Err(Error::Invalid("gather with no indices".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * t.cols());
        for &i in indices {
            if i >= t.rows() {
                return Err(shape_err("gather", t.shape(), &[i]));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let v = Tensor::from_vec(vec![indices.len(), t.cols()], data)?;
        let rg = self.any_grad(&[table]);
        Ok(self.push(
            v,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Multiplies by a fixed mask; the mask receives no gradient.
    pub fn apply_mask(&mut self, a: NodeId, mask: Vec<T>) -> Result<NodeId> {
        let t = self.value(a);
        if mask.len() != t.len() {
            return Err(shape_err("apply_mask", t.shape(), &[mask.len()]));
        }
        let data = t.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let v = check_finite("apply_mask", Tensor::from_vec(t.shape().to_vec(), data)?)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(v, Op::Mask { input: a, mask }, rg))
    }

    /// Inverted dropout: in training mode each entry is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`;
    /// otherwise the input is returned unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: NodeId, rate: f64, training: bool, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        self.apply_mask(a, mask)
    }

    /// `log Σ exp(a)` over every entry, as a `1 × 1` node.
    pub fn logsumexp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = logsumexp_slice(self.value(a).data());
        let v = check_finite("logsumexp", Tensor::scalar(v))?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(v, Op::LogSumExp(a), rg))
    }

    /// Maximum entry and its flat index (first occurrence on ties).
    pub fn max(&mut self, a: NodeId) -> Result<(NodeId, usize)> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Invalid("max of empty tensor".into()));
        }
        let mut best = 0;
        for (i, &x) in t.data().iter().enumerate() {
            if x > t.data()[best] {
                best = i;
            }
        }
        let v = Tensor::scalar(t.data()[best]);
        let rg = self.any_grad(&[a]);
        Ok((self.push(v, Op::Max { input: a, argmax: best }, rg), best))
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = check_finite("sum", Tensor::scalar(self.value(a).sum()))?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(v, Op::Sum(a), rg))
    }

    /// Sum of the entries at `(row, col)` positions; repeats count again.
    pub fn select_sum(&mut self, a: NodeId, positions: &[(usize, usize)]) -> Result<NodeId> {
        let t = self.value(a);
        let mut acc = T::zero();
        for &(r, c) in positions {
            if r >= t.rows() || c >= t.cols() {
                return Err(shape_err("select_sum", t.shape(), &[r, c]));
            }
            acc += t.get(r, c);
        }
        let v = check_finite("select_sum", Tensor::scalar(acc))?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            v,
            Op::SelectSum {
                input: a,
                positions: positions.to_vec(),
            },
            rg,
        ))
    }

    pub fn custom(&mut self, inputs: &[NodeId], op: Box<dyn CustomOp<T>>) -> Result<NodeId> {
        let name = op.name();
        let v = {
            let vals: Vec<&Tensor<T>> = inputs.iter().map(|&i| self.value(i)).collect();
            op.forward(&vals)?
        };
        let v = check_finite(name, v)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(
            v,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        ))
    }

    /// Back-propagates from a scalar `loss`, returning node gradients and,
    /// when the graph has a parameter store, dense parameter gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let mut buf = self.params.map(GradBuffer::zeros_like);
        let nodes = self.backward_impl(loss, buf.as_mut())?;
        Ok(Gradients { nodes, params: buf })
    }

    /// Like [`Graph::backward`] but adds parameter gradients into `buf`.
    pub fn backward_into(&self, loss: NodeId, buf: &mut GradBuffer<T>) -> Result<()> {
        self.backward_impl(loss, Some(buf)).map(|_| ())
    }

    fn backward_impl(&self, loss: NodeId, mut buf: Option<&mut GradBuffer<T>>) -> Result<Vec<Option<Tensor<T>>>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(grads);
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let out = self.value(NodeId(idx));
            match &node.op {
                Op::Leaf => {
                    if let Some(p) = self.param_of(NodeId(idx)) {
                        if let Some(b) = buf.as_deref_mut() {
                            b.get_mut(p).add_assign(&g);
                        }
                        continue;
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.requires_grad(*a) {
                        let ga = g.matmul(&tb.transpose())?;
                        self.accumulate(&mut grads, &mut buf, *a, ga);
                    }
                    if self.requires_grad(*b) {
                        let gb = ta.transpose().matmul(&g)?;
                        self.accumulate(&mut grads, &mut buf, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, &mut buf, *a, g.clone());
                    self.accumulate(&mut grads, &mut buf, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, &mut buf, *a, g.clone());
                    self.accumulate(&mut grads, &mut buf, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = zip(&g, tb, |x, y| x * y);
                    let gb = zip(&g, ta, |x, y| x * y);
                    self.accumulate(&mut grads, &mut buf, *a, ga);
                    self.accumulate(&mut grads, &mut buf, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let c = g.cols();
                    let mut gr = vec![T::zero(); c];
                    for (i, &x) in g.data().iter().enumerate() {
                        gr[i % c] += x;
                    }
                    self.accumulate(&mut grads, &mut buf, *a, g.clone());
                    self.accumulate(&mut grads, &mut buf, *row, Tensor::row(gr));
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    self.accumulate(&mut grads, &mut buf, *a, g.map(|x| x * f));
                }
                Op::Sigmoid(a) => {
                    let ga = zip(&g, out, |x, y| x * y * (T::one() - y));
                    self.accumulate(&mut grads, &mut buf, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = zip(&g, out, |x, y| x * (T::one() - y * y));
                    self.accumulate(&mut grads, &mut buf, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.requires_grad(p) {
                            let mut data = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                data.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                            }
                            self.accumulate(&mut grads, &mut buf, p, Tensor::from_vec(vec![rows, w], data)?);
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.value(p).rows();
                        if self.requires_grad(p) {
                            let data = g.data()[offset * cols..(offset + h) * cols].to_vec();
                            self.accumulate(&mut grads, &mut buf, p, Tensor::from_vec(vec![h, cols], data)?);
                        }
                        offset += h;
                    }
                }
                Op::SliceCols { input, start } => {
                    let src = self.value(*input);
                    let mut ga = Tensor::zeros(&[src.rows(), src.cols()]);
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            ga.set(r, start + c, g.get(r, c));
                        }
                    }
                    self.accumulate(&mut grads, &mut buf, *input, ga);
                }
                Op::Row { input, row } => {
                    let src = self.value(*input);
                    let mut ga = Tensor::zeros(&[src.rows(), src.cols()]);
                    for c in 0..g.cols() {
                        ga.set(*row, c, g.get(0, c));
                    }
                    self.accumulate(&mut grads, &mut buf, *input, ga);
                }
                Op::Gather { table, indices } => {
                    if !self.requires_grad(*table) {
                        continue;
                    }
                    let param = self.param_of(*table);
                    match (param, buf.as_deref_mut()) {
                        (Some(p), Some(b)) => scatter_rows(b.get_mut(p), indices, &g),
                        (Some(_), None) => {}
                        (None, _) => {
                            let src = self.value(*table);
                            let mut ga = Tensor::zeros(&[src.rows(), src.cols()]);
                            scatter_rows(&mut ga, indices, &g);
                            self.accumulate(&mut grads, &mut buf, *table, ga);
                        }
                    }
                }
                Op::Mask { input, mask } => {
                    let ga = Tensor::from_vec(
                        g.shape().to_vec(),
                        g.data().iter().zip(mask).map(|(&x, &m)| x * m).collect(),
                    )?;
                    self.accumulate(&mut grads, &mut buf, *input, ga);
                }
                Op::LogSumExp(a) => {
                    let src = self.value(*a);
                    let lse = out.item();
                    let gs = g.item();
                    let ga = src.map(|x| gs * (x - lse).exp());
                    self.accumulate(&mut grads, &mut buf, *a, ga);
                }
                Op::Max { input, argmax } => {
                    let src = self.value(*input);
                    let mut ga = Tensor::zeros(src.shape());
                    ga.data_mut()[*argmax] = g.item();
                    self.accumulate(&mut grads, &mut buf, *input, ga);
                }
                Op::Sum(a) => {
                    let src = self.value(*a);
                    let ga = Tensor::full(src.shape(), g.item());
                    self.accumulate(&mut grads, &mut buf, *a, ga);
                }
                Op::SelectSum { input, positions } => {
                    let src = self.value(*input);
                    let mut ga = Tensor::zeros(src.shape());
                    let gs = g.item();
                    for &(r, c) in positions {
                        let cur = ga.get(r, c);
                        ga.set(r, c, cur + gs);
                    }
                    self.accumulate(&mut grads, &mut buf, *input, ga);
                }
                Op::Custom { inputs, op } => {
                    let vals: Vec<&Tensor<T>> = inputs.iter().map(|&i| self.value(i)).collect();
                    let gs = op.backward(&vals, out, &g);
                    for (&i, gi) in inputs.iter().zip(gs) {
                        self.accumulate(&mut grads, &mut buf, i, gi);
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor<T>>],
        buf: &mut Option<&mut GradBuffer<T>>,
        target: NodeId,
        g: Tensor<T>,
    ) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        if let Some(p) = self.param_of(target) {
            if let Some(b) = buf.as_deref_mut() {
                b.get_mut(p).add_assign(&g);
            }
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_vec(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("zip of equal shapes")
}

fn scatter_rows<T: Scalar>(dst: &mut Tensor<T>, indices: &[usize], g: &Tensor<T>) {
    let c = dst.cols();
    for (k, &i) in indices.iter().enumerate() {
        let src = g.row_slice(k);
        let row = &mut dst.data_mut()[i * c..(i + 1) * c];
        for (d, &s) in row.iter_mut().zip(src) {
            *d += s;
        }
    }
}

/// Numerically stable `log Σ exp(v)`; `-inf` for an empty or all-`-inf` slice.
pub(crate) fn logsumexp_slice<T: Scalar>(v: &[T]) -> T {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_at_zero_is_half_with_quarter_slope() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.variable(Tensor::scalar(0.0));
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).item(), 0.5);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.node(x).unwrap().item(), 0.25);
    }

    #[test]
    fn logsumexp_of_two_zeros_is_ln2() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::row(vec![0.0, 0.0]));
        let y = g.logsumexp(x).unwrap();
        assert!((g.value(y).item() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matmul_shape_rule() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 1]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 1]);
        let err = g.matmul(b, b).unwrap_err();
        assert!(err.to_string().contains("[3, 1]"), "{err}");
    }

    #[test]
    fn square_gradient() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.variable(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.node(x).unwrap().item(), 6.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.variable(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::scalar(f64::MAX));
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn unreached_params_get_zero_gradient() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::scalar(2.0));
        let unused = store.add("unused", Tensor::scalar(5.0));
        let mut g = Graph::with_params(&store);
        let u = g.param(used);
        let y = g.mul(u, u).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.param(used).unwrap().item(), 4.0);
        assert_eq!(grads.param(unused).unwrap().item(), 0.0);
    }

    #[test]
    fn dropout_identity_cases_and_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::full(&[1, 10_000], 1.0));
        assert_eq!(g.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(g.dropout(x, 0.5, false, &mut rng).unwrap(), x);
        assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
        let d = g.dropout(x, 0.5, true, &mut rng).unwrap();
        let zeros = g.value(d).data().iter().filter(|&&v| v == 0.0).count();
        let frac = zeros as f64 / 10_000.0;
        assert!((frac - 0.5).abs() < 0.02, "zero fraction {frac}");
        assert!(g.value(d).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn max_routes_gradient_to_argmax() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.variable(Tensor::row(vec![1.0, 4.0, 4.0, -2.0]));
        let (m, arg) = g.max(x).unwrap();
        assert_eq!(arg, 1);
        assert_eq!(g.value(m).item(), 4.0);
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.node(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn works_in_single_precision() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.variable(Tensor::row(vec![0.5f32, -1.0]));
        let t = g.tanh(x).unwrap();
        let s = g.sum(t).unwrap();
        let grads = g.backward(s).unwrap();
        let d = grads.node(x).unwrap().data()[0];
        assert!((d - (1.0 - 0.5f32.tanh().powi(2))).abs() < 1e-6);
    }
}
