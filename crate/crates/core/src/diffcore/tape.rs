//! Define-by-run operation tape with reverse-mode gradients.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends a node to its
//! [`Tape`]. Node ids are assigned in creation order, so inputs always have
//! smaller ids than outputs and a single reverse sweep visits every node
//! after all of its consumers.

use std::cell::{Ref, RefCell};
use std::fmt;

use super::array::NumArray;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Sigmoid,
    Tanh,
    Relu,
    Sqrt,
}

/// Elementwise kinds accepted by [`elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Div,
    Sigmoid,
    Tanh,
    Relu,
    Sqrt,
}

/// How the right operand of a binary op maps onto the left operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `b` has the shape of `a` with a trailing dimension of 1.
    TrailingOne,
    /// `b` is 1-D with the length of `a`'s last dimension.
    Row,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Binary { kind: BinaryKind, a: usize, b: usize, bcast: Broadcast },
    Unary { kind: UnaryKind, a: usize },
    Scale { a: usize, factor: f64 },
    Offset { a: usize },
    Sum { a: usize },
    MeanAxis { a: usize, axis: usize },
    Conv1d { x: usize, kernel: usize, bias: usize },
    Diff { a: usize },
    Reshape { a: usize },
    Permute { a: usize, perm: Vec<usize> },
    Concat { inputs: Vec<usize>, axis: usize },
    Narrow { a: usize, axis: usize, start: usize },
    PadLast { a: usize },
    Tile { a: usize },
}

struct Node {
    value: NumArray,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of evaluated operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Gradient for `var`, with unreached nodes reported as zeros.
    pub fn wrt_or_zero(&self, var: Var<'_>) -> Vec<f64> {
        match self.wrt(var) {
            Some(g) => g.to_vec(),
            None => vec![0.0; var.len()],
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: NumArray, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: NumArray) -> Var<'_> {
        self.leaf(value, false)
    }

    /// Records `value` as a differentiable leaf.
    pub fn param(&self, value: &NumArray) -> Var<'_> {
        let data = NumArray::new(value.shape().to_vec(), value.values().to_vec())
            .expect("shape already validated");
        self.leaf(data, true)
    }

    fn push(&self, value: NumArray, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// Replays the recorded operations in reverse, seeding `d loss / d loss = 1`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss was recorded on a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(id);
            let Some(g) = upper[0].as_deref() else {
                continue;
            };
            backprop_node(&nodes, node, g, lower);
        }
        Ok(Gradients { grads })
    }
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> Option<&'g mut Vec<f64>> {
    if !nodes[id].needs_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
}

/// `[outer, axis_len, inner]` view of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Source offset in the input for each output position of a permutation.
fn permute_sources(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total: usize = out_shape.iter().product();
    let mut src = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    let mut off = 0usize;
    for _ in 0..total {
        src.push(off);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            off += step[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= step[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    src
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            if let Some(ga) = slot(grads, nodes, *a) {
                // ga = g · bᵀ
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv.values()[p * n..(p + 1) * n];
                        ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                // gb = aᵀ · g
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let a_ip = av.values()[i * k + p];
                        let gbrow = &mut gb[p * n..(p + 1) * n];
                        for (o, x) in gbrow.iter_mut().zip(grow) {
                            *o += a_ip * x;
                        }
                    }
                }
            }
        }
        Op::Binary { kind, a, b, bcast } => {
            let av = nodes[*a].value.values();
            let bv = nodes[*b].value.values();
            let last = *nodes[*a].value.shape().last().unwrap_or(&1);
            let bi = |i: usize| match bcast {
                Broadcast::Same => i,
                Broadcast::TrailingOne => i / last,
                Broadcast::Row => i % last,
            };
            if let Some(ga) = slot(grads, nodes, *a) {
                for (i, gi) in g.iter().enumerate() {
                    ga[i] += match kind {
                        BinaryKind::Add | BinaryKind::Sub => *gi,
                        BinaryKind::Mul => gi * bv[bi(i)],
                        BinaryKind::Div => gi / bv[bi(i)],
                    };
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                for (i, gi) in g.iter().enumerate() {
                    let j = bi(i);
                    gb[j] += match kind {
                        BinaryKind::Add => *gi,
                        BinaryKind::Sub => -gi,
                        BinaryKind::Mul => gi * av[i],
                        BinaryKind::Div => -gi * av[i] / (bv[j] * bv[j]),
                    };
                }
            }
        }
        Op::Unary { kind, a } => {
            let x = nodes[*a].value.values();
            let y = node.value.values();
            if let Some(ga) = slot(grads, nodes, *a) {
                for i in 0..g.len() {
                    ga[i] += g[i]
                        * match kind {
                            UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
                            UnaryKind::Tanh => 1.0 - y[i] * y[i],
                            UnaryKind::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            // subgradient 0 at the kink keeps constant inputs finite
                            UnaryKind::Sqrt => {
                                if y[i] > 0.0 {
                                    0.5 / y[i]
                                } else {
                                    0.0
                                }
                            }
                        };
                }
            }
        }
        Op::Scale { a, factor } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for (o, gi) in ga.iter_mut().zip(g) {
                    *o += gi * factor;
                }
            }
        }
        Op::Offset { a } | Op::Reshape { a } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for (o, gi) in ga.iter_mut().zip(g) {
                    *o += gi;
                }
            }
        }
        Op::Sum { a } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                ga.iter_mut().for_each(|o| *o += g[0]);
            }
        }
        Op::MeanAxis { a, axis } => {
            let (outer, n, inner) = split_axis(nodes[*a].value.shape(), *axis);
            if let Some(ga) = slot(grads, nodes, *a) {
                let inv = 1.0 / n as f64;
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            ga[(o * n + k) * inner + i] += g[o * inner + i] * inv;
                        }
                    }
                }
            }
        }
        Op::Conv1d { x, kernel, bias } => {
            let xv = &nodes[*x].value;
            let kv = &nodes[*kernel].value;
            let t_len = *xv.shape().last().unwrap();
            let rows = xv.len() / t_len;
            let (channels, k) = (kv.shape()[0], kv.shape()[1]);
            let pad = (k - 1) / 2;
            if let Some(gx) = slot(grads, nodes, *x) {
                for r in 0..rows {
                    let kern = kv.row(r % channels);
                    for t in 0..t_len {
                        let gt = g[r * t_len + t];
                        for (j, w) in kern.iter().enumerate() {
                            let s = t + j;
                            if s >= pad && s - pad < t_len {
                                gx[r * t_len + s - pad] += gt * w;
                            }
                        }
                    }
                }
            }
            if let Some(gk) = slot(grads, nodes, *kernel) {
                for r in 0..rows {
                    let c = r % channels;
                    let xrow = xv.row(r);
                    for t in 0..t_len {
                        let gt = g[r * t_len + t];
                        for j in 0..k {
                            let s = t + j;
                            if s >= pad && s - pad < t_len {
                                gk[c * k + j] += gt * xrow[s - pad];
                            }
                        }
                    }
                }
            }
            if let Some(gb) = slot(grads, nodes, *bias) {
                for r in 0..rows {
                    gb[r % channels] += g[r * t_len..(r + 1) * t_len].iter().sum::<f64>();
                }
            }
        }
        Op::Diff { a } => {
            let t_len = *nodes[*a].value.shape().last().unwrap();
            if let Some(ga) = slot(grads, nodes, *a) {
                for (r, grow) in g.chunks(t_len).enumerate() {
                    for t in 1..t_len {
                        ga[r * t_len + t] += grow[t];
                        ga[r * t_len + t - 1] -= grow[t];
                    }
                }
            }
        }
        Op::Permute { a, perm } => {
            let src = permute_sources(nodes[*a].value.shape(), perm);
            if let Some(ga) = slot(grads, nodes, *a) {
                for (o, s) in src.iter().enumerate() {
                    ga[*s] += g[o];
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let out_shape = node.value.shape();
            let (outer, total, inner) = split_axis(out_shape, *axis);
            let mut offset = 0;
            for &inp in inputs {
                let len = nodes[inp].value.shape()[*axis];
                if let Some(gi) = slot(grads, nodes, inp) {
                    for o in 0..outer {
                        let dst = &mut gi[o * len * inner..(o + 1) * len * inner];
                        let src_start = (o * total + offset) * inner;
                        for (d, s) in dst.iter_mut().zip(&g[src_start..src_start + len * inner]) {
                            *d += s;
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Narrow { a, axis, start } => {
            let (outer, total, inner) = split_axis(nodes[*a].value.shape(), *axis);
            let len = node.value.shape()[*axis];
            if let Some(ga) = slot(grads, nodes, *a) {
                for o in 0..outer {
                    let dst_start = (o * total + start) * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    for (d, s) in ga[dst_start..dst_start + len * inner].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
        Op::PadLast { a } => {
            let t_in = *nodes[*a].value.shape().last().unwrap();
            let t_out = *node.value.shape().last().unwrap();
            if let Some(ga) = slot(grads, nodes, *a) {
                for (r, grow) in g.chunks(t_out).enumerate() {
                    for t in 0..t_in {
                        ga[r * t_in + t] += grow[t];
                    }
                }
            }
        }
        Op::Tile { a } => {
            let n = nodes[*a].value.len();
            if let Some(ga) = slot(grads, nodes, *a) {
                for chunk in g.chunks(n) {
                    for (o, x) in ga.iter_mut().zip(chunk) {
                        *o += x;
                    }
                }
            }
        }
    }
}

fn broadcast_mode(a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    let n = a.len();
    if n > 0 && b.len() == n && b[n - 1] == 1 && a[..n - 1] == b[..n - 1] {
        return Ok(Broadcast::TrailingOne);
    }
    if b.len() == 1 && n > 0 && a[n - 1] == b[0] {
        return Ok(Broadcast::Row);
    }
    Err(Error::Dimension(format!(
        "shapes {:?} and {:?} are not broadcast-compatible",
        a, b
    )))
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, NumArray> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_array(&self) -> NumArray {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.value().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The single value of a one-element array.
    pub fn item(&self) -> f64 {
        self.value().values()[0]
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands recorded on different tapes".into()))
        }
    }

    fn unary_map(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let out = {
            let v = self.value();
            let values = v.values().iter().map(|&x| f(x)).collect();
            NumArray::new(v.shape().to_vec(), values).expect("same shape")
        };
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(out, op, needs)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let out = {
            let a = self.value();
            let b = other.value();
            if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::Dimension(format!(
                    "matmul of {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![0.0; m * n];
            matmul_into(a.values(), b.values(), m, k, n, &mut out);
            NumArray::new(vec![m, n], out)?
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(out, Op::MatMul { a: self.id, b: other.id }, needs))
    }

    fn binary(&self, kind: BinaryKind, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (out, bcast) = {
            let a = self.value();
            let b = other.value();
            let bcast = broadcast_mode(a.shape(), b.shape())?;
            let last = *a.shape().last().unwrap_or(&1);
            let bv = b.values();
            let values = a
                .values()
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let y = match bcast {
                        Broadcast::Same => bv[i],
                        Broadcast::TrailingOne => bv[i / last],
                        Broadcast::Row => bv[i % last],
                    };
                    match kind {
                        BinaryKind::Add => x + y,
                        BinaryKind::Sub => x - y,
                        BinaryKind::Mul => x * y,
                        BinaryKind::Div => x / y,
                    }
                })
                .collect();
            (NumArray::new(a.shape().to_vec(), values)?, bcast)
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(
            out,
            Op::Binary {
                kind,
                a: self.id,
                b: other.id,
                bcast,
            },
            needs,
        ))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Add, other)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Sub, other)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Mul, other)
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Div, other)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary_map(
            Op::Unary {
                kind: UnaryKind::Sigmoid,
                a: self.id,
            },
            |x| 1.0 / (1.0 + (-x).exp()),
        )
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary_map(
            Op::Unary {
                kind: UnaryKind::Tanh,
                a: self.id,
            },
            f64::tanh,
        )
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary_map(
            Op::Unary {
                kind: UnaryKind::Relu,
                a: self.id,
            },
            |x| x.max(0.0),
        )
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.unary_map(
            Op::Unary {
                kind: UnaryKind::Sqrt,
                a: self.id,
            },
            f64::sqrt,
        )
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        self.unary_map(Op::Scale { a: self.id, factor }, |x| x * factor)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary_map(Op::Offset { a: self.id }, |x| x + c)
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.mul(*self)
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&self) -> Var<'t> {
        let s = self.value().values().iter().sum::<f64>();
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(NumArray::scalar(s), Op::Sum { a: self.id }, needs)
    }

    /// Mean of all entries as a scalar.
    pub fn mean(&self) -> Var<'t> {
        let n = self.len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Mean along `axis`, keeping it as a dimension of size 1.
    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            if axis >= a.ndim() {
                return Err(Error::Dimension(format!(
                    "axis {} out of range for shape {:?}",
                    axis,
                    a.shape()
                )));
            }
            let (outer, n, inner) = split_axis(a.shape(), axis);
            if n == 0 {
                return Err(Error::Domain("mean over an empty axis".into()));
            }
            // accumulate deviations from the first element so constant slices are exact
            let mut values = vec![0.0; outer * inner];
            let inv = 1.0 / n as f64;
            for o in 0..outer {
                for i in 0..inner {
                    let x0 = a.values()[o * n * inner + i];
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += a.values()[(o * n + k) * inner + i] - x0;
                    }
                    values[o * inner + i] = x0 + acc * inv;
                }
            }
            let mut shape = a.shape().to_vec();
            shape[axis] = 1;
            NumArray::new(shape, values)?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::MeanAxis { a: self.id, axis }, needs))
    }

    /// Depthwise "same" convolution along the last axis.
    ///
    /// Rows of `self` are assigned to kernel channels cyclically (`row % C`),
    /// so a batch of `[B·C, T]` rows shares one `[C, k]` kernel.
    pub fn conv1d_same(&self, kernel: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&kernel)?;
        self.same_tape(&bias)?;
        let out = {
            let x = self.value();
            let kv = kernel.value();
            let bv = bias.value();
            if kv.ndim() != 2 {
                return Err(Error::Dimension(format!("kernel shape {:?}", kv.shape())));
            }
            let (channels, k) = (kv.shape()[0], kv.shape()[1]);
            if k % 2 == 0 {
                return Err(Error::Config(format!("convolution kernel size must be odd, got {}", k)));
            }
            if bv.shape() != [channels] {
                return Err(Error::Dimension(format!(
                    "bias shape {:?} for {} channels",
                    bv.shape(),
                    channels
                )));
            }
            let t_len = *x.shape().last().ok_or_else(|| Error::Dimension("scalar input to conv".into()))?;
            let rows = if t_len == 0 { 0 } else { x.len() / t_len };
            if channels == 0 || rows % channels != 0 {
                return Err(Error::Dimension(format!(
                    "input shape {:?} does not tile {} channels",
                    x.shape(),
                    channels
                )));
            }
            let pad = (k - 1) / 2;
            let mut values = vec![0.0; x.len()];
            for r in 0..rows {
                let c = r % channels;
                let kern = kv.row(c);
                let xrow = x.row(r);
                for t in 0..t_len {
                    let mut acc = bv.values()[c];
                    for (j, w) in kern.iter().enumerate() {
                        let s = t + j;
                        if s >= pad && s - pad < t_len {
                            acc += w * xrow[s - pad];
                        }
                    }
                    values[r * t_len + t] = acc;
                }
            }
            NumArray::new(x.shape().to_vec(), values)?
        };
        let needs = self.tape.needs(&[self.id, kernel.id, bias.id]);
        Ok(self.tape.push(
            out,
            Op::Conv1d {
                x: self.id,
                kernel: kernel.id,
                bias: bias.id,
            },
            needs,
        ))
    }

    /// First difference along the last axis with a zero first element.
    pub fn diff_last(&self) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            let t_len = *a.shape().last().ok_or_else(|| Error::Dimension("scalar input to diff".into()))?;
            let mut values = vec![0.0; a.len()];
            if t_len > 0 {
                for (r, row) in a.values().chunks(t_len).enumerate() {
                    for t in 1..t_len {
                        values[r * t_len + t] = row[t] - row[t - 1];
                    }
                }
            }
            NumArray::new(a.shape().to_vec(), values)?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::Diff { a: self.id }, needs))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.value().reshaped(shape.to_vec())?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::Reshape { a: self.id }, needs))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            let mut seen = vec![false; a.ndim()];
            if perm.len() != a.ndim() || perm.iter().any(|&p| p >= a.ndim() || std::mem::replace(&mut seen[p], true)) {
                return Err(Error::Dimension(format!(
                    "invalid permutation {:?} for shape {:?}",
                    perm,
                    a.shape()
                )));
            }
            let src = permute_sources(a.shape(), perm);
            let values = src.iter().map(|&s| a.values()[s]).collect();
            NumArray::new(perm.iter().map(|&p| a.shape()[p]).collect(), values)?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(
            out,
            Op::Permute {
                a: self.id,
                perm: perm.to_vec(),
            },
            needs,
        ))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        self.permute(&[1, 0])
    }

    /// Concatenates `parts` along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero arrays".into()))?;
        let tape = first.tape;
        for p in parts {
            first.same_tape(p)?;
        }
        let out = {
            let nodes = tape.nodes.borrow();
            let base = nodes[first.id].value.shape().to_vec();
            if axis >= base.len() {
                return Err(Error::Dimension(format!("concat axis {} for shape {:?}", axis, base)));
            }
            let mut total = 0;
            for p in parts {
                let s = nodes[p.id].value.shape();
                let compatible = s.len() == base.len()
                    && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
                if !compatible {
                    return Err(Error::Dimension(format!(
                        "cannot concatenate {:?} with {:?} along axis {}",
                        s, base, axis
                    )));
                }
                total += s[axis];
            }
            let mut shape = base.clone();
            shape[axis] = total;
            let (outer, _, inner) = split_axis(&shape, axis);
            let mut values = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for p in parts {
                    let v = &nodes[p.id].value;
                    let len = v.shape()[axis] * inner;
                    values.extend_from_slice(&v.values()[o * len..(o + 1) * len]);
                }
            }
            NumArray::new(shape, values)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let needs = tape.needs(&ids);
        Ok(tape.push(out, Op::Concat { inputs: ids, axis }, needs))
    }

    /// Slice `start..start + len` of `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            if axis >= a.ndim() || start + len > a.shape()[axis] {
                return Err(Error::Dimension(format!(
                    "narrow({}, {}, {}) out of range for shape {:?}",
                    axis,
                    start,
                    len,
                    a.shape()
                )));
            }
            let (outer, total, inner) = split_axis(a.shape(), axis);
            let mut values = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let s = (o * total + start) * inner;
                values.extend_from_slice(&a.values()[s..s + len * inner]);
            }
            let mut shape = a.shape().to_vec();
            shape[axis] = len;
            NumArray::new(shape, values)?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(
            out,
            Op::Narrow {
                a: self.id,
                axis,
                start,
            },
            needs,
        ))
    }

    /// Right-pads the last axis with zeros up to `new_len`.
    pub fn pad_last(&self, new_len: usize) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            let t_len = *a.shape().last().ok_or_else(|| Error::Dimension("scalar input to pad".into()))?;
            if new_len < t_len {
                return Err(Error::Dimension(format!("cannot pad length {} down to {}", t_len, new_len)));
            }
            let rows = if t_len == 0 { 0 } else { a.len() / t_len };
            let mut values = vec![0.0; rows * new_len];
            for r in 0..rows {
                values[r * new_len..r * new_len + t_len].copy_from_slice(a.row(r));
            }
            let mut shape = a.shape().to_vec();
            *shape.last_mut().unwrap() = new_len;
            NumArray::new(shape, values)?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::PadLast { a: self.id }, needs))
    }

    /// Repeats the array `n` times along a new leading axis.
    pub fn tile(&self, n: usize) -> Var<'t> {
        let out = {
            let a = self.value();
            let mut values = Vec::with_capacity(a.len() * n);
            for _ in 0..n {
                values.extend_from_slice(a.values());
            }
            let mut shape = vec![n];
            shape.extend_from_slice(a.shape());
            NumArray::new(shape, values).expect("tiled shape")
        };
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(out, Op::Tile { a: self.id }, needs)
    }

    /// Population mean and variance along `axis` (both keep the axis).
    pub fn mean_var(&self, axis: usize) -> Result<(Var<'t>, Var<'t>)> {
        let mean = self.mean_axis(axis)?;
        let centered = if axis + 1 == self.value().ndim() {
            self.sub(mean)?
        } else {
            // move the reduced axis last so the trailing-singleton broadcast applies
            let nd = self.value().ndim();
            let mut perm: Vec<usize> = (0..nd).filter(|&d| d != axis).collect();
            perm.push(axis);
            self.permute(&perm)?.sub(mean.permute(&perm)?)?
        };
        let var = if axis + 1 == self.value().ndim() {
            centered.square()?.mean_axis(axis)?
        } else {
            let nd = self.value().ndim();
            let pm = centered.square()?.mean_axis(nd - 1)?;
            let mut inv = vec![0; nd];
            let mut perm: Vec<usize> = (0..nd).filter(|&d| d != axis).collect();
            perm.push(axis);
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            pm.permute(&inv)?
        };
        Ok((mean, var))
    }
}

/// Applies an elementwise kind; binary kinds require `b`.
pub fn elementwise<'t>(kind: ElementwiseKind, a: Var<'t>, b: Option<Var<'t>>) -> Result<Var<'t>> {
    let need_b = || b.ok_or_else(|| Error::Contract(format!("{:?} needs two operands", kind)));
    match kind {
        ElementwiseKind::Add => a.add(need_b()?),
        ElementwiseKind::Sub => a.sub(need_b()?),
        ElementwiseKind::Mul => a.mul(need_b()?),
        ElementwiseKind::Div => a.div(need_b()?),
        ElementwiseKind::Sigmoid => Ok(a.sigmoid()),
        ElementwiseKind::Tanh => Ok(a.tanh()),
        ElementwiseKind::Relu => Ok(a.relu()),
        ElementwiseKind::Sqrt => Ok(a.sqrt()),
    }
}
