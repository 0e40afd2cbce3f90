use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, Shape, Tensor};
use crate::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Node(usize);

impl Node {
    pub fn id(self) -> usize {
        self.0
    }
}

/// A scalar function applied elementwise together with its derivative.
pub trait Pointwise<T>: Send + Sync {
    fn value(&self, x: T) -> T;
    fn derivative(&self, x: T) -> T;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary<T> {
    Neg,
    Abs,
    Log,
    Exp,
    Arctan,
    Tanh,
    Relu,
    /// `scale * x + shift` with constant coefficients.
    Affine {
        scale: T,
        shift: T,
    },
    Clamp {
        lo: T,
        hi: T,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

enum Op<T> {
    Leaf,
    Unary(Unary<T>, Node),
    Binary(Binary, Node, Node),
    Map(Arc<dyn Pointwise<T>>, Node),
    MatMul(Node, Node),
    Transpose(Node),
    Reshape(Node),
    Sum(Node),
    SoftmaxRows(Node),
    LayerNormRows {
        input: Node,
        gain: Node,
        bias: Node,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    AddRowVector(Node, Node),
    ConcatCols(Vec<Node>),
    Gather(Node, Vec<usize>),
    Assemble(Vec<(usize, Node)>),
    StopGradient,
    StraightThrough(Node),
}

struct Record<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only recording of a single computation.
///
/// Nodes are created in topological order, so walking the records backwards
/// visits every node after all of its consumers.
#[derive(Default)]
pub struct Tape<T> {
    records: Vec<Record<T>>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Shape>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `node`; all zeros when nothing flowed into it.
    pub fn get(&self, node: Node) -> Tensor<T> {
        match self.grads.get(node.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[node.0]),
        }
    }

    /// Gradient of `node` if any flowed into it.
    pub fn try_get(&self, node: Node) -> Option<&Tensor<T>> {
        self.grads.get(node.0).and_then(Option::as_ref)
    }
}

fn shape_err(op: &'static str, lhs: Shape, rhs: Shape) -> Error {
    Error::ShapeMismatch { op, lhs, rhs }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, node: Node) -> &Tensor<T> {
        &self.records[node.0].value
    }

    pub fn shape(&self, node: Node) -> Shape {
        self.records[node.0].value.shape()
    }

    /// Value of a scalar node (first entry otherwise).
    pub fn item(&self, node: Node) -> T {
        self.records[node.0].value.item()
    }

    pub fn requires_grad(&self, node: Node) -> bool {
        self.records[node.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Node {
        self.records.push(Record {
            value,
            op,
            requires_grad,
        });
        Node(self.records.len() - 1)
    }

    fn rg(&self, nodes: &[Node]) -> bool {
        nodes.iter().any(|n| self.records[n.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Node {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Node {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: T) -> Node {
        self.constant(Tensor::scalar(value))
    }

    pub fn unary(&mut self, kind: Unary<T>, a: Node) -> Result<Node> {
        let x = &self.records[a.0].value;
        let value = match kind {
            Unary::Neg => x.map(|v| -v),
            Unary::Abs => x.map(|v| v.abs()),
            Unary::Log => {
                if x.data().iter().any(|&v| !(v > T::zero())) {
                    return Err(Error::NonFinite { op: "log" });
                }
                x.map(|v| v.ln())
            }
            Unary::Exp => x.map(|v| v.exp()),
            Unary::Arctan => x.map(|v| v.atan()),
            Unary::Tanh => x.map(|v| v.tanh()),
            Unary::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
            Unary::Affine { scale, shift } => x.map(|v| scale * v + shift),
            Unary::Clamp { lo, hi } => x.map(|v| v.max(lo).min(hi)),
        };
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Unary(kind, a), rg))
    }

    pub fn neg(&mut self, a: Node) -> Node {
        self.unary(Unary::Neg, a).expect("infallible")
    }

    pub fn abs(&mut self, a: Node) -> Node {
        self.unary(Unary::Abs, a).expect("infallible")
    }

    pub fn log(&mut self, a: Node) -> Result<Node> {
        self.unary(Unary::Log, a)
    }

    pub fn exp(&mut self, a: Node) -> Node {
        self.unary(Unary::Exp, a).expect("infallible")
    }

    pub fn arctan(&mut self, a: Node) -> Node {
        self.unary(Unary::Arctan, a).expect("infallible")
    }

    pub fn tanh(&mut self, a: Node) -> Node {
        self.unary(Unary::Tanh, a).expect("infallible")
    }

    pub fn relu(&mut self, a: Node) -> Node {
        self.unary(Unary::Relu, a).expect("infallible")
    }

    pub fn affine(&mut self, a: Node, scale: T, shift: T) -> Node {
        self.unary(Unary::Affine { scale, shift }, a)
            .expect("infallible")
    }

    pub fn scale(&mut self, a: Node, scale: T) -> Node {
        self.affine(a, scale, T::zero())
    }

    pub fn clamp(&mut self, a: Node, lo: T, hi: T) -> Node {
        self.unary(Unary::Clamp { lo, hi }, a).expect("infallible")
    }

    pub fn binary(&mut self, kind: Binary, a: Node, b: Node) -> Result<Node> {
        let (x, y) = (&self.records[a.0].value, &self.records[b.0].value);
        let (sa, sb) = (x.shape(), y.shape());
        let shape = if sa == sb || sb.is_scalar() {
            sa
        } else if sa.is_scalar() {
            sb
        } else {
            return Err(shape_err("elementwise", sa, sb));
        };
        if kind == Binary::Div && y.data().iter().any(|&v| v == T::zero()) {
            return Err(Error::NonFinite { op: "div" });
        }
        let f = |p: T, q: T| match kind {
            Binary::Add => p + q,
            Binary::Sub => p - q,
            Binary::Mul => p * q,
            Binary::Div => p / q,
            Binary::Min => {
                if p <= q {
                    p
                } else {
                    q
                }
            }
            Binary::Max => {
                if p >= q {
                    p
                } else {
                    q
                }
            }
        };
        let (xd, yd) = (x.data(), y.data());
        let data: Vec<T> = (0..shape.len())
            .map(|i| f(xd[bi(sa, i)], yd[bi(sb, i)]))
            .collect();
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Node, b: Node) -> Result<Node> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Node, b: Node) -> Result<Node> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Result<Node> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Node, b: Node) -> Result<Node> {
        self.binary(Binary::Div, a, b)
    }

    pub fn min_pair(&mut self, a: Node, b: Node) -> Result<Node> {
        self.binary(Binary::Min, a, b)
    }

    pub fn max_pair(&mut self, a: Node, b: Node) -> Result<Node> {
        self.binary(Binary::Max, a, b)
    }

    /// Applies `f` elementwise; backward uses `f.derivative`.
    pub fn map(&mut self, a: Node, f: Arc<dyn Pointwise<T>>) -> Node {
        let value = self.records[a.0].value.map(|v| f.value(v));
        let rg = self.rg(&[a]);
        self.push(value, Op::Map(f, a), rg)
    }

    /// Matrix product. A vector right operand is treated as a column and the
    /// result is a vector.
    pub fn matmul(&mut self, a: Node, b: Node) -> Result<Node> {
        let value = match (self.shape(a), self.shape(b)) {
            (Shape::Matrix(..), Shape::Matrix(..) | Shape::Vector(_)) => {
                self.value(a).matmul(self.value(b))?
            }
            (sa, sb) => return Err(shape_err("matmul", sa, sb)),
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Node) -> Result<Node> {
        let shape = self.shape(a);
        if !matches!(shape, Shape::Matrix(..)) {
            return Err(Error::invalid(format!("transpose of {shape}")));
        }
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Node, shape: Shape) -> Result<Node> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Node) -> Node {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Row-wise softmax with max subtraction. A vector is one row.
    pub fn softmax_rows(&mut self, a: Node) -> Node {
        let x = self.value(a);
        let (r, c) = row_dims(x.shape());
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(c.max(1)).take(r) {
            let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let value = Tensor::new(x.shape(), out).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    /// Normalises each row to zero mean and unit variance, then applies
    /// `gain` and `bias` (vectors of the row length).
    pub fn layer_norm_rows(&mut self, a: Node, gain: Node, bias: Node, eps: T) -> Result<Node> {
        let x = self.value(a);
        let (r, c) = row_dims(x.shape());
        for p in [gain, bias] {
            if self.shape(p) != Shape::Vector(c) {
                return Err(shape_err("layer_norm_rows", x.shape(), self.shape(p)));
            }
        }
        if c == 0 {
            return Err(Error::invalid("layer_norm_rows on empty rows"));
        }
        let nf = T::of(c as f64);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut normalized = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in x.data().chunks(c) {
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / nf;
            let var = row
                .iter()
                .fold(T::zero(), |s, &v| s + (v - mean) * (v - mean))
                / nf;
            let inv = T::one() / (var + eps).sqrt();
            if !inv.is_finite() {
                return Err(Error::NonFinite {
                    op: "layer_norm_rows",
                });
            }
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let xh = (v - mean) * inv;
                normalized.push(xh);
                out.push(xh * g[j] + b[j]);
            }
        }
        let value = Tensor::new(x.shape(), out)?;
        let rg = self.rg(&[a, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNormRows {
                input: a,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// Adds a length-`c` vector to every row of an `r x c` matrix.
    pub fn add_row_vector(&mut self, m: Node, v: Node) -> Result<Node> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        let c = match (sm, sv) {
            (Shape::Matrix(_, c), Shape::Vector(k)) if c == k => c,
            _ => return Err(shape_err("add_row_vector", sm, sv)),
        };
        let vd = self.value(v).data();
        let mut value = self.value(m).clone();
        for row in value.data_mut().chunks_mut(c.max(1)) {
            for (d, &b) in row.iter_mut().zip(vd) {
                *d += b;
            }
        }
        let rg = self.rg(&[m, v]);
        Ok(self.push(value, Op::AddRowVector(m, v), rg))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Node]) -> Result<Node> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_cols of nothing"))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            match self.shape(p) {
                Shape::Matrix(r, c) if r == rows => total += c,
                s => return Err(shape_err("concat_cols", self.shape(*first), s)),
            }
        }
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Picks flat entries of `a` by index into a new tensor of `shape`.
    pub fn gather(&mut self, a: Node, indices: Vec<usize>, shape: Shape) -> Result<Node> {
        let src = self.value(a).data();
        if shape.len() != indices.len() {
            return Err(Error::invalid("gather: index count does not match shape"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
            return Err(Error::invalid(format!("gather: index {bad} out of range")));
        }
        let data = indices.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Gather(a, indices), rg))
    }

    /// Entry `i` of a vector (or flat entry of any tensor) as a scalar.
    pub fn index(&mut self, a: Node, i: usize) -> Result<Node> {
        self.gather(a, vec![i], Shape::Scalar)
    }

    /// Sub-matrix of `a` with the given rows and columns, in that order.
    pub fn submatrix(&mut self, a: Node, rows: &[usize], cols: &[usize]) -> Result<Node> {
        let c = self.value(a).cols();
        let idx = rows
            .iter()
            .flat_map(|&r| cols.iter().map(move |&k| r * c + k))
            .collect();
        self.gather(a, idx, Shape::Matrix(rows.len(), cols.len()))
    }

    /// A tensor equal to `base` except at flat positions that are taken from
    /// scalar nodes.
    pub fn assemble(&mut self, base: Tensor<T>, sources: Vec<(usize, Node)>) -> Result<Node> {
        let mut value = base;
        for &(i, n) in &sources {
            if !self.shape(n).is_scalar() {
                return Err(Error::invalid("assemble: sources must be scalars"));
            }
            if i >= value.len() {
                return Err(Error::invalid(format!("assemble: index {i} out of range")));
            }
            value.data_mut()[i] = self.item(n);
        }
        let nodes: Vec<Node> = sources.iter().map(|s| s.1).collect();
        let rg = self.rg(&nodes);
        Ok(self.push(value, Op::Assemble(sources), rg))
    }

    /// Stacks scalar nodes into a vector.
    pub fn stack(&mut self, items: &[Node]) -> Result<Node> {
        let base = Tensor::zeros(Shape::Vector(items.len()));
        self.assemble(base, items.iter().copied().enumerate().collect())
    }

    /// Identity forward; no gradient flows back through the result.
    pub fn stop_gradient(&mut self, a: Node) -> Node {
        let value = self.value(a).clone();
        self.push(value, Op::StopGradient, false)
    }

    /// Fused `(forward - surrogate)_sg + surrogate`.
    ///
    /// The forward value is `forward` bit for bit, and the gradient reaching
    /// the result is passed to `surrogate` unchanged.
    pub fn straight_through(&mut self, forward: Tensor<T>, surrogate: Node) -> Result<Node> {
        if forward.shape() != self.shape(surrogate) {
            return Err(shape_err(
                "straight_through",
                forward.shape(),
                self.shape(surrogate),
            ));
        }
        let rg = self.rg(&[surrogate]);
        Ok(self.push(forward, Op::StraightThrough(surrogate), rg))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Node) -> Result<Gradients<T>> {
        let out_shape = self.shape(output);
        if !out_shape.is_scalar() {
            return Err(Error::NonScalarOutput(out_shape));
        }
        let shapes: Vec<Shape> = self.records.iter().map(|r| r.value.shape()).collect();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        if self.records[output.0].requires_grad {
            grads[output.0] = Some(Tensor::scalar(T::one()));
        }
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        grads.resize(self.records.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let rec = &self.records[id];
        let mut acc = |n: Node, delta: Tensor<T>| {
            if !self.records[n.0].requires_grad {
                return;
            }
            match &mut grads[n.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e += *d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &rec.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Unary(kind, a) => {
                let x = self.value(*a);
                let y = &rec.value;
                let d = zip3(g, x, y, |g, x, y| match *kind {
                    Unary::Neg => -g,
                    Unary::Abs => {
                        if x > T::zero() {
                            g
                        } else if x < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    }
                    Unary::Log => g / x,
                    Unary::Exp => g * y,
                    Unary::Arctan => g / (T::one() + x * x),
                    Unary::Tanh => g * (T::one() - y * y),
                    Unary::Relu => {
                        if x > T::zero() {
                            g
                        } else {
                            T::zero()
                        }
                    }
                    Unary::Affine { scale, .. } => g * scale,
                    Unary::Clamp { lo, hi } => {
                        if x >= lo && x <= hi {
                            g
                        } else {
                            T::zero()
                        }
                    }
                });
                acc(*a, d);
            }
            Op::Binary(kind, a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (sa, sb) = (x.shape(), y.shape());
                let n = g.len();
                let mut ga = vec![T::zero(); sa.len()];
                let mut gb = vec![T::zero(); sb.len()];
                for i in 0..n {
                    let (ia, ib) = (bi(sa, i), bi(sb, i));
                    let (p, q, gi) = (x.data()[ia], y.data()[ib], g.data()[i]);
                    let (da, db) = match kind {
                        Binary::Add => (gi, gi),
                        Binary::Sub => (gi, -gi),
                        Binary::Mul => (gi * q, gi * p),
                        Binary::Div => (gi / q, -gi * p / (q * q)),
                        Binary::Min => {
                            if p <= q {
                                (gi, T::zero())
                            } else {
                                (T::zero(), gi)
                            }
                        }
                        Binary::Max => {
                            if p >= q {
                                (gi, T::zero())
                            } else {
                                (T::zero(), gi)
                            }
                        }
                    };
                    ga[ia] += da;
                    gb[ib] += db;
                }
                acc(*a, Tensor::new(sa, ga).expect("shape"));
                acc(*b, Tensor::new(sb, gb).expect("shape"));
            }
            Op::Map(f, a) => {
                let x = self.value(*a);
                let d = zip3(g, x, x, |g, x, _| g * f.derivative(x));
                acc(*a, d);
            }
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k) = x.shape().dims();
                let (_, n) = y.shape().dims();
                // dA = G B^T, dB = A^T G
                let bt = y.transpose();
                let da = matmul_raw(g.data(), bt.data(), m, n, k);
                let at = x.transpose();
                let db = matmul_raw(at.data(), g.data(), k, m, n);
                acc(*a, Tensor::new(x.shape(), da).expect("shape"));
                acc(*b, Tensor::new(y.shape(), db).expect("shape"));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Reshape(a) => acc(*a, g.clone().reshape(self.shape(*a)).expect("shape")),
            Op::Sum(a) => acc(*a, Tensor::filled(self.shape(*a), g.item())),
            Op::SoftmaxRows(a) => {
                let y = &rec.value;
                let (_, c) = row_dims(y.shape());
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(c.max(1)).zip(g.data().chunks(c.max(1))) {
                    let dot = yr
                        .iter()
                        .zip(gr)
                        .fold(T::zero(), |s, (&yv, &gv)| s + yv * gv);
                    d.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                acc(*a, Tensor::new(y.shape(), d).expect("shape"));
            }
            Op::LayerNormRows {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let shape = self.shape(*input);
                let (_, c) = row_dims(shape);
                let gv = self.value(*gain).data();
                let nf = T::of(c as f64);
                let mut dgain = vec![T::zero(); c];
                let mut dbias = vec![T::zero(); c];
                let mut dx = Vec::with_capacity(shape.len());
                for ((gr, xh), &inv) in g
                    .data()
                    .chunks(c)
                    .zip(normalized.chunks(c))
                    .zip(inv_std.iter())
                {
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for j in 0..c {
                        dgain[j] += gr[j] * xh[j];
                        dbias[j] += gr[j];
                        let dxh = gr[j] * gv[j];
                        mean_d += dxh;
                        mean_dx += dxh * xh[j];
                    }
                    mean_d /= nf;
                    mean_dx /= nf;
                    for j in 0..c {
                        let dxh = gr[j] * gv[j];
                        dx.push(inv * (dxh - mean_d - xh[j] * mean_dx));
                    }
                }
                acc(*input, Tensor::new(shape, dx).expect("shape"));
                acc(*gain, Tensor::vector(dgain));
                acc(*bias, Tensor::vector(dbias));
            }
            Op::AddRowVector(m, v) => {
                let c = self.value(*v).len();
                let mut dv = vec![T::zero(); c];
                for row in g.data().chunks(c.max(1)) {
                    for (d, &x) in dv.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                acc(*m, g.clone());
                acc(*v, Tensor::vector(dv));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut d = Vec::with_capacity(rows * c);
                    for i in 0..rows {
                        d.extend_from_slice(&g.data()[i * total + offset..i * total + offset + c]);
                    }
                    offset += c;
                    acc(p, Tensor::matrix(rows, c, d).expect("shape"));
                }
            }
            Op::Gather(a, indices) => {
                let mut d = Tensor::zeros(self.shape(*a));
                for (&i, &gv) in indices.iter().zip(g.data()) {
                    d.data_mut()[i] += gv;
                }
                acc(*a, d);
            }
            Op::Assemble(sources) => {
                for &(i, n) in sources {
                    acc(n, Tensor::scalar(g.data()[i]));
                }
            }
            Op::StraightThrough(s) => acc(*s, g.clone()),
        }
    }
}

/// Broadcast index: scalars repeat, everything else is addressed directly.
#[inline]
fn bi(shape: Shape, i: usize) -> usize {
    if shape.is_scalar() {
        0
    } else {
        i
    }
}

fn row_dims(shape: Shape) -> (usize, usize) {
    match shape {
        Shape::Scalar => (1, 1),
        Shape::Vector(n) => (1, n),
        Shape::Matrix(r, c) => (r, c),
    }
}

fn zip3<T: Real>(
    g: &Tensor<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    f: impl Fn(T, T, T) -> T,
) -> Tensor<T> {
    let data = g
        .data()
        .iter()
        .zip(x.data())
        .zip(y.data())
        .map(|((&g, &x), &y)| f(g, x, y))
        .collect();
    Tensor::new(x.shape(), data).expect("shape")
}
