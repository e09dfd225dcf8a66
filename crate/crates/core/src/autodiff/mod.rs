//! Minimal reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation as a node in creation order, which is
//! already a topological order, so [`Graph::backward`] walks the node list
//! in reverse. Leaves created with `requires_grad` keep their gradient after
//! the backward pass; intermediate gradients are dropped as soon as they
//! have been propagated.
//!
//! Binary elementwise ops broadcast their right operand when it has shape
//! `(1, cols)`, `(rows, 1)` or `(1, 1)`.

mod tensor;

pub use tensor::Tensor;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    /// Max over consecutive groups of rows; `argmax[o]` is the source flat index.
    MaxGroups(Var, Vec<usize>),
    /// Max along each row; `argmax[r]` is the source column.
    MaxCols(Var, Vec<usize>),
    Mean(Var),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    SqDiff(Var, Var),
    SqDist(Var, Var),
    Concat(Var, Var),
    GatherRows(Var, Vec<usize>),
    Sqrt(Var),
    Ln(Var),
    Recip(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, producing one row.
    Rows,
    /// Reduce over columns, producing one column.
    Cols,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

#[inline]
fn bcast_index(r: usize, c: usize, shape: (usize, usize)) -> usize {
    let rr = if shape.0 == 1 { 0 } else { r };
    let cc = if shape.1 == 1 { 0 } else { c };
    rr * shape.1 + cc
}

fn check_broadcast(a: (usize, usize), b: (usize, usize), op: &str) -> Result<()> {
    let rows_ok = b.0 == a.0 || b.0 == 1;
    let cols_ok = b.1 == a.1 || b.1 == 1;
    if rows_ok && cols_ok {
        Ok(())
    } else {
        Err(Error::Shape(format!("{op}: cannot broadcast {b:?} onto {a:?}")))
    }
}

/// Sums `g` down to `shape` (the inverse of broadcasting).
fn reduce_to(g: &Tensor, shape: (usize, usize)) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            out.data_mut()[bcast_index(r, c, shape)] += g.get(r, c);
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of a leaf, or zeros when nothing flowed into it.
    pub fn take_grad(&mut self, v: Var) -> Tensor {
        let node = &mut self.nodes[v.0];
        node.grad
            .take()
            .unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()))
    }

    /// Clears stored gradients so `backward` may run again.
    pub fn reset(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.consumed = false;
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let out = va.matmul(vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        check_broadcast(va.shape(), vb.shape(), name)?;
        let sb = vb.shape();
        let mut out = Tensor::zeros(va.rows(), va.cols());
        for r in 0..va.rows() {
            for c in 0..va.cols() {
                out.set(r, c, f(va.get(r, c), vb.data()[bcast_index(r, c, sb)]));
            }
        }
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v + c);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(a);
        self.push(out, Op::LeakyRelu(a, slope), rg)
    }

    /// Max over consecutive blocks of `group` rows: `(g*m) x c -> m x c`.
    /// Ties resolve to the first row of the block.
    pub fn max_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        let va = self.value(a);
        if group == 0 || va.rows() % group != 0 {
            return Err(Error::Shape(format!(
                "cannot split {} rows into groups of {group}",
                va.rows()
            )));
        }
        let (m, c) = (va.rows() / group, va.cols());
        let mut out = Tensor::zeros(m, c);
        let mut argmax = vec![0usize; m * c];
        for o in 0..m {
            for j in 0..c {
                let mut best = (o * group) * c + j;
                for r in o * group + 1..(o + 1) * group {
                    let idx = r * c + j;
                    if va.data()[idx] > va.data()[best] {
                        best = idx;
                    }
                }
                out.set(o, j, va.data()[best]);
                argmax[o * c + j] = best;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::MaxGroups(a, argmax), rg))
    }

    /// Max along an axis; gradient routes to the first maximal element.
    pub fn max_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        match axis {
            Axis::Rows => {
                let rows = self.value(a).rows();
                self.max_groups(a, rows)
            }
            Axis::Cols => {
                let va = self.value(a);
                if va.cols() == 0 {
                    return Err(Error::Shape("max over empty axis".into()));
                }
                let mut out = Tensor::zeros(va.rows(), 1);
                let mut argmax = Vec::with_capacity(va.rows());
                for r in 0..va.rows() {
                    let row = va.row(r);
                    let mut best = 0;
                    for (c, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = c;
                        }
                    }
                    out.set(r, 0, row[best]);
                    argmax.push(best);
                }
                let rg = self.rg(a);
                Ok(self.push(out, Op::MaxCols(a, argmax), rg))
            }
        }
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = Tensor::scalar(va.sum() / va.len() as f64);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Var {
        let va = self.value(a);
        let (out, op) = match axis {
            Axis::Rows => {
                let mut out = Tensor::zeros(1, va.cols());
                for r in 0..va.rows() {
                    for (o, v) in out.data_mut().iter_mut().zip(va.row(r)) {
                        *o += v;
                    }
                }
                (out, Op::SumRows(a))
            }
            Axis::Cols => {
                let data = (0..va.rows()).map(|r| va.row(r).iter().sum()).collect();
                (Tensor::from_vec(va.rows(), 1, data).unwrap(), Op::SumCols(a))
            }
        };
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    /// Elementwise `(a - b)^2`, shapes equal.
    pub fn sq_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "sq_diff {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out = self.binary(a, b, "sq_diff", |x, y| (x - y) * (x - y))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::SqDiff(a, b), rg))
    }

    /// Pairwise squared Euclidean distances between rows: `n x d, k x d -> n x k`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::Shape(format!(
                "sq_dist {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut out = Tensor::zeros(va.rows(), vb.rows());
        for i in 0..va.rows() {
            let x = va.row(i);
            for j in 0..vb.rows() {
                let d: f64 = x.iter().zip(vb.row(j)).map(|(p, q)| (p - q) * (p - q)).sum();
                out.set(i, j, d);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::SqDist(a, b), rg))
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(Error::Shape(format!(
                "concat {:?} with {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let cols = va.cols() + vb.cols();
        let mut data = Vec::with_capacity(va.rows() * cols);
        for r in 0..va.rows() {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let out = Tensor::from_vec(va.rows(), cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    /// Row gather, used for k-nearest-neighbour edge features.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let va = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= va.rows()) {
            return Err(Error::Shape(format!("gather index {bad} >= {}", va.rows())));
        }
        let out = va.select_rows(&idx);
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, idx), rg))
    }

    /// Square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        let rg = self.rg(a);
        self.push(out, Op::Sqrt(a), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Ln(a), rg)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::recip);
        let rg = self.rg(a);
        self.push(out, Op::Recip(a), rg)
    }

    /// Hash of every data-dependent branch taken in the forward pass
    /// (rectifier signs, max winners, gather indices). Two evaluations with
    /// equal signatures lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::LeakyRelu(a, _) => {
                    i.hash(&mut h);
                    for &v in self.value(*a).data() {
                        (v > 0.0).hash(&mut h);
                    }
                }
                Op::MaxGroups(_, idx) | Op::MaxCols(_, idx) | Op::GatherRows(_, idx) => {
                    i.hash(&mut h);
                    idx.hash(&mut h);
                }
                Op::Sqrt(a) => {
                    i.hash(&mut h);
                    for &v in self.value(*a).data() {
                        (v > 0.0).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse pass from a scalar `loss`. May run once per [`Graph::reset`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Graph(
                "backward already ran on this graph; call reset first".into(),
            ));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].grad = Some(g);
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul_t(self.value(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a).t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    self.accumulate(grads, *b, reduce_to(g, self.value(*b).shape()));
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    let mut gb = reduce_to(g, self.value(*b).shape());
                    gb.scale_assign(-1.0);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let sb = vb.shape();
                if self.rg(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        for c in 0..ga.cols() {
                            let v = ga.get(r, c) * vb.data()[bcast_index(r, c, sb)];
                            ga.set(r, c, v);
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let mut prod = g.clone();
                    for (p, x) in prod.data_mut().iter_mut().zip(va.data()) {
                        *p *= x;
                    }
                    self.accumulate(grads, *b, reduce_to(&prod, sb));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|v| v * c)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::LeakyRelu(a, slope) => {
                let mut ga = g.clone();
                for (d, &x) in ga.data_mut().iter_mut().zip(self.value(*a).data()) {
                    if x <= 0.0 {
                        *d *= slope;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::MaxGroups(a, argmax) => {
                let va = self.value(*a);
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                for (o, &src) in argmax.iter().enumerate() {
                    ga.data_mut()[src] += g.data()[o];
                }
                self.accumulate(grads, *a, ga);
            }
            Op::MaxCols(a, argmax) => {
                let va = self.value(*a);
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                for (r, &c) in argmax.iter().enumerate() {
                    ga.set(r, c, g.get(r, 0));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let v = g.data()[0] / va.len() as f64;
                self.accumulate(grads, *a, Tensor::from_vec(va.rows(), va.cols(), vec![v; va.len()]).unwrap());
            }
            Op::Sum(a) => {
                let va = self.value(*a);
                let v = g.data()[0];
                self.accumulate(grads, *a, Tensor::from_vec(va.rows(), va.cols(), vec![v; va.len()]).unwrap());
            }
            Op::SumRows(a) => {
                let va = self.value(*a);
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    ga.row_mut(r).copy_from_slice(g.row(0));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SumCols(a) => {
                let va = self.value(*a);
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    ga.row_mut(r).fill(g.get(r, 0));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SqDiff(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = g.clone();
                for ((d, x), y) in ga.data_mut().iter_mut().zip(va.data()).zip(vb.data()) {
                    *d *= 2.0 * (x - y);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, ga.map(|v| -v));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SqDist(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let d = va.cols();
                let mut ga = Tensor::zeros(va.rows(), d);
                let mut gb = Tensor::zeros(vb.rows(), d);
                for i in 0..va.rows() {
                    for j in 0..vb.rows() {
                        let w = 2.0 * g.get(i, j);
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..d {
                            let diff = w * (va.get(i, c) - vb.get(j, c));
                            ga.data_mut()[i * d + c] += diff;
                            gb.data_mut()[j * d + c] -= diff;
                        }
                    }
                }
                if self.rg(*a) {
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Concat(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let rows = g.rows();
                if self.rg(*a) {
                    let mut ga = Tensor::zeros(rows, ca);
                    for r in 0..rows {
                        ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let mut gb = Tensor::zeros(rows, cb);
                    for r in 0..rows {
                        gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::GatherRows(a, idx) => {
                let va = self.value(*a);
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                for (o, &src) in idx.iter().enumerate() {
                    for (d, v) in ga.row_mut(src).iter_mut().zip(g.row(o)) {
                        *d += v;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sqrt(a) => {
                let mut ga = g.clone();
                for (d, &y) in ga.data_mut().iter_mut().zip(node.value.data()) {
                    *d = if y > 0.0 { *d * 0.5 / y } else { 0.0 };
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Ln(a) => {
                let mut ga = g.clone();
                for (d, &x) in ga.data_mut().iter_mut().zip(self.value(*a).data()) {
                    *d /= x;
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Recip(a) => {
                let mut ga = g.clone();
                for (d, &y) in ga.data_mut().iter_mut().zip(node.value.data()) {
                    *d *= -y * y;
                }
                self.accumulate(grads, *a, ga);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_derivative_two_x() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn max_routes_to_argmax() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(3, 1, vec![1.0, 5.0, 2.0]).unwrap());
        let m = g.max_axis(x, Axis::Rows).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn max_ties_route_to_first_index() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(1, 3, vec![4.0, 4.0, 1.0]).unwrap());
        let m = g.max_axis(x, Axis::Cols).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(2, 2));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn second_backward_needs_reset() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert!(g.backward(y).is_err());
        g.reset();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(3, 2));
        let b = g.param(Tensor::zeros(1, 2));
        let y = g.add(x, b).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn sqrt_at_zero_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = g.sqrt(x);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0]);
    }
}
