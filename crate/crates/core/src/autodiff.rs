//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in creation order, so the node list
//! is already topologically sorted. Leaves are either named parameters,
//! which receive gradients, or constants. The forward pass can be replayed
//! after editing leaf values, which is what [`Graph::finite_diff_check`]
//! uses to compare the tape's gradients against central differences.
//!
//! Broadcasting is limited to `add`, whose right operand may omit leading
//! dimensions of the left one.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Param(String),
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var, f64),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Pow(Var, f64),
    Sum(Var, usize),
    SumAll(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    Concat(Vec<Var>),
    Reshape(Var),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// `name[flat index]` of the worst coordinate.
    pub worst_parameter: String,
    pub coordinates: usize,
    pub passed: bool,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let n = x.last_dim();
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks_exact(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut z = 0.0;
        for &v in row {
            let e = (v - max).exp();
            z += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e /= z);
    }
    Tensor::raw(x.shape().to_vec(), out)
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let n = x.last_dim();
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks_exact(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    Tensor::raw(x.shape().to_vec(), out)
}

/// `[.., k] x [k, n] -> [.., n]`
fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let k = a.last_dim();
    let n = b.shape()[1];
    let rows = a.numel() / k;
    let mut out = vec![0.0; rows * n];
    let (ad, bd) = (a.data(), b.data());
    for r in 0..rows {
        let orow = &mut out[r * n..(r + 1) * n];
        for (kk, &av) in ad[r * k..(r + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &bd[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    let mut shape = a.shape()[..a.rank() - 1].to_vec();
    shape.push(n);
    Tensor::raw(shape, out)
}

fn sum_axis(x: &Tensor, axis: usize) -> Tensor {
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            for i in 0..inner {
                out[o * inner + i] += x.data()[base + i];
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape.remove(axis);
    Tensor::raw(new_shape, out)
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

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.push(Op::Param(name.into()), value)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Const, value)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() < 1 || tb.rank() != 2 || ta.last_dim() != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = matmul_raw(ta, tb);
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// Elementwise sum; `b` may drop leading dimensions of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rank() > ta.rank() || ta.shape()[ta.rank() - tb.rank()..] != *tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let m = tb.numel();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tb.data()[i % m])
            .collect();
        let out = Tensor::raw(ta.shape().to_vec(), data);
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::raw(ta.shape().to_vec(), data);
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        self.push(Op::Scale(a, c), out)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(Op::Offset(a, c), out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), out)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(Op::Log(a), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    /// `a^c` for a constant exponent.
    pub fn pow(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x.powf(c));
        self.push(Op::Pow(a, c), out)
    }

    /// Sums over `axis`, removing it.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        if axis >= ta.rank() {
            return Err(Error::Shape {
                op: "sum",
                lhs: ta.shape().to_vec(),
                rhs: vec![axis],
            });
        }
        let out = sum_axis(ta, axis);
        Ok(self.push(Op::Sum(a, axis), out))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(Op::SumAll(a), out)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Softmax over the last axis, max-shifted.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(Op::Softmax(a), out)
    }

    /// Log-softmax over the last axis via log-sum-exp.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = log_softmax_rows(self.value(a));
        self.push(Op::LogSoftmax(a), out)
    }

    /// Picks one entry per row along the last axis; the result drops that axis.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let n = ta.last_dim();
        let rows = ta.numel() / n.max(1);
        if ta.rank() == 0 || indices.len() != rows || indices.iter().any(|&i| i >= n) {
            return Err(Error::Shape {
                op: "gather",
                lhs: ta.shape().to_vec(),
                rhs: vec![indices.len()],
            });
        }
        let data = indices
            .iter()
            .enumerate()
            .map(|(r, &i)| ta.data()[r * n + i])
            .collect();
        let out = Tensor::raw(ta.shape()[..ta.rank() - 1].to_vec(), data);
        Ok(self.push(Op::Gather(a, indices.to_vec()), out))
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Graph("concat of nothing".into()))?;
        let lead = self.value(*first).shape()[..self.value(*first).rank() - 1].to_vec();
        for p in parts {
            let t = self.value(*p);
            if t.rank() == 0 || t.shape()[..t.rank() - 1] != *lead {
                return Err(shape_err("concat", self.value(*first), t));
            }
        }
        let out = concat_raw(parts.iter().map(|p| &self.nodes[p.0].value));
        Ok(self.push(Op::Concat(parts.to_vec()), out))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(Op::Reshape(a), out))
    }

    /// Parameter leaves in creation order.
    pub fn params(&self) -> Vec<(Var, &str)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match &n.op {
                Op::Param(name) => Some((Var(i), name.as_str())),
                _ => None,
            })
            .collect()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        match &mut self.grads[v.0] {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse sweep from a scalar `loss`, filling gradient slots for every
    /// node it depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Graph("backward called twice without zero_grad".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let seed = Tensor::raw(self.shape(loss).to_vec(), vec![1.0]);
        self.grads[loss.0] = Some(seed);

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            self.propagate(&op, Var(i), &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, op: &Op, out: Var, g: &Tensor) {
        let y = &self.nodes[out.0].value;
        match op {
            Op::Param(_) | Op::Const => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (k, n) = (tb.shape()[0], tb.shape()[1]);
                let rows = ta.numel() / k;
                // ga = g b^T
                let mut ga = vec![0.0; ta.numel()];
                for r in 0..rows {
                    let grow = &g.data()[r * n..(r + 1) * n];
                    for kk in 0..k {
                        let brow = &tb.data()[kk * n..(kk + 1) * n];
                        ga[r * k + kk] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                // gb = a^T g
                let mut gb = vec![0.0; tb.numel()];
                for r in 0..rows {
                    let grow = &g.data()[r * n..(r + 1) * n];
                    for kk in 0..k {
                        let av = ta.data()[r * k + kk];
                        if av == 0.0 {
                            continue;
                        }
                        for (o, gv) in gb[kk * n..(kk + 1) * n].iter_mut().zip(grow) {
                            *o += av * gv;
                        }
                    }
                }
                let (sa, sb) = (ta.shape().to_vec(), tb.shape().to_vec());
                self.accumulate(*a, Tensor::raw(sa, ga));
                self.accumulate(*b, Tensor::raw(sb, gb));
            }
            Op::Add(a, b) => {
                let tb_shape = self.nodes[b.0].value.shape().to_vec();
                let m: usize = tb_shape.iter().product();
                let mut gb = vec![0.0; m];
                for (i, gv) in g.data().iter().enumerate() {
                    gb[i % m] += gv;
                }
                self.accumulate(*a, g.clone());
                self.accumulate(*b, Tensor::raw(tb_shape, gb));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let ga = Tensor::raw(
                    ta.shape().to_vec(),
                    g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect(),
                );
                let gb = Tensor::raw(
                    tb.shape().to_vec(),
                    g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect(),
                );
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::Scale(a, c) => {
                let ga = g.map(|x| c * x);
                self.accumulate(*a, ga);
            }
            Op::Offset(a, _) | Op::Reshape(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                self.accumulate(*a, Tensor::raw(shape, g.data().to_vec()));
            }
            Op::Exp(a) => {
                let ga = zip_map(g, y, |gv, yv| gv * yv);
                self.accumulate(*a, ga);
            }
            Op::Log(a) => {
                let ga = zip_map(g, &self.nodes[a.0].value, |gv, xv| gv / xv);
                self.accumulate(*a, ga);
            }
            Op::Tanh(a) => {
                let ga = zip_map(g, y, |gv, yv| gv * (1.0 - yv * yv));
                self.accumulate(*a, ga);
            }
            Op::Pow(a, c) => {
                let c = *c;
                let ga = zip_map(g, &self.nodes[a.0].value, |gv, xv| gv * c * xv.powf(c - 1.0));
                self.accumulate(*a, ga);
            }
            Op::Sum(a, axis) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                let len = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let total: usize = shape.iter().product();
                let data = (0..total)
                    .map(|i| {
                        let o = i / (len * inner);
                        let r = i % inner;
                        g.data()[o * inner + r]
                    })
                    .collect();
                self.accumulate(*a, Tensor::raw(shape, data));
            }
            Op::SumAll(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                let n: usize = shape.iter().product();
                self.accumulate(*a, Tensor::raw(shape, vec![g.item(); n]));
            }
            Op::Softmax(a) => {
                let n = y.last_dim();
                let mut ga = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks_exact(n).zip(g.data().chunks_exact(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    ga.extend(yr.iter().zip(gr).map(|(p, q)| p * (q - dot)));
                }
                let ga = Tensor::raw(y.shape().to_vec(), ga);
                self.accumulate(*a, ga);
            }
            Op::LogSoftmax(a) => {
                let n = y.last_dim();
                let mut ga = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks_exact(n).zip(g.data().chunks_exact(n)) {
                    let gsum: f64 = gr.iter().sum();
                    ga.extend(yr.iter().zip(gr).map(|(ly, q)| q - ly.exp() * gsum));
                }
                let ga = Tensor::raw(y.shape().to_vec(), ga);
                self.accumulate(*a, ga);
            }
            Op::Gather(a, idx) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                let n = *shape.last().unwrap();
                let mut ga = vec![0.0; shape.iter().product()];
                for (r, &i) in idx.iter().enumerate() {
                    ga[r * n + i] += g.data()[r];
                }
                self.accumulate(*a, Tensor::raw(shape, ga));
            }
            Op::Concat(parts) => {
                let total = g.last_dim();
                let rows = g.numel() / total;
                let mut offset = 0;
                for p in parts {
                    let shape = self.nodes[p.0].value.shape().to_vec();
                    let w = *shape.last().unwrap();
                    let mut gp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                    self.accumulate(*p, Tensor::raw(shape, gp));
                }
            }
        }
    }

    /// Replaces a leaf's value. Call [`Graph::recompute`] afterwards.
    pub fn set_leaf(&mut self, v: Var, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Param(_) | Op::Const) {
            return Err(Error::Graph("only leaves can be overwritten".into()));
        }
        if node.value.shape() != value.shape() {
            return Err(shape_err("set_leaf", &node.value, &value));
        }
        node.value = value;
        Ok(())
    }

    /// Re-runs every non-leaf node from the current leaf values.
    pub fn recompute(&mut self) {
        for i in 0..self.nodes.len() {
            let op = self.nodes[i].op.clone();
            let v = |x: &Var| &self.nodes[x.0].value;
            let value = match &op {
                Op::Param(_) | Op::Const => continue,
                Op::MatMul(a, b) => matmul_raw(v(a), v(b)),
                Op::Add(a, b) => {
                    let (ta, tb) = (v(a), v(b));
                    let m = tb.numel();
                    let data = ta.data().iter().enumerate().map(|(i, x)| x + tb.data()[i % m]).collect();
                    Tensor::raw(ta.shape().to_vec(), data)
                }
                Op::Mul(a, b) => zip_map(v(a), v(b), |x, y| x * y),
                Op::Scale(a, c) => v(a).map(|x| c * x),
                Op::Offset(a, c) => v(a).map(|x| x + c),
                Op::Exp(a) => v(a).map(f64::exp),
                Op::Log(a) => v(a).map(f64::ln),
                Op::Tanh(a) => v(a).map(f64::tanh),
                Op::Pow(a, c) => v(a).map(|x| x.powf(*c)),
                Op::Sum(a, axis) => sum_axis(v(a), *axis),
                Op::SumAll(a) => Tensor::scalar(v(a).data().iter().sum()),
                Op::Softmax(a) => softmax_rows(v(a)),
                Op::LogSoftmax(a) => log_softmax_rows(v(a)),
                Op::Gather(a, idx) => {
                    let ta = v(a);
                    let n = ta.last_dim();
                    let data = idx.iter().enumerate().map(|(r, &i)| ta.data()[r * n + i]).collect();
                    Tensor::raw(ta.shape()[..ta.rank() - 1].to_vec(), data)
                }
                Op::Concat(parts) => concat_raw(parts.iter().map(v)),
                Op::Reshape(_) => {
                    let Op::Reshape(a) = &op else { unreachable!() };
                    let shape = self.nodes[i].value.shape().to_vec();
                    Tensor::raw(shape, v(a).data().to_vec())
                }
            };
            self.nodes[i].value = value;
        }
    }

    /// Compares tape gradients of `loss` with central differences
    /// `(L(θ+ε) - L(θ-ε)) / 2ε` for every parameter coordinate.
    ///
    /// Relative error is `|a - b| / max(1e-8, |a|, |b|)`.
    pub fn finite_diff_check(&mut self, loss: Var, eps: f64, tol: f64) -> Result<FdReport> {
        if !(1e-6..=1e-3).contains(&eps) {
            return Err(Error::Domain(format!("finite-difference eps {eps} outside [1e-6, 1e-3]")));
        }
        if !self.backward_done {
            self.backward(loss)?;
        }
        let mut worst = (0.0f64, String::new());
        let mut coordinates = 0;
        let params: Vec<(Var, String)> = self
            .params()
            .into_iter()
            .map(|(v, n)| (v, n.to_string()))
            .collect();
        for (var, name) in params {
            let analytic = match self.grad(var) {
                Some(g) => g.data().to_vec(),
                None => vec![0.0; self.value(var).numel()],
            };
            let base = self.value(var).clone();
            for (j, &a) in analytic.iter().enumerate() {
                let mut plus = base.clone();
                plus.data_mut()[j] += eps;
                self.nodes[var.0].value = plus;
                self.recompute();
                let fp = self.value(loss).item();
                let mut minus = base.clone();
                minus.data_mut()[j] -= eps;
                self.nodes[var.0].value = minus;
                self.recompute();
                let fm = self.value(loss).item();
                let numeric = (fp - fm) / (2.0 * eps);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                coordinates += 1;
                if rel > worst.0 || worst.1.is_empty() {
                    worst = (rel, format!("{name}[{j}]"));
                }
            }
            self.nodes[var.0].value = base;
        }
        self.recompute();
        Ok(FdReport {
            max_rel_err: worst.0,
            worst_parameter: worst.1,
            coordinates,
            passed: worst.0 < tol,
        })
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::raw(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect(),
    )
}

fn concat_raw<'a>(parts: impl Iterator<Item = &'a Tensor> + Clone) -> Tensor {
    let first = parts.clone().next().unwrap();
    let widths: Vec<usize> = parts.clone().map(|t| t.last_dim()).collect();
    let total: usize = widths.iter().sum();
    let rows = first.numel() / first.last_dim().max(1);
    let mut data = vec![0.0; rows * total];
    let mut offset = 0;
    for (t, w) in parts.zip(&widths) {
        for r in 0..rows {
            data[r * total + offset..r * total + offset + w]
                .copy_from_slice(&t.data()[r * w..(r + 1) * w]);
        }
        offset += w;
    }
    let mut shape = first.shape()[..first.rank() - 1].to_vec();
    shape.push(total);
    Tensor::raw(shape, data)
}
