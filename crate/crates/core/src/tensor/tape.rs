use std::rc::Rc;

use rand::Rng;

use super::{Result, Tensor, TensorError};
use crate::params::{ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    Concat { parts: Vec<Var>, axis: usize },
    MaxPoolRows { x: Var, argmax: Vec<usize> },
    IndexRows { x: Var, idx: Vec<usize> },
    Stack(Vec<Var>),
    Slice { x: Var, start: usize },
    NeighborMean { x: Var, adj: Rc<Vec<Vec<usize>>> },
    Dropout { x: Var, mask: Vec<f64> },
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    Sum(Var),
    AddN(Vec<Var>),
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations. Nodes are appended as operations
/// run, so the record is topologically sorted by construction.
pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn value_of<'a>(nodes: &'a [Node], params: Option<&'a ParamStore>, v: Var) -> &'a Tensor {
    match &nodes[v.0].value {
        Value::Owned(t) => t,
        Value::Param(id) => params.expect("param node without store").get(*id),
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            params: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    /// A tape whose [`Tape::param`] leaves borrow from `store`.
    pub fn with_params(store: &'p ParamStore) -> Self {
        Tape {
            params: Some(store),
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    /// Leaf for a stored parameter. Repeated requests for the same id return
    /// the same handle, so gradients from every use accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if self.params.is_none() {
            return Err(TensorError::NoParams);
        }
        if let Some(v) = self.param_vars[id.index()] {
            return Ok(v);
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        value_of(&self.nodes, self.params, v)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, t: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(t),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// `a · b` for `a` of shape `[m, k]` (or a row vector `[k]`) and `b` of
    /// shape `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let (m, k, vector_lhs) = match sa.len() {
            1 => (1, sa[0], true),
            2 => (sa[0], sa[1], false),
            _ => return Err(shape_err("matmul", sa, sb)),
        };
        if sb.len() != 2 || sb[0] != k {
            return Err(shape_err("matmul", sa, sb));
        }
        let n = sb[1];
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, w) in orow.iter_mut().zip(brow) {
                    *o += x * w;
                }
            }
        }
        let shape = if vector_lhs { vec![n] } else { vec![m, n] };
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · x` for `a` of shape `[m, k]` and a vector `x` of length `k`.
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (av, xv) = (self.value(a), self.value(x));
        let (sa, sx) = (av.shape(), xv.shape());
        if sa.len() != 2 || sx.len() != 1 || sa[1] != sx[0] {
            return Err(shape_err("matvec", sa, sx));
        }
        let (m, k) = (sa[0], sa[1]);
        let xd = xv.data();
        let out: Vec<f64> = (0..m)
            .map(|i| {
                av.data()[i * k..(i + 1) * k]
                    .iter()
                    .zip(xd)
                    .map(|(p, q)| p * q)
                    .sum()
            })
            .collect();
        Ok(self.push(Tensor::vector(out), Op::MatVec(a, x), &[a, x]))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor {
            shape: av.shape().to_vec(),
            data,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds vector `b` to `x` (a vector) or to every row of `x` (a matrix).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let n = xv.cols();
        if bv.ndim() != 1 || bv.len() != n || xv.ndim() == 0 || xv.ndim() > 2 {
            return Err(shape_err("add_bias", xv.shape(), bv.shape()));
        }
        let bd = bv.data();
        let data = xv
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bd).map(|(p, q)| p + q))
            .collect();
        let t = Tensor {
            shape: xv.shape().to_vec(),
            data,
        };
        Ok(self.push(t, Op::AddBias(x, b), &[x, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let t = Tensor {
            shape: xv.shape().to_vec(),
            data: xv.data().iter().map(|v| v * c).collect(),
        };
        self.push(t, Op::Scale(x, c), &[x])
    }

    fn unary(&self, x: Var, f: fn(f64) -> f64) -> Tensor {
        let xv = self.value(x);
        Tensor {
            shape: xv.shape().to_vec(),
            data: xv.data().iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.unary(x, sigmoid);
        self.push(t, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.unary(x, f64::tanh);
        self.push(t, Op::Tanh(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.unary(x, |v| if v > 0.0 { v } else { 0.0 });
        self.push(t, Op::Relu(x), &[x])
    }

    /// Softmax over a vector, computed after subtracting the maximum.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 1 {
            return Err(shape_err("softmax", xv.shape(), &[]));
        }
        if xv.is_empty() {
            return Err(TensorError::Empty { op: "softmax" });
        }
        let t = Tensor::vector(softmax_values(xv.data()));
        Ok(self.push(t, Op::Softmax(x), &[x]))
    }

    /// Concatenates along `axis`; every other dimension must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(v) => self.value(*v).shape().to_vec(),
            None => return Err(TensorError::Empty { op: "concat" }),
        };
        if axis >= first.len() {
            return Err(shape_err("concat", &first, &[axis]));
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for p in parts {
            let s = self.value(*p).shape();
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", &first, s));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let pv = self.value(*p);
                let inner: usize = pv.shape()[axis..].iter().product();
                data.extend_from_slice(&pv.data()[o * inner..(o + 1) * inner]);
            }
        }
        let t = Tensor {
            shape: out_shape,
            data,
        };
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Column-wise maximum over the rows of `[n, d]`. Ties send the gradient
    /// to the first maximal row.
    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 {
            return Err(shape_err("max_pool_rows", xv.shape(), &[]));
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        if n == 0 {
            return Err(TensorError::EmptyGraph);
        }
        let mut best = xv.row(0).to_vec();
        let mut argmax = vec![0; d];
        for r in 1..n {
            for (j, v) in xv.row(r).iter().enumerate() {
                if *v > best[j] {
                    best[j] = *v;
                    argmax[j] = r;
                }
            }
        }
        Ok(self.push(Tensor::vector(best), Op::MaxPoolRows { x, argmax }, &[x]))
    }

    /// Gathers rows of a matrix, e.g. an embedding lookup.
    pub fn index_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 {
            return Err(shape_err("index_rows", xv.shape(), &[]));
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= n {
                return Err(TensorError::Index {
                    op: "index_rows",
                    index: i,
                    extent: n,
                });
            }
            data.extend_from_slice(xv.row(i));
        }
        let t = Tensor {
            shape: vec![idx.len(), d],
            data,
        };
        Ok(self.push(t, Op::IndexRows { x, idx: idx.to_vec() }, &[x]))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 {
            return Err(shape_err("row", xv.shape(), &[]));
        }
        if i >= xv.shape()[0] {
            return Err(TensorError::Index {
                op: "row",
                index: i,
                extent: xv.shape()[0],
            });
        }
        let t = Tensor::vector(xv.row(i).to_vec());
        Ok(self.push(t, Op::IndexRows { x, idx: vec![i] }, &[x]))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let d = match rows.first() {
            Some(v) => self.value(*v).len(),
            None => return Err(TensorError::Empty { op: "stack" }),
        };
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let rv = self.value(*r);
            if rv.ndim() != 1 || rv.len() != d {
                return Err(shape_err("stack", &[d], rv.shape()));
            }
            data.extend_from_slice(rv.data());
        }
        let t = Tensor {
            shape: vec![rows.len(), d],
            data,
        };
        Ok(self.push(t, Op::Stack(rows.to_vec()), rows))
    }

    /// Contiguous sub-vector `x[start..start + len]`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 1 || start + len > xv.len() {
            return Err(shape_err("slice", xv.shape(), &[start, len]));
        }
        let t = Tensor::vector(xv.data()[start..start + len].to_vec());
        Ok(self.push(t, Op::Slice { x, start }, &[x]))
    }

    /// Row `v` of the result is the mean of the rows of `x` listed in
    /// `adj[v]`, summed in list order; an empty list yields zeros.
    pub fn neighbor_mean(&mut self, x: Var, adj: Rc<Vec<Vec<usize>>>) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 || adj.len() != xv.shape()[0] {
            return Err(shape_err("neighbor_mean", xv.shape(), &[adj.len()]));
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        let mut data = vec![0.0; n * d];
        for (v, nbrs) in adj.iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            let out = &mut data[v * d..(v + 1) * d];
            for &u in nbrs {
                if u >= n {
                    return Err(TensorError::Index {
                        op: "neighbor_mean",
                        index: u,
                        extent: n,
                    });
                }
                for (o, h) in out.iter_mut().zip(xv.row(u)) {
                    *o += h;
                }
            }
            let inv = 1.0 / nbrs.len() as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let t = Tensor {
            shape: vec![n, d],
            data,
        };
        Ok(self.push(t, Op::NeighborMean { x, adj }, &[x]))
    }

    /// Inverted dropout: each entry is kept with probability `1 - rate` and
    /// scaled by `1 / (1 - rate)`. A zero rate returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let t = Tensor {
            shape: xv.shape().to_vec(),
            data: xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        };
        self.push(t, Op::Dropout { x, mask }, &[x])
    }

    /// Negative log-likelihood of `target` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.value(logits);
        if lv.ndim() != 1 || lv.is_empty() {
            return Err(shape_err("cross_entropy", lv.shape(), &[]));
        }
        if target >= lv.len() {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: target,
                extent: lv.len(),
            });
        }
        let probs = softmax_values(lv.data());
        let m = lv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + lv.data().iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let loss = lse - lv.data()[target];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Element-wise sum of equally shaped tensors, accumulated in list order.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = match parts.first() {
            Some(v) => self.value(*v).clone(),
            None => return Err(TensorError::Empty { op: "add_n" }),
        };
        let mut acc = first;
        for p in &parts[1..] {
            let pv = self.value(*p);
            if pv.shape() != acc.shape() {
                return Err(shape_err("add_n", acc.shape(), pv.shape()));
            }
            for (a, b) in acc.data.iter_mut().zip(pv.data()) {
                *a += b;
            }
        }
        Ok(self.push(acc, Op::AddN(parts.to_vec()), parts))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            propagate(&self.nodes, self.params, &mut self.grads, i, &g);
            self.grads[i] = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }

    /// Forgets computed gradients so that `backward` may run again.
    pub fn clear_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Gradient of the last `backward` loss with respect to `v`. Present for
    /// every node that requires a gradient, zero when `v` did not influence
    /// the loss.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        if !self.backward_done || !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.value(v).shape().to_vec();
        Some(match &self.grads[v.0] {
            Some(g) => Tensor {
                shape,
                data: g.clone(),
            },
            None => Tensor::zeros(&shape),
        })
    }

    /// Gradients of every parameter that was touched by this tape.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> + '_ {
        self.param_vars.iter().enumerate().filter_map(move |(i, v)| {
            let v = (*v)?;
            let g = self.grads.get(v.0)?.as_ref()?;
            Some((ParamId::new(i), g.as_slice()))
        })
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_values(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], params: Option<&ParamStore>, v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = value_of(nodes, params, v).len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn propagate(nodes: &[Node], params: Option<&ParamStore>, grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let val = |v: Var| value_of(nodes, params, v);
    let out = val(Var(i));
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let k = bv.shape()[0];
            let n = bv.shape()[1];
            let m = av.len() / k;
            if let Some(da) = slot(grads, nodes, params, *a) {
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let brow = &bv.data()[p * n..(p + 1) * n];
                        da[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            if let Some(db) = slot(grads, nodes, params, *b) {
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let x = av.data()[r * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += x * gv;
                        }
                    }
                }
            }
        }
        Op::MatVec(a, x) => {
            let (av, xv) = (val(*a), val(*x));
            let k = xv.len();
            if let Some(da) = slot(grads, nodes, params, *a) {
                for (r, gr) in g.iter().enumerate() {
                    for (d, xx) in da[r * k..(r + 1) * k].iter_mut().zip(xv.data()) {
                        *d += gr * xx;
                    }
                }
            }
            if let Some(dx) = slot(grads, nodes, params, *x) {
                for (r, gr) in g.iter().enumerate() {
                    for (d, w) in dx.iter_mut().zip(av.row(r)) {
                        *d += gr * w;
                    }
                }
            }
        }
        Op::Add(a, b) => {
            if let Some(da) = slot(grads, nodes, params, *a) {
                add_into(da, g);
            }
            if let Some(db) = slot(grads, nodes, params, *b) {
                add_into(db, g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(da) = slot(grads, nodes, params, *a) {
                add_into(da, g);
            }
            if let Some(db) = slot(grads, nodes, params, *b) {
                for (d, s) in db.iter_mut().zip(g) {
                    *d -= s;
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if let Some(da) = slot(grads, nodes, params, *a) {
                for ((d, s), y) in da.iter_mut().zip(g).zip(bv.data()) {
                    *d += s * y;
                }
            }
            if let Some(db) = slot(grads, nodes, params, *b) {
                for ((d, s), x) in db.iter_mut().zip(g).zip(av.data()) {
                    *d += s * x;
                }
            }
        }
        Op::AddBias(x, b) => {
            if let Some(dx) = slot(grads, nodes, params, *x) {
                add_into(dx, g);
            }
            if let Some(db) = slot(grads, nodes, params, *b) {
                let n = db.len();
                for row in g.chunks(n) {
                    add_into(db, row);
                }
            }
        }
        Op::Scale(x, c) => {
            if let Some(dx) = slot(grads, nodes, params, *x) {
                for (d, s) in dx.iter_mut().zip(g) {
                    *d += c * s;
                }
            }
        }
        Op::Sigmoid(x) => {
            if let Some(dx) = slot(grads, nodes, params, *x) {
                for ((d, s), y) in dx.iter_mut().zip(g).zip(out.data()) {
                    *d += s * y * (1.0 - y);
                }
            }
        }
        Op::Tanh(x) => {
            if let Some(dx) = slot(grads, nodes, params, *x) {
                for ((d, s), y) in dx.iter_mut().zip(g).zip(out.data()) {
                    *d += s * (1.0 - y * y);
                }
            }
        }
        Op::Relu(x) => {
            if let Some(dx) = slot(grads, nodes, params, *x) {
                for ((d, s), y) in dx.iter_mut().zip(g).zip(out.data()) {
                    if *y > 0.0 {
                        *d += s;
                    }
                }
            }
        }
        Op::Softmax(x) => {
            if let Some(dx) = slot(grads, nodes, params, *x) {
                let y = out.data();
                let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                for ((d, s), yy) in dx.iter_mut().zip(g).zip(y) {
                    *d += yy * (s - dot);
                }
            }
        }
        Op::Concat { parts, axis } => {
            let outer: usize = out.shape()[..*axis].iter().product();
            let total_inner: usize = out.shape()[*axis..].iter().product();
            let mut offset = 0;
            for p in parts {
                let inner: usize = val(*p).shape()[*axis..].iter().product();
                if let Some(dp) = slot(grads, nodes, params, *p) {
                    for o in 0..outer {
                        let src = &g[o * total_inner + offset..o * total_inner + offset + inner];
                        add_into(&mut dp[o * inner..(o + 1) * inner], src);
                    }
                }
                offset += inner;
            }
        }
        Op::MaxPoolRows { x, argmax } => {
            let d = argmax.len();
            if let Some(dx) = slot(grads, nodes, params, *x) {
                for (j, r) in argmax.iter().enumerate() {
                    dx[r * d + j] += g[j];
                }
            }
        }
        Op::IndexRows { x, idx } => {
            let d = val(*x).cols();
            if let Some(dx) = slot(grads, nodes, params, *x) {
                for (r, &src) in idx.iter().enumerate() {
                    add_into(&mut dx[src * d..(src + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
        }
        Op::Stack(rows) => {
            let d = out.cols();
            for (r, v) in rows.iter().enumerate() {
                if let Some(dv) = slot(grads, nodes, params, *v) {
                    add_into(dv, &g[r * d..(r + 1) * d]);
                }
            }
        }
        Op::Slice { x, start } => {
            if let Some(dx) = slot(grads, nodes, params, *x) {
                add_into(&mut dx[*start..*start + g.len()], g);
            }
        }
        Op::NeighborMean { x, adj } => {
            let d = out.cols();
            if let Some(dx) = slot(grads, nodes, params, *x) {
                for (v, nbrs) in adj.iter().enumerate() {
                    if nbrs.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / nbrs.len() as f64;
                    let gv = &g[v * d..(v + 1) * d];
                    for &u in nbrs {
                        for (dd, s) in dx[u * d..(u + 1) * d].iter_mut().zip(gv) {
                            *dd += s * inv;
                        }
                    }
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(dx) = slot(grads, nodes, params, *x) {
                for ((d, s), m) in dx.iter_mut().zip(g).zip(mask) {
                    *d += s * m;
                }
            }
        }
        Op::CrossEntropy {
            logits,
            target,
            probs,
        } => {
            if let Some(dl) = slot(grads, nodes, params, *logits) {
                for (j, (d, p)) in dl.iter_mut().zip(probs).enumerate() {
                    let onehot = if j == *target { 1.0 } else { 0.0 };
                    *d += g[0] * (p - onehot);
                }
            }
        }
        Op::Sum(x) => {
            if let Some(dx) = slot(grads, nodes, params, *x) {
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::AddN(parts) => {
            for p in parts {
                if let Some(dp) = slot(grads, nodes, params, *p) {
                    add_into(dp, g);
                }
            }
        }
    }
}
