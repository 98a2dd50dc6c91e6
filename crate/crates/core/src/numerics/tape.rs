//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends one node holding its output value together with
//! whatever the backward rule needs. Inputs always have smaller indices than
//! the node that consumes them, so walking the tape from the loss back to
//! index zero visits nodes in reverse topological order.

use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate backward-rule corruption, used to show that gradient checking
/// catches a broken rule.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardFault {
    /// `concat_last` hands the left operand twice its true gradient.
    ConcatLastLeftDoubled,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    ConcatLast(Var, Var),
    ConcatRows(Vec<Var>),
    SliceLast {
        x: Var,
        start: usize,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Relu(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Bce {
        logits: Var,
        targets: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::AddConst(_) => "add_const",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::ConcatLast(..) => "concat_last",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceLast { .. } => "slice_last",
            Op::Softmax(_) => "softmax_last",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Relu(_) => "relu",
            Op::Gather { .. } => "embedding_lookup",
            Op::Bce { .. } => "bce_with_logits",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::ConcatLast(a, b) => vec![*a, *b],
            Op::Transpose(x) | Op::AddConst(x) | Op::Scale(x, _) | Op::Sum(x) => vec![*x],
            Op::Softmax(x) | Op::Relu(x) => vec![*x],
            Op::SliceLast { x, .. } => vec![*x],
            Op::ConcatRows(xs) => xs.clone(),
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Gather { table, .. } => vec![*table],
            Op::Bce { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Single-threaded recording of a forward computation.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<BackwardFault>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: BackwardFault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by the last [`Tape::backward`], if the node was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient, or zeros of the node's shape when the node was not reached.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<T> {
        self.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = self.any_grad(&op.inputs());
        self.push(value, op, rg)
    }

    // ---------------------------------------------------------------- ops

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows() {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.record(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::shape("transpose", xv.shape(), &[]));
        }
        let (r, c) = (xv.rows(), xv.cols());
        let value = Tensor::new(vec![c, r], transpose_raw(xv.data(), r, c))?;
        Ok(self.record(value, Op::Transpose(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("add", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.record(value, Op::Add(a, b)))
    }

    /// Adds a bias vector to every trailing slice of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let d = xv.last_dim();
        if bv.numel() != d || bv.rank() > 2 {
            return Err(Error::shape("add_row", xv.shape(), bv.shape()));
        }
        let b = bv.data();
        let data = xv
            .data()
            .chunks(d.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bb)| v + bb))
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.record(value, Op::AddRow(x, bias)))
    }

    /// Adds a fixed tensor (typically an attention mask) to `x`.
    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != c.shape() {
            return Err(Error::shape("add_const", xv.shape(), c.shape()));
        }
        let data = xv.data().iter().zip(c.data()).map(|(&a, &b)| a + b).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.record(value, Op::AddConst(x)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("mul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.record(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.record(value, Op::Scale(x, s))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.record(Tensor::scalar(total), Op::Sum(x))
    }

    /// Concatenates along the trailing dimension.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape("concat_last", sa, sb));
        }
        let (d1, d2) = (av.last_dim(), bv.last_dim());
        let rows = av.leading();
        let mut data = Vec::with_capacity(rows * (d1 + d2));
        for r in 0..rows {
            data.extend_from_slice(&av.data()[r * d1..(r + 1) * d1]);
            data.extend_from_slice(&bv.data()[r * d2..(r + 1) * d2]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = d1 + d2;
        let value = Tensor::new(shape, data)?;
        Ok(self.record(value, Op::ConcatLast(a, b)))
    }

    /// Stacks matrices with equal column counts along the first dimension.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::contract("concat_rows needs at least one input"));
        };
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let v = self.value(x);
            if v.rank() != 2 || v.cols() != cols {
                return Err(Error::shape("concat_rows", self.shape(first), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.record(value, Op::ConcatRows(xs.to_vec())))
    }

    /// Takes `len` trailing components starting at `start`.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if xv.rank() == 0 || start + len > d {
            return Err(Error::Index {
                op: "slice_last",
                index: start + len,
                bound: d,
            });
        }
        let rows = xv.leading();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.data()[r * d + start..r * d + start + len]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, data)?;
        Ok(self.record(value, Op::SliceLast { x, start }))
    }

    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.last_dim();
        if xv.rank() == 0 || n == 0 {
            return Err(Error::contract("softmax_last needs a non-empty trailing dimension"));
        }
        let value = Tensor::new(xv.shape().to_vec(), softmax_raw(xv.data(), n))?;
        Ok(self.record(value, Op::Softmax(x)))
    }

    /// Normalizes every trailing slice with population statistics, then
    /// applies the elementwise affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if d == 0 || gv.numel() != d || bv.numel() != d {
            return Err(Error::shape("layer_norm", xv.shape(), gv.shape()));
        }
        let eps = T::from_f64(eps);
        let inv_d = T::one() / T::from_f64(d as f64);
        let rows = xv.leading();
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(d) {
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_d;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_d;
            let r = T::one() / (var + eps).sqrt();
            inv_std.push(r);
            for ((&v, &g), &b) in row.iter().zip(gv.data()).zip(bv.data()) {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g + b);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.record(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.record(value, Op::Relu(x))
    }

    /// Copies the rows `ids` of a matrix. Serves both as embedding lookup and
    /// as row selection/broadcast.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(Error::shape("embedding_lookup", tv.shape(), &[]));
        }
        let (v, d) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    op: "embedding_lookup",
                    index: id,
                    bound: v,
                });
            }
            data.extend_from_slice(tv.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.record(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Mean binary cross-entropy over `logits.numel()` independent decisions.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.numel() != targets.len() {
            return Err(Error::shape("bce_with_logits", lv.shape(), &[targets.len()]));
        }
        if targets.is_empty() {
            return Err(Error::contract("bce_with_logits needs at least one logit"));
        }
        let n = T::from_f64(targets.len() as f64);
        let total = lv
            .data()
            .iter()
            .zip(targets)
            .fold(T::zero(), |acc, (&z, &y)| acc + bce_term(z, y));
        Ok(self.record(
            Tensor::scalar(total / n),
            Op::Bce {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    // ----------------------------------------------------------- backward

    /// Populates gradients of every node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let seed_shape = self.shape(loss).to_vec();
        self.nodes[loss.0].grad = Some(Tensor::full(&seed_shape, T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.backward_rule(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, gi) in contributions {
                let node = &mut self.nodes[v.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(())
    }

    fn backward_rule(&self, i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[i];
        let gd = g.data();
        let mk = |shape: &[usize], data: Vec<T>| Tensor::new(shape.to_vec(), data).expect("grad shape");
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let mut out = Vec::new();
                if self.requires_grad(*a) {
                    let bt = transpose_raw(bv.data(), k, n);
                    out.push((*a, mk(av.shape(), matmul_raw(gd, &bt, m, n, k))));
                }
                if self.requires_grad(*b) {
                    let at = transpose_raw(av.data(), m, k);
                    out.push((*b, mk(bv.shape(), matmul_raw(&at, gd, k, m, n))));
                }
                out
            }
            Op::Transpose(x) => {
                let (r, c) = (g.rows(), g.cols());
                vec![(*x, mk(self.shape(*x), transpose_raw(gd, r, c)))]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddRow(x, bias) => {
                let d = g.last_dim();
                let mut db = vec![T::zero(); d];
                for row in gd.chunks(d.max(1)) {
                    for (acc, &v) in db.iter_mut().zip(row) {
                        *acc = *acc + v;
                    }
                }
                vec![(*x, g.clone()), (*bias, mk(self.shape(*bias), db))]
            }
            Op::AddConst(x) => vec![(*x, g.clone())],
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = gd.iter().zip(bv.data()).map(|(&g, &y)| g * y).collect();
                let db = gd.iter().zip(av.data()).map(|(&g, &x)| g * x).collect();
                vec![(*a, mk(av.shape(), da)), (*b, mk(bv.shape(), db))]
            }
            Op::Scale(x, s) => vec![(*x, g.map(|v| v * *s))],
            Op::Sum(x) => vec![(*x, Tensor::full(self.shape(*x), gd[0]))],
            Op::ConcatLast(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let d1 = *sa.last().unwrap();
                let d2 = *sb.last().unwrap();
                let rows = self.value(*a).leading();
                let left_scale = match self.fault {
                    Some(BackwardFault::ConcatLastLeftDoubled) => T::from_f64(2.0),
                    None => T::one(),
                };
                let mut ga = Vec::with_capacity(rows * d1);
                let mut gb = Vec::with_capacity(rows * d2);
                for r in 0..rows {
                    let row = &gd[r * (d1 + d2)..(r + 1) * (d1 + d2)];
                    ga.extend(row[..d1].iter().map(|&v| v * left_scale));
                    gb.extend_from_slice(&row[d1..]);
                }
                vec![(*a, mk(sa, ga)), (*b, mk(sb, gb))]
            }
            Op::ConcatRows(xs) => {
                let cols = g.cols();
                let mut offset = 0;
                xs.iter()
                    .map(|&x| {
                        let rows = self.value(x).rows();
                        let part = gd[offset * cols..(offset + rows) * cols].to_vec();
                        offset += rows;
                        (x, mk(self.shape(x), part))
                    })
                    .collect()
            }
            Op::SliceLast { x, start } => {
                let xs = self.shape(*x);
                let d = *xs.last().unwrap();
                let len = g.last_dim();
                let mut gx = vec![T::zero(); self.value(*x).numel()];
                for (r, row) in gd.chunks(len.max(1)).enumerate().take(g.leading()) {
                    gx[r * d + start..r * d + start + len].copy_from_slice(row);
                }
                vec![(*x, mk(xs, gx))]
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = node.value.last_dim();
                let mut gx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(n).zip(gd.chunks(n)) {
                    let dot = yr.iter().zip(gr).fold(T::zero(), |a, (&p, &q)| a + p * q);
                    gx.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                }
                vec![(*x, mk(self.shape(*x), gx))]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = g.last_dim();
                let gamma_v = self.value(*gamma).data();
                let inv_d = T::one() / T::from_f64(d as f64);
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let mut dx = Vec::with_capacity(gd.len());
                for ((gr, hr), &r) in gd.chunks(d).zip(xhat.chunks(d)).zip(inv_std) {
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for j in 0..d {
                        dgamma[j] = dgamma[j] + gr[j] * hr[j];
                        dbeta[j] = dbeta[j] + gr[j];
                        let dh = gr[j] * gamma_v[j];
                        sum_dh = sum_dh + dh;
                        sum_dh_h = sum_dh_h + dh * hr[j];
                    }
                    for j in 0..d {
                        let dh = gr[j] * gamma_v[j];
                        dx.push(r * (dh - sum_dh * inv_d - hr[j] * sum_dh_h * inv_d));
                    }
                }
                vec![
                    (*x, mk(self.shape(*x), dx)),
                    (*gamma, mk(self.shape(*gamma), dgamma)),
                    (*beta, mk(self.shape(*beta), dbeta)),
                ]
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = gd
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                vec![(*x, mk(self.shape(*x), gx))]
            }
            Op::Gather { table, ids } => {
                let ts = self.shape(*table);
                let d = ts[1];
                let mut gt = vec![T::zero(); ts[0] * d];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] = gt[id * d + j] + gd[r * d + j];
                    }
                }
                vec![(*table, mk(ts, gt))]
            }
            Op::Bce { logits, targets } => {
                let zs = self.value(*logits).data();
                let scale = gd[0] / T::from_f64(targets.len() as f64);
                let gz = zs
                    .iter()
                    .zip(targets)
                    .map(|(&z, &y)| (sigmoid(z) - y) * scale)
                    .collect();
                vec![(*logits, mk(self.shape(*logits), gz))]
            }
        }
    }
}

// ------------------------------------------------------------- kernels

/// Row-major `m×k · k×n`; each output sums its `k` products in index order.
pub(crate) fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for t in 0..k {
            let a_it = a[i * k + t];
            let brow = &b[t * n..(t + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + a_it * bv;
            }
        }
    }
    c
}

fn transpose_raw<T: Real>(x: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

pub(crate) fn softmax_raw<T: Real>(x: &[T], n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(n) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let start = out.len();
        let mut total = T::zero();
        for &v in row {
            let e = (v - max).exp();
            total = total + e;
            out.push(e);
        }
        for e in &mut out[start..] {
            *e = *e / total;
        }
    }
    out
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn bce_term<T: Real>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}
