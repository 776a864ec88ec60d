//! Reverse-mode automatic differentiation over a linear operation tape.
//!
//! The tape records primitive ops during the forward pass and replays them
//! in reverse to accumulate gradients. Inputs precede their consumers by
//! construction, so a single reverse sweep is a valid topological order.
//! Gradients accumulate: calling `backward` twice without clearing doubles
//! every gradient.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Matmul { a: Var, b: Var },
    Transpose { x: Var },
    Relu { x: Var },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddScalar { x: Var },
    AddBias { x: Var, bias: Var },
    ScaleRows { x: Var, scales: Var },
    SoftmaxRows { x: Var },
    SumAxis { x: Var, axis: usize },
    Reshape { x: Var },
    CrossEntropy { logits: Var, label: usize },
    ConcatCols { xs: Vec<Var> },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Recording tape. Single-threaded; one tape per bag.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a constant input (no gradient tracked).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Input)
    }

    /// Record a trainable parameter (gradient tracked).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Input)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn clear_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        debug_assert!(inputs.iter().all(|v| v.0 < self.nodes.len()));
        self.push(value, requires_grad, op)
    }

    // ---- primitive ops -------------------------------------------------

    /// Matrix product; both operands must be rank 2 with agreeing inner dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 2 || tb.ndim() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::dimension("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, p) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = Tensor::zeros(vec![m, p]);
        matmul_into(ta.data(), tb.data(), out.data_mut(), m, k, p);
        Ok(self.push_op(out, Op::Matmul { a, b }, &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.ndim() != 2 {
            return Err(Error::dimension("transpose", t.shape(), &[]));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = Tensor::zeros(vec![c, r]);
        transpose_into(t.data(), out.data_mut(), r, c);
        Ok(self.push_op(out, Op::Transpose { x }, &[x]))
    }

    /// ReLU with subgradient 0 at the kink. NaN propagates rather than
    /// being clamped, so divergence cannot hide behind the nonlinearity.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map_unary(x, |v| if v > 0.0 || v.is_nan() { v } else { 0.0 });
        self.push_op(out, Op::Relu { x }, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map_unary(x, f64::tanh);
        self.push_op(out, Op::Tanh { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.map_unary(x, stable_sigmoid);
        self.push_op(out, Op::Sigmoid { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push_op(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push_op(out, Op::Mul { a, b }, &[a, b]))
    }

    /// Multiply every element by a compile-time constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.map_unary(x, |v| v * c);
        self.push_op(out, Op::Scale { x, c }, &[x])
    }

    /// Add a constant to every element.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.map_unary(x, |v| v + c);
        self.push_op(out, Op::AddScalar { x }, &[x])
    }

    /// Add a length-M bias vector to every row of an N×M matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.ndim() != 2 || tb.numel() != tx.shape()[1] {
            return Err(Error::dimension("add_bias", tx.shape(), tb.shape()));
        }
        let (n, m) = (tx.shape()[0], tx.shape()[1]);
        let mut out = tx.clone();
        for r in 0..n {
            for c in 0..m {
                out.data_mut()[r * m + c] += tb.data()[c];
            }
        }
        Ok(self.push_op(out, Op::AddBias { x, bias }, &[x, bias]))
    }

    /// Scale row i of an N×M matrix by scales[i].
    pub fn scale_rows(&mut self, x: Var, scales: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(scales));
        if tx.ndim() != 2 || ts.numel() != tx.shape()[0] {
            return Err(Error::dimension("scale_rows", tx.shape(), ts.shape()));
        }
        let (n, m) = (tx.shape()[0], tx.shape()[1]);
        let mut out = tx.clone();
        for r in 0..n {
            let s = ts.data()[r];
            for c in 0..m {
                out.data_mut()[r * m + c] *= s;
            }
        }
        Ok(self.push_op(out, Op::ScaleRows { x, scales }, &[x, scales]))
    }

    /// Softmax along each row of a matrix, computed with max-subtraction.
    /// A vector (or a single-column matrix) is treated as one group of N.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if !t.is_finite() {
            return Err(Error::Numeric("softmax input contains NaN or inf".into()));
        }
        let (groups, len) = softmax_layout(t.shape());
        let mut out = t.clone();
        for g in 0..groups {
            softmax_in_place(&mut out.data_mut()[g * len..(g + 1) * len]);
        }
        Ok(self.push_op(out, Op::SoftmaxRows { x }, &[x]))
    }

    /// Reduce along `axis`. A matrix reduces to a vector; a vector reduces
    /// to a one-element tensor.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.ndim() {
            return Err(Error::Axis {
                axis,
                shape: t.shape().to_vec(),
            });
        }
        let out = if t.ndim() == 1 {
            Tensor::scalar(t.data().iter().sum())
        } else {
            let (n, m) = (t.shape()[0], t.shape()[1]);
            if axis == 0 {
                let mut acc = vec![0.0; m];
                for r in 0..n {
                    for c in 0..m {
                        acc[c] += t.data()[r * m + c];
                    }
                }
                Tensor::vector(acc)
            } else {
                let mut acc = vec![0.0; n];
                for r in 0..n {
                    for c in 0..m {
                        acc[r] += t.data()[r * m + c];
                    }
                }
                Tensor::vector(acc)
            }
        };
        Ok(self.push_op(out, Op::SumAxis { x, axis }, &[x]))
    }

    /// Sum of all elements down to a one-element tensor.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let first = self.sum_axis(x, 0)?;
        if self.value(first).numel() == 1 {
            Ok(first)
        } else {
            self.sum_axis(first, 0)
        }
    }

    /// Change shape without touching data.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(shape, t.data().to_vec())?;
        Ok(self.push_op(out, Op::Reshape { x }, &[x]))
    }

    /// Negative log softmax probability of `label`, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let t = self.value(logits);
        let c = t.numel();
        if t.ndim() == 2 && t.shape()[0] != 1 {
            return Err(Error::dimension("cross_entropy logits", t.shape(), &[c]));
        }
        if label >= c {
            return Err(Error::LabelRange {
                label,
                num_classes: c,
            });
        }
        let lse = log_sum_exp(t.data());
        let loss = Tensor::scalar(lse - t.data()[label]);
        Ok(self.push_op(loss, Op::CrossEntropy { logits, label }, &[logits]))
    }

    /// Concatenate matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Config("concat_cols of zero tensors".into()));
        }
        let n = self.value(xs[0]).shape()[0];
        let mut total_cols = 0;
        for &v in xs {
            let t = self.value(v);
            if t.ndim() != 2 || t.shape()[0] != n {
                return Err(Error::dimension("concat_cols", &[n], t.shape()));
            }
            total_cols += t.shape()[1];
        }
        let mut out = Tensor::zeros(vec![n, total_cols]);
        let mut offset = 0;
        for &v in xs {
            let t = self.value(v).clone();
            let m = t.shape()[1];
            for r in 0..n {
                out.data_mut()[r * total_cols + offset..r * total_cols + offset + m]
                    .copy_from_slice(&t.data()[r * m..(r + 1) * m]);
            }
            offset += m;
        }
        let op = Op::ConcatCols { xs: xs.to_vec() };
        Ok(self.push_op(out, op, xs))
    }

    fn map_unary(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        Tensor::new(t.shape().to_vec(), data).expect("unary preserves shape")
    }

    fn broadcast_binary(
        &self,
        a: Var,
        b: Var,
        ctx: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::new(ta.shape().to_vec(), data)
        } else if tb.numel() == 1 {
            let s = tb.data()[0];
            let data = ta.data().iter().map(|&x| f(x, s)).collect();
            Tensor::new(ta.shape().to_vec(), data)
        } else if ta.numel() == 1 {
            let s = ta.data()[0];
            let data = tb.data().iter().map(|&y| f(s, y)).collect();
            Tensor::new(tb.shape().to_vec(), data)
        } else {
            Err(Error::dimension(ctx, ta.shape(), tb.shape()))
        }
    }

    // ---- backward ------------------------------------------------------

    /// Accumulate d(loss)/d(node) into the grad of every reachable node
    /// that requires a gradient. `loss` must hold exactly one element.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Numeric(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoint[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if adjoint[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let d_out = adjoint[i].take().expect("checked above");
            self.backward_op(i, &d_out, &mut adjoint);
            adjoint[i] = Some(d_out);
        }

        for (i, node) in self.nodes.iter_mut().enumerate() {
            if !node.requires_grad {
                continue;
            }
            if let Some(adj) = &adjoint[i] {
                let grad = node
                    .grad
                    .get_or_insert_with(|| Tensor::zeros(node.value.shape().to_vec()));
                for (g, a) in grad.data_mut().iter_mut().zip(adj) {
                    *g += a;
                }
            }
        }
        Ok(())
    }

    fn backward_op(&self, i: usize, d_out: &[f64], adjoint: &mut [Option<Vec<f64>>]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Input => {}
            Op::Matmul { a, b } => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k, p) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA += dOut · Bᵀ
                let mut bt = vec![0.0; p * k];
                transpose_into(tb.data(), &mut bt, k, p);
                let mut da = vec![0.0; m * k];
                matmul_into(d_out, &bt, &mut da, m, p, k);
                self.accumulate(a, &da, adjoint);
                // dB += Aᵀ · dOut
                let mut at = vec![0.0; k * m];
                transpose_into(ta.data(), &mut at, m, k);
                let mut db = vec![0.0; k * p];
                matmul_into(&at, d_out, &mut db, k, m, p);
                self.accumulate(b, &db, adjoint);
            }
            Op::Transpose { x } => {
                let t = self.value(x);
                let (r, c) = (t.shape()[0], t.shape()[1]);
                let mut dx = vec![0.0; r * c];
                transpose_into(d_out, &mut dx, c, r);
                self.accumulate(x, &dx, adjoint);
            }
            Op::Relu { x } => {
                let tx = self.value(x);
                let dx: Vec<f64> = tx
                    .data()
                    .iter()
                    .zip(d_out)
                    .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                    .collect();
                self.accumulate(x, &dx, adjoint);
            }
            Op::Tanh { x } => {
                let out = &self.nodes[i].value;
                let dx: Vec<f64> = out
                    .data()
                    .iter()
                    .zip(d_out)
                    .map(|(&o, &d)| d * (1.0 - o * o))
                    .collect();
                self.accumulate(x, &dx, adjoint);
            }
            Op::Sigmoid { x } => {
                let out = &self.nodes[i].value;
                let dx: Vec<f64> = out
                    .data()
                    .iter()
                    .zip(d_out)
                    .map(|(&o, &d)| d * o * (1.0 - o))
                    .collect();
                self.accumulate(x, &dx, adjoint);
            }
            Op::Add { a, b } => {
                self.accumulate_broadcast(a, d_out, None, adjoint);
                self.accumulate_broadcast(b, d_out, None, adjoint);
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
                self.accumulate_broadcast(a, d_out, Some(&tb), adjoint);
                self.accumulate_broadcast(b, d_out, Some(&ta), adjoint);
            }
            Op::Scale { x, c } => {
                let dx: Vec<f64> = d_out.iter().map(|&d| d * c).collect();
                self.accumulate(x, &dx, adjoint);
            }
            Op::AddScalar { x } => {
                self.accumulate(x, d_out, adjoint);
            }
            Op::AddBias { x, bias } => {
                self.accumulate(x, d_out, adjoint);
                let m = self.value(bias).numel();
                let n = self.value(x).shape()[0];
                let mut db = vec![0.0; m];
                for r in 0..n {
                    for c in 0..m {
                        db[c] += d_out[r * m + c];
                    }
                }
                self.accumulate(bias, &db, adjoint);
            }
            Op::ScaleRows { x, scales } => {
                let tx = self.value(x);
                let ts = self.value(scales);
                let (n, m) = (tx.shape()[0], tx.shape()[1]);
                let mut dx = vec![0.0; n * m];
                let mut ds = vec![0.0; n];
                for r in 0..n {
                    let s = ts.data()[r];
                    for c in 0..m {
                        dx[r * m + c] = d_out[r * m + c] * s;
                        ds[r] += d_out[r * m + c] * tx.data()[r * m + c];
                    }
                }
                self.accumulate(x, &dx, adjoint);
                self.accumulate(scales, &ds, adjoint);
            }
            Op::SoftmaxRows { x } => {
                // dx = y ⊙ (dy − ⟨dy, y⟩) per softmax group
                let out = &self.nodes[i].value;
                let (groups, len) = softmax_layout(out.shape());
                let mut dx = vec![0.0; out.numel()];
                for g in 0..groups {
                    let y = &out.data()[g * len..(g + 1) * len];
                    let dy = &d_out[g * len..(g + 1) * len];
                    let dot: f64 = y.iter().zip(dy).map(|(&yi, &di)| yi * di).sum();
                    for j in 0..len {
                        dx[g * len + j] = y[j] * (dy[j] - dot);
                    }
                }
                self.accumulate(x, &dx, adjoint);
            }
            Op::SumAxis { x, axis } => {
                let t = self.value(x);
                let mut dx = vec![0.0; t.numel()];
                if t.ndim() == 1 {
                    dx.iter_mut().for_each(|v| *v = d_out[0]);
                } else {
                    let (n, m) = (t.shape()[0], t.shape()[1]);
                    for r in 0..n {
                        for c in 0..m {
                            dx[r * m + c] = if axis == 0 { d_out[c] } else { d_out[r] };
                        }
                    }
                }
                self.accumulate(x, &dx, adjoint);
            }
            Op::Reshape { x } => {
                self.accumulate(x, d_out, adjoint);
            }
            Op::CrossEntropy { logits, label } => {
                // d(logits) = (softmax(logits) − one_hot(label)) · d_loss
                let t = self.value(logits);
                let mut probs = t.data().to_vec();
                softmax_in_place(&mut probs);
                probs[label] -= 1.0;
                let dl: Vec<f64> = probs.iter().map(|&p| p * d_out[0]).collect();
                self.accumulate(logits, &dl, adjoint);
            }
            Op::ConcatCols { xs } => {
                let total_cols: usize = xs.iter().map(|&v| self.value(v).shape()[1]).sum();
                let n = self.value(xs[0]).shape()[0];
                let mut offset = 0;
                for &v in &xs {
                    let m = self.value(v).shape()[1];
                    let mut dx = vec![0.0; n * m];
                    for r in 0..n {
                        dx[r * m..(r + 1) * m].copy_from_slice(
                            &d_out[r * total_cols + offset..r * total_cols + offset + m],
                        );
                    }
                    self.accumulate(v, &dx, adjoint);
                    offset += m;
                }
            }
        }
    }

    fn accumulate(&self, v: Var, contribution: &[f64], adjoint: &mut [Option<Vec<f64>>]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut adjoint[v.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contribution) {
                    *a += c;
                }
            }
            None => adjoint[v.0] = Some(contribution.to_vec()),
        }
    }

    /// Adjoint for one side of a possibly scalar-broadcast binary op.
    /// `factor` is the other operand for `mul`, `None` for `add`.
    fn accumulate_broadcast(
        &self,
        v: Var,
        d_out: &[f64],
        factor: Option<&Tensor>,
        adjoint: &mut [Option<Vec<f64>>],
    ) {
        let numel = self.value(v).numel();
        if numel == d_out.len() {
            match factor {
                None => self.accumulate(v, d_out, adjoint),
                Some(f) if f.numel() == 1 => {
                    let s = f.data()[0];
                    let dx: Vec<f64> = d_out.iter().map(|&d| d * s).collect();
                    self.accumulate(v, &dx, adjoint);
                }
                Some(f) => {
                    let dx: Vec<f64> = d_out.iter().zip(f.data()).map(|(&d, &o)| d * o).collect();
                    self.accumulate(v, &dx, adjoint);
                }
            }
        } else {
            // v was the broadcast scalar: reduce over the output
            debug_assert_eq!(numel, 1);
            let total = match factor {
                None => d_out.iter().sum(),
                Some(f) => d_out.iter().zip(f.data()).map(|(&d, &o)| d * o).sum(),
            };
            self.accumulate(v, &[total], adjoint);
        }
    }
}

// ---- shared numeric kernels ---------------------------------------------

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    for r in 0..m {
        for j in 0..k {
            let av = a[r * k + j];
            if av == 0.0 {
                continue;
            }
            for c in 0..p {
                out[r * p + c] += av * b[j * p + c];
            }
        }
    }
}

pub(crate) fn transpose_into(x: &[f64], out: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
}

pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in xs.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in xs.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Group layout for softmax: a vector or single-column matrix is one group
/// spanning all N entries; a general matrix is softmaxed row by row.
fn softmax_layout(shape: &[usize]) -> (usize, usize) {
    if shape.len() == 1 || shape[1] == 1 {
        (1, shape.iter().product())
    } else {
        (shape[0], shape[1])
    }
}
