//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so reverse creation order is a
//! valid topological order for the backward sweep. Every op owns its
//! backward rule; the structural ops (convolution, pooling, the recurrent
//! scan) are single nodes with hand-derived adjoints.

use super::array::DenseArray;
use super::kernels::{self, ConvGeom};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Parameter,
    Constant,
    Intermediate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Tanh,
    Exp,
    Log,
    Negate,
    Sigmoid,
    Softplus,
    Scale(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

/// Lower clamp for probabilities inside the binary cross-entropy node.
pub const BCE_EPS: f64 = 1e-7;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Unary(Var, Unary),
    Binary(Var, Var, Binary),
    SumAll(Var),
    MeanAll(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    MaxAxis(Var, usize, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    AvgPool2d(Var, usize, usize),
    ChannelsToFrames(Var),
    Gru(Box<GruTape>),
    MaskedRowLse {
        x: Var,
        mask: Vec<bool>,
    },
    Bce {
        p: Var,
        target: Vec<f64>,
    },
    NormalizeRows(Var, Vec<f64>),
}

struct GruTape {
    xw: Var,
    wh: Var,
    bh: Var,
    reverse: bool,
    hidden: usize,
    // Per time step (indexed by frame, not by processing order).
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    a_n: Vec<f64>,
    h_prev: Vec<f64>,
}

struct Node {
    value: DenseArray,
    grad: Option<DenseArray>,
    role: Role,
    needs_grad: bool,
    op: Op,
}

/// A single differentiable computation. Confined to one thread.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
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

    fn push(&mut self, value: DenseArray, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            role: Role::Intermediate,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: DenseArray, role: Role) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            role,
            needs_grad: role == Role::Parameter,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a trainable leaf; its gradient is populated by [`Graph::backward`].
    pub fn param(&mut self, value: DenseArray) -> Var {
        self.leaf(value, Role::Parameter)
    }

    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.leaf(value, Role::Constant)
    }

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn role(&self, v: Var) -> Role {
        self.nodes[v.0].role
    }

    /// Accumulated gradient; all zeros before any backward pass reaches `v`.
    pub fn grad(&self, v: Var) -> DenseArray {
        let n = &self.nodes[v.0];
        n.grad
            .clone()
            .unwrap_or_else(|| DenseArray::zeros(n.value.shape()))
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn two_d(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(dim_err(op, s, &[0, 0]));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.two_d(a, "matmul")?;
        let (k2, n) = self.two_d(b, "matmul")?;
        if k != k2 {
            return Err(dim_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = DenseArray::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.two_d(a, "transpose")?;
        let value = self.value(a).transpose();
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = DenseArray::new(shape.to_vec(), self.value(a).data().to_vec())?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    pub fn unary(&mut self, a: Var, op: Unary) -> Result<Var> {
        let x = self.value(a);
        if op == Unary::Log {
            if let Some(bad) = x.data().iter().find(|v| **v <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("non-positive input {bad}"),
                });
            }
        }
        let value = match op {
            Unary::Tanh => x.map(kernels::tanh),
            Unary::Exp => x.map(f64::exp),
            Unary::Log => x.map(f64::ln),
            Unary::Negate => x.map(|v| -v),
            Unary::Sigmoid => x.map(kernels::sigmoid),
            Unary::Softplus => x.map(kernels::softplus),
            Unary::Scale(s) => x.map(|v| v * s),
        };
        Ok(self.push(value, Op::Unary(a, op), &[a]))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Log)
    }

    pub fn negate(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Negate)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Softplus)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, Unary::Scale(s))
    }

    pub fn binary(&mut self, a: Var, b: Var, op: Binary) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(dim_err("elementwise", x.shape(), y.shape()));
        }
        let f: fn(f64, f64) -> f64 = match op {
            Binary::Add => |p, q| p + q,
            Binary::Sub => |p, q| p - q,
            Binary::Mul => |p, q| p * q,
        };
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        let value = DenseArray::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Binary(a, b, op), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    /// Reduction over everything (`axis = None`, result 1×1) or one axis of a 2-D array.
    /// `Max` requires an axis and routes the gradient to the first maximal index.
    pub fn reduce(&mut self, a: Var, op: Reduce, axis: Option<usize>) -> Result<Var> {
        let x = self.value(a);
        match (op, axis) {
            (Reduce::Sum, None) => {
                let s = x.data().iter().sum();
                Ok(self.push(DenseArray::scalar(s), Op::SumAll(a), &[a]))
            }
            (Reduce::Mean, None) => {
                let s: f64 = x.data().iter().sum();
                let m = s / x.len() as f64;
                Ok(self.push(DenseArray::scalar(m), Op::MeanAll(a), &[a]))
            }
            (Reduce::Max, None) => Err(Error::Contract("max reduction requires an axis".into())),
            (op, Some(axis)) => {
                let (r, c) = self.two_d(a, "reduce")?;
                if axis > 1 {
                    return Err(dim_err("reduce", x.shape(), &[axis]));
                }
                let (outer, inner) = if axis == 0 { (c, r) } else { (r, c) };
                let at = |o: usize, i: usize| {
                    if axis == 0 {
                        x.get(i, o)
                    } else {
                        x.get(o, i)
                    }
                };
                let mut out = Vec::with_capacity(outer);
                let mut arg = Vec::with_capacity(outer);
                for o in 0..outer {
                    match op {
                        Reduce::Sum | Reduce::Mean => {
                            let s: f64 = (0..inner).map(|i| at(o, i)).sum();
                            out.push(if op == Reduce::Mean { s / inner as f64 } else { s });
                        }
                        Reduce::Max => {
                            let mut best = 0;
                            for i in 1..inner {
                                if at(o, i) > at(o, best) {
                                    best = i;
                                }
                            }
                            out.push(at(o, best));
                            arg.push(best);
                        }
                    }
                }
                let shape = if axis == 0 { vec![1, c] } else { vec![r, 1] };
                let value = DenseArray::new(shape, out)?;
                let node = match op {
                    Reduce::Sum => Op::SumAxis(a, axis),
                    Reduce::Mean => Op::MeanAxis(a, axis),
                    Reduce::Max => Op::MaxAxis(a, axis, arg),
                };
                Ok(self.push(value, node, &[a]))
            }
        }
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, Reduce::Sum, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, Reduce::Mean, None)
    }

    pub fn max_over_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, Reduce::Max, Some(axis))
    }

    /// Columns `start..start+len` of a 2-D array.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.two_d(a, "slice_cols")?;
        if start + len > c || len == 0 {
            return Err(dim_err("slice_cols", &[r, c], &[start, len]));
        }
        let x = self.value(a);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&x.row(i)[start..start + len]);
        }
        let value = DenseArray::new(vec![r, len], data)?;
        Ok(self.push(value, Op::SliceCols(a, start), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_cols of nothing".into()));
        };
        let (r, _) = self.two_d(first, "concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.two_d(p, "concat_cols")?;
            if pr != r {
                return Err(dim_err("concat_cols", self.shape(first), self.shape(p)));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = DenseArray::new(vec![r, total], data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stride-1 "same" convolution: `x: c_in×h×w`, `kernel: c_out×c_in×kh×kw`
    /// (odd kernel sides), `bias: c_out`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] || ks[2] % 2 == 0 || ks[3] % 2 == 0 {
            return Err(dim_err("conv2d", &xs, &ks));
        }
        if self.value(bias).len() != ks[0] {
            return Err(dim_err("conv2d bias", self.shape(bias), &[ks[0]]));
        }
        let geom = ConvGeom {
            c_in: xs[0],
            h: xs[1],
            w: xs[2],
            kh: ks[2],
            kw: ks[3],
        };
        let c_out = ks[0];
        let hw = geom.h * geom.w;
        let cols = kernels::im2col(self.value(x).data(), geom);
        let mut out = vec![0.0; c_out * hw];
        for (o, &b) in self.value(bias).data().iter().enumerate() {
            out[o * hw..(o + 1) * hw].fill(b);
        }
        kernels::gemm_nn(
            self.value(kernel).data(),
            &cols,
            &mut out,
            c_out,
            geom.patch_len(),
            hw,
        );
        let value = DenseArray::new(vec![c_out, geom.h, geom.w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
                cols,
            },
            &[x, kernel, bias],
        ))
    }

    /// Non-overlapping average pooling of a `c×h×w` array by `ph×pw`.
    pub fn avg_pool2d(&mut self, x: Var, ph: usize, pw: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || ph == 0 || pw == 0 || s[1] % ph != 0 || s[2] % pw != 0 {
            return Err(dim_err("avg_pool2d", &s, &[ph, pw]));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h / ph, w / pw);
        let src = self.value(x).data();
        let mut out = vec![0.0; c * oh * ow];
        let norm = 1.0 / (ph * pw) as f64;
        for (y, row) in src.chunks_exact(w).enumerate() {
            // y runs over channel-major rows; y / ph indexes the output row.
            let dst = &mut out[(y / ph) * ow..(y / ph + 1) * ow];
            for (o, block) in dst.iter_mut().zip(row.chunks_exact(pw)) {
                *o += block.iter().sum::<f64>() * norm;
            }
        }
        let value = DenseArray::new(vec![c, oh, ow], out)?;
        Ok(self.push(value, Op::AvgPool2d(x, ph, pw), &[x]))
    }

    /// `c×h×w` → `h × (c·w)`: one row per time step, channel-major features.
    pub fn channels_to_frames(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(dim_err("channels_to_frames", &s, &[0, 0, 0]));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                out[y * c * w + ch * w..y * c * w + (ch + 1) * w]
                    .copy_from_slice(&src[(ch * h + y) * w..(ch * h + y + 1) * w]);
            }
        }
        let value = DenseArray::new(vec![h, c * w], out)?;
        Ok(self.push(value, Op::ChannelsToFrames(x), &[x]))
    }

    /// Gated recurrent scan over `xw: T×3H` (input projections plus input
    /// bias, gate order reset|update|candidate) with recurrent weights
    /// `wh: H×3H` and bias `bh: 1×3H`. Returns the hidden states `T×H`,
    /// row `t` holding the state after consuming frame `t`.
    pub fn gru(&mut self, xw: Var, wh: Var, bh: Var, reverse: bool) -> Result<Var> {
        let (t_len, three_h) = self.two_d(xw, "gru")?;
        let (h, c) = self.two_d(wh, "gru")?;
        if c != three_h || three_h != 3 * h || self.shape(bh) != [1, three_h] {
            return Err(dim_err("gru", self.shape(xw), self.shape(wh)));
        }
        let xwv = self.value(xw).data();
        let whv = self.value(wh).data();
        let bhv = self.value(bh).data();
        let mut out = vec![0.0; t_len * h];
        let mut r = vec![0.0; t_len * h];
        let mut z = vec![0.0; t_len * h];
        let mut n = vec![0.0; t_len * h];
        let mut a_n = vec![0.0; t_len * h];
        let mut h_prev = vec![0.0; t_len * h];
        let mut state = vec![0.0; h];
        let mut a = vec![0.0; three_h];
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            a.copy_from_slice(bhv);
            kernels::gemm_nn(&state, whv, &mut a, 1, h, three_h);
            let x = &xwv[t * three_h..(t + 1) * three_h];
            let base = t * h;
            h_prev[base..base + h].copy_from_slice(&state);
            for j in 0..h {
                let rj = kernels::sigmoid(x[j] + a[j]);
                let zj = kernels::sigmoid(x[h + j] + a[h + j]);
                let nj = kernels::tanh(x[2 * h + j] + rj * a[2 * h + j]);
                r[base + j] = rj;
                z[base + j] = zj;
                n[base + j] = nj;
                a_n[base + j] = a[2 * h + j];
                state[j] = (1.0 - zj) * nj + zj * state[j];
            }
            out[base..base + h].copy_from_slice(&state);
        }
        let value = DenseArray::new(vec![t_len, h], out)?;
        let tape = GruTape {
            xw,
            wh,
            bh,
            reverse,
            hidden: h,
            r,
            z,
            n,
            a_n,
            h_prev,
        };
        Ok(self.push(value, Op::Gru(Box::new(tape)), &[xw, wh, bh]))
    }

    /// Row-wise log-sum-exp over the masked entries of a 2-D array (max-shifted).
    /// Rows with an empty mask produce 0 and receive no gradient.
    pub fn masked_row_logsumexp(&mut self, x: Var, mask: Vec<bool>) -> Result<Var> {
        let (r, c) = self.two_d(x, "masked_row_logsumexp")?;
        if mask.len() != r * c {
            return Err(dim_err("masked_row_logsumexp", &[r, c], &[mask.len()]));
        }
        let v = self.value(x);
        let mut out = vec![0.0; r];
        for (i, o) in out.iter_mut().enumerate() {
            let row = v.row(i);
            let m = &mask[i * c..(i + 1) * c];
            let mx = row
                .iter()
                .zip(m)
                .filter(|(_, k)| **k)
                .map(|(s, _)| *s)
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                continue;
            }
            let s: f64 = row
                .iter()
                .zip(m)
                .filter(|(_, k)| **k)
                .map(|(s, _)| (s - mx).exp())
                .sum();
            *o = mx + s.ln();
        }
        let value = DenseArray::new(vec![r, 1], out)?;
        Ok(self.push(value, Op::MaskedRowLse { x, mask }, &[x]))
    }

    /// Elementwise binary cross-entropy of probabilities `p` against fixed
    /// targets, with `p` clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce(&mut self, p: Var, target: &DenseArray) -> Result<Var> {
        let pv = self.value(p);
        if pv.shape() != target.shape() {
            return Err(dim_err("bce", pv.shape(), target.shape()));
        }
        let data = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&q, &y)| {
                let q = q.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
            })
            .collect();
        let value = DenseArray::new(pv.shape().to_vec(), data)?;
        let target = target.data().to_vec();
        Ok(self.push(value, Op::Bce { p, target }, &[p]))
    }

    /// Scales each row of a 2-D array to unit Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.two_d(x, "normalize_rows")?;
        let v = self.value(x);
        let norms: Vec<f64> = (0..r)
            .map(|i| kernels::dot(v.row(i), v.row(i)).sqrt().max(1e-12))
            .collect();
        let mut data = Vec::with_capacity(r * c);
        for (i, nrm) in norms.iter().enumerate() {
            data.extend(v.row(i).iter().map(|e| e / nrm));
        }
        let value = DenseArray::new(vec![r, c], data)?;
        Ok(self.push(value, Op::NormalizeRows(x, norms), &[x]))
    }

    /// Accumulates `∂loss/∂v` into every node reachable from the scalar `loss`.
    /// Repeated calls add to existing gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<DenseArray>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(DenseArray::full(self.shape(loss), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].needs_grad {
                self.propagate(idx, &g, &mut grads);
            }
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<DenseArray>], v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| DenseArray::zeros(node.value.shape()));
        f(slot.data_mut());
    }

    fn propagate(&self, idx: usize, g: &DenseArray, grads: &mut [Option<DenseArray>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |da| kernels::gemm_nt(gd, bv, da, m, n, k));
                self.accumulate(grads, *b, |db| kernels::gemm_tn(av, gd, db, m, k, n));
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                self.accumulate(grads, *a, |da| add_into(da, gt.data()));
            }
            Op::Reshape(a) => self.accumulate(grads, *a, |da| add_into(da, gd)),
            Op::Unary(a, op) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                self.accumulate(grads, *a, |da| {
                    for i in 0..da.len() {
                        let local = match op {
                            Unary::Tanh => 1.0 - y[i] * y[i],
                            Unary::Exp => y[i],
                            Unary::Log => 1.0 / x[i],
                            Unary::Negate => -1.0,
                            Unary::Sigmoid => y[i] * (1.0 - y[i]),
                            Unary::Softplus => kernels::sigmoid(x[i]),
                            Unary::Scale(s) => *s,
                        };
                        da[i] += gd[i] * local;
                    }
                });
            }
            Op::Binary(a, b, op) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                match op {
                    Binary::Add => {
                        self.accumulate(grads, *a, |da| add_into(da, gd));
                        self.accumulate(grads, *b, |db| add_into(db, gd));
                    }
                    Binary::Sub => {
                        self.accumulate(grads, *a, |da| add_into(da, gd));
                        self.accumulate(grads, *b, |db| {
                            db.iter_mut().zip(gd).for_each(|(d, g)| *d -= g)
                        });
                    }
                    Binary::Mul => {
                        self.accumulate(grads, *a, |da| {
                            for i in 0..da.len() {
                                da[i] += gd[i] * y[i];
                            }
                        });
                        self.accumulate(grads, *b, |db| {
                            for i in 0..db.len() {
                                db[i] += gd[i] * x[i];
                            }
                        });
                    }
                }
            }
            Op::SumAll(a) => self.accumulate(grads, *a, |da| da.iter_mut().for_each(|d| *d += gd[0])),
            Op::MeanAll(a) => {
                let n = self.value(*a).len() as f64;
                self.accumulate(grads, *a, |da| da.iter_mut().for_each(|d| *d += gd[0] / n));
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let (r, c) = (self.value(*a).rows(), self.value(*a).cols());
                let scale = match (&node.op, axis) {
                    (Op::MeanAxis(..), 0) => 1.0 / r as f64,
                    (Op::MeanAxis(..), _) => 1.0 / c as f64,
                    _ => 1.0,
                };
                self.accumulate(grads, *a, |da| {
                    for i in 0..r {
                        for j in 0..c {
                            let o = if *axis == 0 { j } else { i };
                            da[i * c + j] += gd[o] * scale;
                        }
                    }
                });
            }
            Op::MaxAxis(a, axis, arg) => {
                let c = self.value(*a).cols();
                self.accumulate(grads, *a, |da| {
                    for (o, &best) in arg.iter().enumerate() {
                        let at = if *axis == 0 { best * c + o } else { o * c + best };
                        da[at] += gd[o];
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let c = self.value(*a).cols();
                let (r, len) = (g.rows(), g.cols());
                self.accumulate(grads, *a, |da| {
                    for i in 0..r {
                        add_into(&mut da[i * c + start..i * c + start + len], g.row(i));
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let pc = self.value(*p).cols();
                    let r = g.rows();
                    self.accumulate(grads, *p, |dp| {
                        for i in 0..r {
                            add_into(
                                &mut dp[i * pc..(i + 1) * pc],
                                &gd[i * total + offset..i * total + offset + pc],
                            );
                        }
                    });
                    offset += pc;
                }
            }
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let c_out = self.value(*kernel).shape()[0];
                let hw = geom.h * geom.w;
                let pl = geom.patch_len();
                self.accumulate(grads, *bias, |db| {
                    for (o, d) in db.iter_mut().enumerate() {
                        *d += gd[o * hw..(o + 1) * hw].iter().sum::<f64>();
                    }
                });
                self.accumulate(grads, *kernel, |dk| {
                    kernels::gemm_nt(gd, cols, dk, c_out, hw, pl);
                });
                let kv = self.value(*kernel).data();
                self.accumulate(grads, *x, |dx| {
                    let mut dcols = vec![0.0; pl * hw];
                    kernels::gemm_tn(kv, gd, &mut dcols, c_out, pl, hw);
                    kernels::col2im(&dcols, *geom, dx);
                });
            }
            Op::AvgPool2d(x, ph, pw) => {
                let s = self.value(*x).shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h / ph, w / pw);
                let norm = 1.0 / (ph * pw) as f64;
                debug_assert_eq!(gd.len(), c * oh * ow);
                self.accumulate(grads, *x, |dx| {
                    for (y, row) in dx.chunks_exact_mut(w).enumerate() {
                        let up = &gd[(y / ph) * ow..(y / ph + 1) * ow];
                        for (block, g) in row.chunks_exact_mut(*pw).zip(up) {
                            block.iter_mut().for_each(|d| *d += g * norm);
                        }
                    }
                });
            }
            Op::ChannelsToFrames(x) => {
                let s = self.value(*x).shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                self.accumulate(grads, *x, |dx| {
                    for ch in 0..c {
                        for y in 0..h {
                            add_into(
                                &mut dx[(ch * h + y) * w..(ch * h + y + 1) * w],
                                &gd[y * c * w + ch * w..y * c * w + (ch + 1) * w],
                            );
                        }
                    }
                });
            }
            Op::Gru(tape) => self.gru_backward(tape, gd, grads),
            Op::MaskedRowLse { x, mask } => {
                let v = self.value(*x);
                let c = v.cols();
                let out = node.value.data();
                self.accumulate(grads, *x, |dx| {
                    for i in 0..v.rows() {
                        for j in 0..c {
                            if mask[i * c + j] {
                                dx[i * c + j] += gd[i] * (v.get(i, j) - out[i]).exp();
                            }
                        }
                    }
                });
            }
            Op::Bce { p, target } => {
                let pv = self.value(*p).data();
                self.accumulate(grads, *p, |dp| {
                    for i in 0..dp.len() {
                        let q = pv[i];
                        if q > BCE_EPS && q < 1.0 - BCE_EPS {
                            dp[i] += gd[i] * (q - target[i]) / (q * (1.0 - q));
                        }
                    }
                });
            }
            Op::NormalizeRows(x, norms) => {
                let y = &node.value;
                let c = y.cols();
                self.accumulate(grads, *x, |dx| {
                    for (i, nrm) in norms.iter().enumerate() {
                        let yr = y.row(i);
                        let gr = &gd[i * c..(i + 1) * c];
                        let proj = kernels::dot(yr, gr);
                        for j in 0..c {
                            dx[i * c + j] += (gr[j] - yr[j] * proj) / nrm;
                        }
                    }
                });
            }
        }
    }

    fn gru_backward(&self, tp: &GruTape, gd: &[f64], grads: &mut [Option<DenseArray>]) {
        let h = tp.hidden;
        let three_h = 3 * h;
        let t_len = gd.len() / h;
        let whv = self.value(tp.wh).data();
        let mut dxw = vec![0.0; t_len * three_h];
        let mut dwh = vec![0.0; h * three_h];
        let mut dbh = vec![0.0; three_h];
        let mut carry = vec![0.0; h];
        let mut da = vec![0.0; three_h];
        let mut dprev = vec![0.0; h];
        for step in (0..t_len).rev() {
            let t = if tp.reverse { t_len - 1 - step } else { step };
            let base = t * h;
            for j in 0..h {
                let dh = gd[base + j] + carry[j];
                let (r, z, n, an) = (tp.r[base + j], tp.z[base + j], tp.n[base + j], tp.a_n[base + j]);
                let hp = tp.h_prev[base + j];
                let dn_pre = dh * (1.0 - z) * (1.0 - n * n);
                let dz_pre = dh * (hp - n) * z * (1.0 - z);
                let dr_pre = dn_pre * an * r * (1.0 - r);
                dprev[j] = dh * z;
                da[j] = dr_pre;
                da[h + j] = dz_pre;
                da[2 * h + j] = dn_pre * r;
                let xrow = t * three_h;
                dxw[xrow + j] = dr_pre;
                dxw[xrow + h + j] = dz_pre;
                dxw[xrow + 2 * h + j] = dn_pre;
            }
            for (d, a) in dbh.iter_mut().zip(&da) {
                *d += a;
            }
            // dwh += h_prevᵀ ⊗ da
            kernels::gemm_nn(&tp.h_prev[base..base + h], &da, &mut dwh, h, 1, three_h);
            // dprev += wh · daᵀ
            kernels::gemm_nt(&da, whv, &mut dprev, 1, three_h, h);
            carry.copy_from_slice(&dprev);
        }
        self.accumulate(grads, tp.xw, |d| add_into(d, &dxw));
        self.accumulate(grads, tp.wh, |d| add_into(d, &dwh));
        self.accumulate(grads, tp.bh, |d| add_into(d, &dbh));
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
