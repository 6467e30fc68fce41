//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value. Nodes are appended in evaluation order, so the tape is
//! topologically sorted by construction and [`Tape::backward`] is a single
//! reverse sweep. Tapes are cheap to build and are rebuilt for every pass.
//!
//! ```
//! use nptraj_core::autodiff::{Tape, UnaryKind};
//! use nptraj_core::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let sq = tape.unary(UnaryKind::Square, x).unwrap();
//! let loss = tape.sum_all(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`]: a tensor attached to the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnaryKind {
    Tanh,
    Relu,
    Sigmoid,
    Softplus,
    Exp,
    Log,
    Neg,
    Square,
}

impl UnaryKind {
    pub const ALL: [UnaryKind; 8] = [
        UnaryKind::Tanh,
        UnaryKind::Relu,
        UnaryKind::Sigmoid,
        UnaryKind::Softplus,
        UnaryKind::Exp,
        UnaryKind::Log,
        UnaryKind::Neg,
        UnaryKind::Square,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryKind::Tanh => "tanh",
            UnaryKind::Relu => "relu",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Neg => "neg",
            UnaryKind::Square => "square",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Relu => x.max(0.0),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Softplus => softplus(x),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Log => x.ln(),
            UnaryKind::Neg => -x,
            UnaryKind::Square => x * x,
        }
    }

    /// dy/dx given the input `x` and the output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Tanh => 1.0 - y * y,
            UnaryKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Sigmoid => y * (1.0 - y),
            UnaryKind::Softplus => sigmoid(x),
            UnaryKind::Exp => y,
            UnaryKind::Log => 1.0 / x,
            UnaryKind::Neg => -1.0,
            UnaryKind::Square => 2.0 * x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    pub const ALL: [BinaryKind; 4] = [BinaryKind::Add, BinaryKind::Sub, BinaryKind::Mul, BinaryKind::Div];

    pub fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Unary(UnaryKind, Var),
    Binary(BinaryKind, Var, Var),
    Reduce(ReduceKind, Var, usize),
    SumAll(Var),
    Scale(Var, f64),
    ConcatLast(Vec<Var>),
    SliceLast { x: Var, start: usize },
    SelectRows { x: Var, rows: Vec<usize> },
    RepeatRows(Var),
    SoftmaxLast(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Deliberately wrong derivatives, used only as a negative control for the
/// gradient checker.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    TanhDerivative,
}

/// Ordered record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// A non-differentiable input; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            Mat::row_major(self.value(a).data(), k),
            Mat::row_major(self.value(b).data(), n),
            0.0,
            &mut out,
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out), rg))
    }

    /// Transpose of a 2-d tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "transpose",
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::Transpose(x), Tensor::from_parts(vec![c, r], out), rg))
    }

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let src = self.value(x);
        if kind == UnaryKind::Log {
            if let Some((index, &value)) = src.data().iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
                return Err(Error::Domain {
                    op: "log",
                    index,
                    value,
                });
            }
        }
        let out = src.map(|v| kind.apply(v));
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::Unary(kind, x), out, rg))
    }

    /// Entrywise binary op. `b` must have the same shape as `a` or a suffix of
    /// it, in which case it is repeated along the leading axes of `a`.
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::Broadcast {
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        if kind == BinaryKind::Div {
            if let Some(index) = bv.iter().position(|&v| v == 0.0) {
                return Err(Error::Domain {
                    op: "div",
                    index,
                    value: 0.0,
                });
            }
        }
        let inner = bv.len();
        let mut out = Vec::with_capacity(av.len());
        for chunk in av.chunks_exact(inner) {
            match kind {
                BinaryKind::Add => out.extend(chunk.iter().zip(bv).map(|(x, y)| x + y)),
                BinaryKind::Sub => out.extend(chunk.iter().zip(bv).map(|(x, y)| x - y)),
                BinaryKind::Mul => out.extend(chunk.iter().zip(bv).map(|(x, y)| x * y)),
                BinaryKind::Div => out.extend(chunk.iter().zip(bv).map(|(x, y)| x / y)),
            }
        }
        let shape = sa.to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::Binary(kind, a, b), Tensor::from_parts(shape, out), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    /// Sum or mean along `axis`, removing that axis.
    pub fn reduce(&mut self, kind: ReduceKind, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Axis {
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for j in 0..len {
                let base = (o * len + j) * inner;
                for (d, s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
        }
        if kind == ReduceKind::Mean {
            let inv = 1.0 / len as f64;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::Reduce(kind, x, axis), Tensor::from_parts(out_shape, out), rg))
    }

    /// Sum of every entry, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Op::SumAll(x), Tensor::scalar(s), rg)
    }

    /// Multiplication by a fixed scalar.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.any_grad(&[x]);
        self.push(Op::Scale(x, factor), out, rg)
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| contract("concat_last of an empty list"))?;
        let lead = self.shape(first).split_last().map(|(_, l)| l.to_vec()).unwrap_or_default();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::Dimension {
                    op: "concat_last",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = self.any_grad(xs);
        Ok(self.push(Op::ConcatLast(xs.to_vec()), Tensor::from_parts(shape, out), rg))
    }

    /// Entries `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().ok_or_else(|| contract("slice_last of a scalar"))?;
        if len == 0 || start + len > width {
            return Err(Error::Dimension {
                op: "slice_last",
                lhs: shape,
                rhs: vec![start, len],
            });
        }
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(width)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::SliceLast { x, start }, Tensor::from_parts(out_shape, out), rg))
    }

    /// Gathers rows (entries of the first axis); indices may repeat.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || rows.is_empty() || rows.iter().any(|&r| r >= shape[0]) {
            return Err(Error::Dimension {
                op: "select_rows",
                lhs: shape,
                rhs: rows.to_vec(),
            });
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * src.numel() / shape[0]);
        for &r in rows {
            out.extend_from_slice(src.row(r));
        }
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            Tensor::from_parts(out_shape, out),
            rg,
        ))
    }

    /// Stacks `n` copies of `x` along a new leading axis.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        if n == 0 {
            return Err(contract("repeat_rows with n = 0"));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(n * src.numel());
        for _ in 0..n {
            out.extend_from_slice(src.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(src.shape());
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::RepeatRows(x), Tensor::from_parts(shape, out), rg))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        if src.rank() == 0 {
            return Err(contract("softmax_last of a scalar"));
        }
        let width = src.last_dim();
        let mut out = Vec::with_capacity(src.numel());
        for row in src.data().chunks_exact(width) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = out.len();
            out.extend(row.iter().map(|v| (v - max).exp()));
            let total: f64 = out[start..].iter().sum();
            out[start..].iter_mut().for_each(|v| *v /= total);
        }
        let shape = src.shape().to_vec();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::SoftmaxLast(x), Tensor::from_parts(shape, out), rg))
    }

    /// Gradients of the scalar `root` with respect to every node it depends on.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.numel() != 1 {
            return Err(contract(format!(
                "backward root must be a scalar, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if let Some(ga) = self.slot(*a, grads) {
                    // ga += g · bᵀ
                    gemm(m, n, k, Mat::row_major(g, n), Mat::transposed(bv.data(), n), 1.0, ga);
                }
                if let Some(gb) = self.slot(*b, grads) {
                    // gb += aᵀ · g
                    gemm(k, m, n, Mat::transposed(av.data(), k), Mat::row_major(g, n), 1.0, gb);
                }
            }
            Op::Transpose(x) => {
                let s = node.value.shape();
                let (r, c) = (s[0], s[1]);
                if let Some(gx) = self.slot(*x, grads) {
                    for i in 0..r {
                        for j in 0..c {
                            gx[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::Unary(kind, x) => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                let corrupt = *kind == UnaryKind::Tanh && self.fault == Some(Fault::TanhDerivative);
                if let Some(gx) = self.slot(*x, grads) {
                    for i in 0..gx.len() {
                        let mut d = kind.derivative(xv[i], yv[i]);
                        if corrupt {
                            d *= 1.01;
                        }
                        gx[i] += g[i] * d;
                    }
                }
            }
            Op::Binary(kind, a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let inner = bv.len();
                if let Some(ga) = self.slot(*a, grads) {
                    for (ga, g) in ga.chunks_exact_mut(inner).zip(g.chunks_exact(inner)) {
                        match kind {
                            BinaryKind::Add => ga.iter_mut().zip(g).for_each(|(d, g)| *d += g),
                            BinaryKind::Sub => ga.iter_mut().zip(g).for_each(|(d, g)| *d += g),
                            BinaryKind::Mul => {
                                for i in 0..inner {
                                    ga[i] += g[i] * bv[i];
                                }
                            }
                            BinaryKind::Div => {
                                for i in 0..inner {
                                    ga[i] += g[i] / bv[i];
                                }
                            }
                        }
                    }
                }
                if let Some(gb) = self.slot(*b, grads) {
                    for (ac, gc) in av.chunks_exact(inner).zip(g.chunks_exact(inner)) {
                        match kind {
                            BinaryKind::Add => gb.iter_mut().zip(gc).for_each(|(d, g)| *d += g),
                            BinaryKind::Sub => gb.iter_mut().zip(gc).for_each(|(d, g)| *d -= g),
                            BinaryKind::Mul => {
                                for i in 0..inner {
                                    gb[i] += gc[i] * ac[i];
                                }
                            }
                            BinaryKind::Div => {
                                for i in 0..inner {
                                    gb[i] -= gc[i] * ac[i] / (bv[i] * bv[i]);
                                }
                            }
                        }
                    }
                }
            }
            Op::Reduce(kind, x, axis) => {
                let shape = self.value(*x).shape().to_vec();
                let (outer, len, inner) = axis_split(&shape, *axis);
                let factor = match kind {
                    ReduceKind::Sum => 1.0,
                    ReduceKind::Mean => 1.0 / len as f64,
                };
                if let Some(gx) = self.slot(*x, grads) {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for j in 0..len {
                            let base = (o * len + j) * inner;
                            for (d, s) in gx[base..base + inner].iter_mut().zip(src) {
                                *d += s * factor;
                            }
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = self.slot(*x, grads) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Scale(x, factor) => {
                if let Some(gx) = self.slot(*x, grads) {
                    gx.iter_mut().zip(g).for_each(|(d, g)| *d += g * factor);
                }
            }
            Op::ConcatLast(xs) => {
                let total = node.value.last_dim();
                let mut offset = 0;
                for &x in xs {
                    let w = self.value(x).last_dim();
                    if let Some(gx) = self.slot(x, grads) {
                        for (dst, src) in gx.chunks_exact_mut(w).zip(g.chunks_exact(total)) {
                            dst.iter_mut()
                                .zip(&src[offset..offset + w])
                                .for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceLast { x, start } => {
                let width = self.value(*x).last_dim();
                let len = node.value.last_dim();
                if let Some(gx) = self.slot(*x, grads) {
                    for (dst, src) in gx.chunks_exact_mut(width).zip(g.chunks_exact(len)) {
                        dst[*start..start + len]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::SelectRows { x, rows } => {
                let xv = self.value(*x);
                let width = xv.numel() / xv.shape()[0];
                if let Some(gx) = self.slot(*x, grads) {
                    for (k, &r) in rows.iter().enumerate() {
                        gx[r * width..(r + 1) * width]
                            .iter_mut()
                            .zip(&g[k * width..(k + 1) * width])
                            .for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::RepeatRows(x) => {
                let width = self.value(*x).numel();
                if let Some(gx) = self.slot(*x, grads) {
                    for chunk in g.chunks_exact(width) {
                        gx.iter_mut().zip(chunk).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::SoftmaxLast(x) => {
                let width = node.value.last_dim();
                if let Some(gx) = self.slot(*x, grads) {
                    for ((dst, y), gr) in gx
                        .chunks_exact_mut(width)
                        .zip(node.value.data().chunks_exact(width))
                        .zip(g.chunks_exact(width))
                    {
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for i in 0..width {
                            dst[i] += y[i] * (gr[i] - dot);
                        }
                    }
                }
            }
        }
    }

    /// Gradient accumulator for `v`, allocated on first use; `None` when `v`
    /// does not need a gradient.
    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<f64>>]) -> Option<&'g mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let numel = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; numel]).as_mut_slice())
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, with zeros of `shape` when the root does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Strided view of a row-major matrix buffer.
struct Mat<'a> {
    data: &'a [f64],
    row_stride: isize,
    col_stride: isize,
}

impl<'a> Mat<'a> {
    /// A matrix stored row-major with `cols` columns.
    fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major matrix with `cols` columns.
    fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }
}

/// `c = a·b + beta·c` with `a: [m×k]`, `b: [k×n]`, `c` row-major `[m×n]`.
fn gemm(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64]) {
    assert!(a.data.len() >= m * k && b.data.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserted buffer lengths cover every strided access for the
    // given dimensions, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
