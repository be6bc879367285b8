//! Reverse-mode differentiation over a dynamically recorded graph.
//!
//! Every operation appends a node holding its forward value. Nodes are
//! created in evaluation order, so walking the tape backwards visits a
//! node only after everything that consumed it. Gradients accumulate
//! additively. A node built from [`Tape::constant`] or [`Tape::detach`]
//! never receives a gradient, which is how stop-gradient is expressed.

use super::softmax::{logaddexp, softmax_row_into};
use super::tensor::{dot, gemm, gemm_nt, gemm_tn};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sentinel in a gather index for a masked (skipped) pair.
pub const MASKED: u32 = u32::MAX;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sum(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax {
        x: Var,
    },
    LogSumExp {
        x: Var,
        probs: Vec<T>,
    },
    GatherDot {
        a: Var,
        table: Var,
        idx: Vec<u32>,
    },
    SelectRows {
        src: Var,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        src: Var,
        start: usize,
    },
    SliceCols {
        src: Var,
        start: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Interpolate {
        c_old: Vec<T>,
        c_new: Var,
        ls_new: Var,
        alpha: Vec<T>,
        w_new: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation graph.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar output with respect to every node that needed one.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// The gradient of `v`, or zeros of `shape` when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn check_same(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::dim(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

fn check_2d(op: &'static str, s: &[usize]) -> Result<(usize, usize)> {
    if s.len() != 2 {
        return Err(Error::dim(op, format!("expected a matrix, got {s:?}")));
    }
    Ok((s[0], s[1]))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A trainable leaf.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Stop-gradient: same value, cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = check_2d("matmul", self.shape(a))?;
        let (k2, n) = check_2d("matmul", self.shape(b))?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = check_2d("matmul_nt", self.shape(a))?;
        let (n, k2) = check_2d("matmul_nt", self.shape(b))?;
        if k != k2 {
            return Err(Error::dim("matmul_nt", format!("{m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNt(a, b), rg))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        check_same(op, self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a single row (shape `[c]` or `[1, c]`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let c = self.value(a).cols();
        if self.value(row).numel() != c {
            return Err(Error::dim(
                "add_row",
                format!("{:?} + row {:?}", self.shape(a), self.shape(row)),
            ));
        }
        let r = self.value(row).data().to_vec();
        let mut t = self.value(a).clone();
        for chunk in t.data_mut().chunks_mut(c) {
            for (x, &y) in chunk.iter_mut().zip(&r) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(t, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Per-row normalisation to zero mean and unit variance, then `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::dim("layer_norm", "gain/bias width differs from input"));
        }
        let eps = T::of(super::LAYER_NORM_EPS);
        let rows = self.value(x).rows();
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let inv_d = T::one() / T::of(d as f64);
        for i in 0..rows {
            let row = &mut out.data_mut()[i * d..(i + 1) * d];
            let mean: T = row.iter().copied().sum::<T>() * inv_d;
            let var: T = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let r = (var + eps).sqrt().recip();
            rstd[i] = r;
            for (j, v) in row.iter_mut().enumerate() {
                let h = (*v - mean) * r;
                xhat[i * d + j] = h;
                *v = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    fn check_mask(&self, op: &'static str, x: Var, mask: &[bool]) -> Result<(usize, usize)> {
        let (r, c) = check_2d(op, self.shape(x))?;
        if mask.len() != r * c {
            return Err(Error::dim(op, "mask size differs from input"));
        }
        Ok((r, c))
    }

    /// Row-wise softmax restricted to `mask`; masked entries are exactly zero.
    ///
    /// With `allow_empty`, a row with no admissible entry becomes a zero row;
    /// otherwise it is a [`Error::DegenerateRow`].
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool], allow_empty: bool) -> Result<Var> {
        let (r, c) = self.check_mask("masked_softmax", x, mask)?;
        let mut out = vec![T::zero(); r * c];
        let xv = self.value(x);
        for i in 0..r {
            let m = &mask[i * c..(i + 1) * c];
            if !allow_empty && !m.iter().any(|&b| b) {
                return Err(Error::DegenerateRow { row: i });
            }
            softmax_row_into(xv.row(i), m, &mut out[i * c..(i + 1) * c]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::Softmax { x }, rg))
    }

    /// Row-wise `log Σ exp` over admissible entries, shape `[rows]`.
    /// An empty row gives `-inf` when `allow_empty` is set.
    pub fn masked_logsumexp(&mut self, x: Var, mask: &[bool], allow_empty: bool) -> Result<Var> {
        let (r, c) = self.check_mask("masked_logsumexp", x, mask)?;
        let mut probs = vec![T::zero(); r * c];
        let mut out = Vec::with_capacity(r);
        let xv = self.value(x);
        for i in 0..r {
            let m = &mask[i * c..(i + 1) * c];
            if !allow_empty && !m.iter().any(|&b| b) {
                return Err(Error::DegenerateRow { row: i });
            }
            out.push(softmax_row_into(xv.row(i), m, &mut probs[i * c..(i + 1) * c]));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![r], out)?, Op::LogSumExp { x, probs }, rg))
    }

    /// `out[i, j] = a[i] · table[idx[i, j]]`, zero where `idx` is [`MASKED`].
    pub fn gather_dot(&mut self, a: Var, table: Var, idx: Vec<u32>, cols: usize) -> Result<Var> {
        let (r, k) = check_2d("gather_dot", self.shape(a))?;
        let (p, k2) = check_2d("gather_dot", self.shape(table))?;
        if k != k2 || idx.len() != r * cols {
            return Err(Error::dim("gather_dot", "operand widths or index size differ"));
        }
        if let Some(&bad) = idx.iter().find(|&&t| t != MASKED && t as usize >= p) {
            return Err(Error::dim("gather_dot", format!("index {bad} beyond table of {p} rows")));
        }
        let av = self.value(a);
        let tv = self.value(table);
        let mut out = vec![T::zero(); r * cols];
        for i in 0..r {
            let ai = av.row(i);
            for j in 0..cols {
                let t = idx[i * cols + j];
                if t != MASKED {
                    out[i * cols + j] = dot(ai, tv.row(t as usize));
                }
            }
        }
        let rg = self.rg(a) || self.rg(table);
        Ok(self.push(Tensor::matrix(r, cols, out)?, Op::GatherDot { a, table, idx }, rg))
    }

    pub fn select_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let (n, c) = check_2d("select_rows", self.shape(src))?;
        let sv = self.value(src);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= n {
                return Err(Error::dim("select_rows", format!("row {i} of {n}")));
            }
            out.extend_from_slice(sv.row(i));
        }
        let rg = self.rg(src);
        Ok(self.push(
            Tensor::matrix(idx.len(), c, out)?,
            Op::SelectRows {
                src,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts
            .first()
            .map(|&v| self.value(v).cols())
            .ok_or_else(|| Error::dim("concat_rows", "no inputs"))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &v in parts {
            check_2d("concat_rows", self.shape(v))?;
            if self.value(v).cols() != c {
                return Err(Error::dim("concat_rows", "column counts differ"));
            }
            rows += self.value(v).rows();
            data.extend_from_slice(self.value(v).data());
        }
        let rg = parts.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::matrix(rows, c, data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts
            .first()
            .map(|&v| self.value(v).rows())
            .ok_or_else(|| Error::dim("concat_cols", "no inputs"))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &v in parts {
            check_2d("concat_cols", self.shape(v))?;
            if self.value(v).rows() != r {
                return Err(Error::dim("concat_cols", "row counts differ"));
            }
            widths.push(self.value(v).cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &v in parts {
                data.extend_from_slice(self.value(v).row(i));
            }
        }
        let rg = parts.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::matrix(r, total, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c) = check_2d("slice_rows", self.shape(src))?;
        if start + len > n {
            return Err(Error::dim("slice_rows", format!("{start}+{len} > {n}")));
        }
        let data = self.value(src).data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(src);
        Ok(self.push(Tensor::matrix(len, c, data)?, Op::SliceRows { src, start }, rg))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = check_2d("slice_cols", self.shape(src))?;
        if start + len > c {
            return Err(Error::dim("slice_cols", format!("{start}+{len} > {c}")));
        }
        let sv = self.value(src);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&sv.row(i)[start..start + len]);
        }
        let rg = self.rg(src);
        Ok(self.push(Tensor::matrix(r, len, data)?, Op::SliceCols { src, start }, rg))
    }

    /// Mean negative log-likelihood (nats) of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, v) = check_2d("cross_entropy", self.shape(logits))?;
        if targets.len() != r || r == 0 {
            return Err(Error::dim("cross_entropy", "one target per row required"));
        }
        let mask = vec![true; v];
        let mut probs = vec![T::zero(); r * v];
        let mut total = T::zero();
        let lv = self.value(logits);
        for (i, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(Error::Vocabulary { id: t, vocab: v });
            }
            let lse = softmax_row_into(lv.row(i), &mask, &mut probs[i * v..(i + 1) * v]);
            total += lse - lv.get(i, t);
        }
        let loss = total / T::of(r as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Convex update of running aggregates against fresh partial results.
    ///
    /// Row `i` returns `αᵢ·c_old[i] + (1 − αᵢ)·c_new[i]` with
    /// `αᵢ = S_old / (S_old + s_new + eps)`, all evaluated from log
    /// denominators. `c_old` and `log_s_old` are constants; gradient flows to
    /// `c_new` and `ls_new`. Returns the output and the α of every row.
    pub fn interpolate(
        &mut self,
        c_old: &Tensor<T>,
        log_s_old: &[T],
        c_new: Var,
        ls_new: Var,
        eps: T,
    ) -> Result<(Var, Vec<T>)> {
        let (m, k) = check_2d("interpolate", self.shape(c_new))?;
        if c_old.shape() != [m, k] || log_s_old.len() != m || self.value(ls_new).numel() != m {
            return Err(Error::dim("interpolate", "aggregate and partial shapes differ"));
        }
        let log_eps = eps.ln();
        let lsn = self.value(ls_new).data();
        let mut alpha = Vec::with_capacity(m);
        let mut w_new = Vec::with_capacity(m);
        for i in 0..m {
            let log_den = logaddexp(logaddexp(log_s_old[i], lsn[i]), log_eps);
            alpha.push((log_s_old[i] - log_den).exp());
            w_new.push((lsn[i] - log_den).exp());
        }
        let cn = self.value(c_new);
        let mut out = vec![T::zero(); m * k];
        for i in 0..m {
            let a = alpha[i];
            let b = T::one() - a;
            for j in 0..k {
                out[i * k + j] = a * c_old.get(i, j) + b * cn.get(i, j);
            }
        }
        let rg = self.rg(c_new) || self.rg(ls_new);
        let v = self.push(
            Tensor::matrix(m, k, out)?,
            Op::Interpolate {
                c_old: c_old.data().to_vec(),
                c_new,
                ls_new,
                alpha: alpha.clone(),
                w_new,
            },
            rg,
        );
        Ok((v, alpha))
    }

    /// Reverse sweep from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).numel() != 1 {
            return Err(Error::dim("backward", "output must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(self.shape(output), T::one()));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut [T]> {
        if !self.rg(v) {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.shape(v)));
        }
        slot.as_mut().map(|t| t.data_mut())
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                if let Some(ga) = self.buf(grads, *a) {
                    gemm_nt(gd, self.value(*b).data(), ga, m, n, k);
                }
                if let Some(gb) = self.buf(grads, *b) {
                    gemm_tn(self.value(*a).data(), gd, gb, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).rows();
                if let Some(ga) = self.buf(grads, *a) {
                    gemm(gd, self.value(*b).data(), ga, m, n, k);
                }
                if let Some(gb) = self.buf(grads, *b) {
                    gemm_tn(gd, self.value(*a).data(), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.buf(grads, v) {
                        gv.iter_mut().zip(gd).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.buf(grads, *a) {
                    ga.iter_mut().zip(gd).for_each(|(x, &y)| *x += y);
                }
                if let Some(gb) = self.buf(grads, *b) {
                    gb.iter_mut().zip(gd).for_each(|(x, &y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.buf(grads, *a) {
                    let bv = self.value(*b).data();
                    for ((x, &y), &z) in ga.iter_mut().zip(gd).zip(bv) {
                        *x += y * z;
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    let av = self.value(*a).data();
                    for ((x, &y), &z) in gb.iter_mut().zip(gd).zip(av) {
                        *x += y * z;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.buf(grads, *a) {
                    ga.iter_mut().zip(gd).for_each(|(x, &y)| *x += y);
                }
                let c = g.cols();
                if let Some(gr) = self.buf(grads, *row) {
                    for chunk in gd.chunks(c) {
                        gr.iter_mut().zip(chunk).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.buf(grads, *a) {
                    ga.iter_mut().zip(gd).for_each(|(x, &y)| *x += y * *s);
                }
            }
            Op::Relu(a) => {
                let out = node.value.data();
                if let Some(ga) = self.buf(grads, *a) {
                    for ((x, &y), &o) in ga.iter_mut().zip(gd).zip(out) {
                        if o > T::zero() {
                            *x += y;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let s = gd[0];
                if let Some(ga) = self.buf(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += s);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = g.cols();
                let rows = g.rows();
                let gv = self.value(*gain).data().to_vec();
                if let Some(gg) = self.buf(grads, *gain) {
                    for i in 0..rows {
                        for j in 0..d {
                            gg[j] += gd[i * d + j] * xhat[i * d + j];
                        }
                    }
                }
                if let Some(gb) = self.buf(grads, *bias) {
                    for chunk in gd.chunks(d) {
                        gb.iter_mut().zip(chunk).for_each(|(x, &y)| *x += y);
                    }
                }
                if let Some(gx) = self.buf(grads, *x) {
                    let inv_d = T::one() / T::of(d as f64);
                    let mut dxhat = vec![T::zero(); d];
                    for i in 0..rows {
                        let mut mean_dx = T::zero();
                        let mut mean_dxx = T::zero();
                        for j in 0..d {
                            let v = gd[i * d + j] * gv[j];
                            dxhat[j] = v;
                            mean_dx += v;
                            mean_dxx += v * xhat[i * d + j];
                        }
                        mean_dx *= inv_d;
                        mean_dxx *= inv_d;
                        for j in 0..d {
                            gx[i * d + j] +=
                                rstd[i] * (dxhat[j] - mean_dx - xhat[i * d + j] * mean_dxx);
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                let p = node.value.data();
                let c = g.cols();
                if let Some(gx) = self.buf(grads, *x) {
                    for i in 0..g.rows() {
                        let pr = &p[i * c..(i + 1) * c];
                        let gr = &gd[i * c..(i + 1) * c];
                        let inner: T = pr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] += pr[j] * (gr[j] - inner);
                        }
                    }
                }
            }
            Op::LogSumExp { x, probs } => {
                let c = self.value(*x).cols();
                if let Some(gx) = self.buf(grads, *x) {
                    for (i, &gi) in gd.iter().enumerate() {
                        for j in 0..c {
                            gx[i * c + j] += gi * probs[i * c + j];
                        }
                    }
                }
            }
            Op::GatherDot { a, table, idx } => {
                let cols = g.cols();
                let k = self.value(*a).cols();
                if let Some(ga) = self.buf(grads, *a) {
                    let tv = self.value(*table);
                    for (i, ga_row) in ga.chunks_mut(k).enumerate() {
                        for j in 0..cols {
                            let t = idx[i * cols + j];
                            if t != MASKED {
                                let gij = gd[i * cols + j];
                                for (x, &y) in ga_row.iter_mut().zip(tv.row(t as usize)) {
                                    *x += gij * y;
                                }
                            }
                        }
                    }
                }
                if let Some(gt) = self.buf(grads, *table) {
                    let av = self.value(*a);
                    for i in 0..g.rows() {
                        let ai = av.row(i);
                        for j in 0..cols {
                            let t = idx[i * cols + j];
                            if t != MASKED {
                                let gij = gd[i * cols + j];
                                let row = &mut gt[t as usize * k..(t as usize + 1) * k];
                                for (x, &y) in row.iter_mut().zip(ai) {
                                    *x += gij * y;
                                }
                            }
                        }
                    }
                }
            }
            Op::SelectRows { src, idx } => {
                let c = g.cols();
                if let Some(gs) = self.buf(grads, *src) {
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            gs[i * c + j] += gd[r * c + j];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &v in parts {
                    let n = self.value(v).numel();
                    if let Some(gv) = self.buf(grads, v) {
                        gv.iter_mut()
                            .zip(&gd[offset..offset + n])
                            .for_each(|(x, &y)| *x += y);
                    }
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut col = 0;
                for &v in parts {
                    let w = self.value(v).cols();
                    if let Some(gv) = self.buf(grads, v) {
                        for (i, row) in gv.chunks_mut(w).enumerate() {
                            let src = &gd[i * total + col..i * total + col + w];
                            row.iter_mut().zip(src).for_each(|(x, &y)| *x += y);
                        }
                    }
                    col += w;
                }
            }
            Op::SliceRows { src, start } => {
                let c = g.cols();
                if let Some(gs) = self.buf(grads, *src) {
                    gs[start * c..start * c + gd.len()]
                        .iter_mut()
                        .zip(gd)
                        .for_each(|(x, &y)| *x += y);
                }
            }
            Op::SliceCols { src, start } => {
                let w = g.cols();
                let c = self.value(*src).cols();
                if let Some(gs) = self.buf(grads, *src) {
                    for (i, chunk) in gd.chunks(w).enumerate() {
                        gs[i * c + start..i * c + start + w]
                            .iter_mut()
                            .zip(chunk)
                            .for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let v = self.value(*logits).cols();
                let scale = gd[0] / T::of(targets.len() as f64);
                if let Some(gl) = self.buf(grads, *logits) {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..v {
                            gl[i * v + j] += probs[i * v + j] * scale;
                        }
                        gl[i * v + t] -= scale;
                    }
                }
            }
            Op::Interpolate {
                c_old,
                c_new,
                ls_new,
                alpha,
                w_new,
            } => {
                let k = g.cols();
                let cn = self.value(*c_new).data();
                if let Some(gls) = self.buf(grads, *ls_new) {
                    for i in 0..g.rows() {
                        let mut acc = T::zero();
                        for j in 0..k {
                            acc += gd[i * k + j] * (c_old[i * k + j] - cn[i * k + j]);
                        }
                        // dα/d log s_new = −α·w_new
                        gls[i] += -acc * alpha[i] * w_new[i];
                    }
                }
                if let Some(gc) = self.buf(grads, *c_new) {
                    for i in 0..g.rows() {
                        let b = T::one() - alpha[i];
                        for j in 0..k {
                            gc[i * k + j] += b * gd[i * k + j];
                        }
                    }
                }
            }
        }
    }
}
