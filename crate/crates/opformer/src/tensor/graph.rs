//! Taped reverse-mode differentiation over a fixed primitive set.
//!
//! A [`Graph`] records the forward pass as a topologically ordered list of
//! nodes (every operand precedes its consumers by construction), then
//! [`Graph::backward`] sweeps the tape in reverse. Gradients accumulate:
//! repeated backward calls without a reset add up, matching the contract of
//! the training loop.

use super::kernels::{
    broadcast_shapes, broadcast_strides, for_each_broadcast2, gelu, gelu_grad, gemm,
};
use super::{Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    AddScalar { a: usize },
    Gelu { a: usize },
    Sqrt { a: usize },
    LayerNorm { x: usize, gamma: Option<usize>, beta: Option<usize>, eps: f64 },
    SumAxis { a: usize, axis: usize },
    SumAll { a: usize },
    MeanAll { a: usize },
    TransposeLast { a: usize },
    Reshape { a: usize },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
    needs_grad: bool,
    op: Op,
}

/// Tape of recorded operations. Confined to a single thread.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, needs_grad: bool, op: Op) -> Var {
        let grad = if needs_grad { vec![0.0; data.len()] } else { Vec::new() };
        self.nodes.push(Node {
            shape,
            data,
            grad,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownVar {
                index: v.0,
                len: self.nodes.len(),
            })
        }
    }

    /// Registers a tensor as a leaf; gradient tracking follows
    /// `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad(), Op::Leaf)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(self.push(shape, data, false, Op::Leaf))
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.push(vec![], vec![value], false, Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    /// Scalar value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let n = &self.nodes[v.0];
        if n.data.len() != 1 {
            return Err(TensorError::NotScalar {
                op: "scalar_value",
                shape: n.shape.clone(),
            });
        }
        Ok(n.data[0])
    }

    /// Accumulated gradient of a tracked node.
    pub fn grad(&self, v: Var) -> Result<&[f64]> {
        self.check_var(v)?;
        let n = &self.nodes[v.0];
        if !n.needs_grad {
            return Err(TensorError::InvalidArgument {
                op: "grad",
                msg: format!("variable #{} does not track gradients", v.0),
            });
        }
        Ok(&n.grad)
    }

    /// Copies the node's value into a fresh tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node invariant")
    }

    /// Explicit NaN/Inf detection on one node.
    pub fn check_finite(&self, v: Var, context: &str) -> Result<()> {
        if self.nodes[v.0].data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite {
                context: context.to_string(),
            })
        }
    }

    // ── forward operations ──────────────────────────────────────────────

    /// Matrix product; leading (batch) dimensions broadcast elementwise.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.nodes[a.0].shape.clone(), self.nodes[b.0].shape.clone());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(TensorError::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(TensorError::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let lead = broadcast_shapes(&sa[..sa.len() - 2], &sb[..sb.len() - 2]).ok_or(
            TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.clone(),
                rhs: sb.clone(),
            },
        )?;
        let mut out_shape = lead.clone();
        out_shape.extend_from_slice(&[m, n]);
        let batch: usize = lead.iter().product();
        let stra = batch_strides(&sa, &lead, m * k);
        let strb = batch_strides(&sb, &lead, k * n);
        let mut out = vec![0.0; batch * m * n];
        {
            let av = &self.nodes[a.0].data;
            let bv = &self.nodes[b.0].data;
            for p in 0..batch {
                let ao = batch_offset(p, &lead, &stra);
                let bo = batch_offset(p, &lead, &strb);
                gemm(
                    m,
                    k,
                    n,
                    1.0,
                    &av[ao..ao + m * k],
                    false,
                    &bv[bo..bo + k * n],
                    false,
                    0.0,
                    &mut out[p * m * n..(p + 1) * m * n],
                );
            }
        }
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        Ok(self.push(out_shape, out, needs, Op::Matmul { a: a.0, b: b.0 }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("div", a, b, |x, y| x / y, Op::Div { a: a.0, b: b.0 })
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let out_shape = broadcast_shapes(sa, sb).ok_or(TensorError::ShapeMismatch {
            op: name,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let total: usize = out_shape.iter().product();
        let mut out = vec![0.0; total];
        let av = &self.nodes[a.0].data;
        let bv = &self.nodes[b.0].data;
        if sa == sb {
            for ((o, x), y) in out.iter_mut().zip(av).zip(bv) {
                *o = f(*x, *y);
            }
        } else {
            let stra = broadcast_strides(sa, &out_shape);
            let strb = broadcast_strides(sb, &out_shape);
            for_each_broadcast2(&out_shape, &stra, &strb, |i, ia, ib| {
                out[i] = f(av[ia], bv[ib]);
            });
        }
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        Ok(self.push(out_shape, out, needs, op))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let data = self.nodes[a.0].data.iter().map(|x| x * factor).collect();
        let needs = self.nodes[a.0].needs_grad;
        self.push(self.nodes[a.0].shape.clone(), data, needs, Op::Scale { a: a.0, factor })
    }

    pub fn add_scalar(&mut self, a: Var, value: f64) -> Var {
        let data = self.nodes[a.0].data.iter().map(|x| x + value).collect();
        let needs = self.nodes[a.0].needs_grad;
        self.push(self.nodes[a.0].shape.clone(), data, needs, Op::AddScalar { a: a.0 })
    }

    /// Exact GELU (error-function form).
    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].data.iter().map(|&x| gelu(x)).collect();
        let needs = self.nodes[a.0].needs_grad;
        self.push(self.nodes[a.0].shape.clone(), data, needs, Op::Gelu { a: a.0 })
    }

    /// Elementwise square root; inputs must be strictly positive for the
    /// gradient to stay finite.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].data.iter().map(|x| x.sqrt()).collect();
        let needs = self.nodes[a.0].needs_grad;
        self.push(self.nodes[a.0].shape.clone(), data, needs, Op::Sqrt { a: a.0 })
    }

    /// Layer normalization over the last axis with population variance.
    /// `gamma`/`beta` are optional rank-1 affine parameters of length `d`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        eps: f64,
    ) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        let d = *shape.last().ok_or(TensorError::InvalidArgument {
            op: "layer_norm",
            msg: "input must have rank >= 1".into(),
        })?;
        if eps <= 0.0 {
            return Err(TensorError::InvalidArgument {
                op: "layer_norm",
                msg: format!("eps must be positive, got {eps}"),
            });
        }
        for v in [gamma, beta].into_iter().flatten() {
            if self.nodes[v.0].shape != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: shape,
                    rhs: self.nodes[v.0].shape.clone(),
                });
            }
        }
        let rows = self.nodes[x.0].data.len() / d;
        let mut out = vec![0.0; rows * d];
        {
            let xv = &self.nodes[x.0].data;
            let gv = gamma.map(|g| self.nodes[g.0].data.clone());
            let bv = beta.map(|b| self.nodes[b.0].data.clone());
            for r in 0..rows {
                let row = &xv[r * d..(r + 1) * d];
                let (mean, rstd) = row_moments(row, eps);
                let orow = &mut out[r * d..(r + 1) * d];
                for j in 0..d {
                    let mut y = (row[j] - mean) * rstd;
                    if let Some(g) = &gv {
                        y *= g[j];
                    }
                    if let Some(b) = &bv {
                        y += b[j];
                    }
                    orow[j] = y;
                }
            }
        }
        let needs = self.nodes[x.0].needs_grad
            || gamma.is_some_and(|g| self.nodes[g.0].needs_grad)
            || beta.is_some_and(|b| self.nodes[b.0].needs_grad);
        Ok(self.push(
            self.nodes[x.0].shape.clone(),
            out,
            needs,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.map(|g| g.0),
                beta: beta.map(|b| b.0),
                eps,
            },
        ))
    }

    /// Sum over one axis (the axis is removed from the shape).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len() {
            return Err(TensorError::InvalidArgument {
                op: "sum_axis",
                msg: format!("axis {axis} out of range for rank {}", shape.len()),
            });
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        let av = &self.nodes[a.0].data;
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let orow = &mut out[o * inner..(o + 1) * inner];
                for i in 0..inner {
                    orow[i] += av[base + i];
                }
            }
        }
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(out_shape, out, needs, Op::SumAxis { a: a.0, axis }))
    }

    /// Sum of all elements; the result is a rank-0 scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let needs = self.nodes[a.0].needs_grad;
        self.push(vec![], vec![s], needs, Op::SumAll { a: a.0 })
    }

    /// Mean of all elements; the result is a rank-0 scalar.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].data.len().max(1);
        let s: f64 = self.nodes[a.0].data.iter().sum::<f64>() / n as f64;
        let needs = self.nodes[a.0].needs_grad;
        self.push(vec![], vec![s], needs, Op::MeanAll { a: a.0 })
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, a: Var) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.len() < 2 {
            return Err(TensorError::InvalidArgument {
                op: "transpose_last",
                msg: format!("rank {} input", shape.len()),
            });
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let batch: usize = shape[..shape.len() - 2].iter().product();
        let mut out_shape = shape.clone();
        let len = out_shape.len();
        out_shape.swap(len - 2, len - 1);
        let av = &self.nodes[a.0].data;
        let mut out = vec![0.0; av.len()];
        for p in 0..batch {
            let src = &av[p * r * c..(p + 1) * r * c];
            let dst = &mut out[p * r * c..(p + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(out_shape, out, needs, Op::TransposeLast { a: a.0 }))
    }

    /// Reinterprets the buffer under a new shape with equal element count.
    pub fn reshape(&mut self, a: Var, new_shape: Vec<usize>) -> Result<Var> {
        let expected: usize = new_shape.iter().product();
        if expected != self.nodes[a.0].data.len() {
            return Err(TensorError::LengthMismatch {
                shape: new_shape,
                expected,
                actual: self.nodes[a.0].data.len(),
            });
        }
        let data = self.nodes[a.0].data.clone();
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(new_shape, data, needs, Op::Reshape { a: a.0 }))
    }

    // ── reverse sweep ───────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar output. Each tracked node's gradient
    /// buffer receives the exact derivative; repeated calls accumulate.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        self.check_var(out)?;
        if self.nodes[out.0].data.len() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: self.nodes[out.0].shape.clone(),
            });
        }
        let n = self.nodes.len();
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); n];
        adj[out.0] = vec![1.0];
        for i in (0..n).rev() {
            let gi = std::mem::take(&mut adj[i]);
            if gi.is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &gi, &mut adj);
            let node = &mut self.nodes[i];
            for (g, d) in node.grad.iter_mut().zip(&gi) {
                *g += d;
            }
        }
        Ok(())
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes[idx].needs_grad
    }

    fn adj_buf<'a>(&self, adj: &'a mut [Vec<f64>], idx: usize) -> &'a mut [f64] {
        if adj[idx].is_empty() {
            adj[idx] = vec![0.0; self.nodes[idx].data.len()];
        }
        &mut adj[idx]
    }

    /// Adds `src` (laid out as `out_shape`) into `dst` (laid out as
    /// `dst_shape`), summing over broadcast axes.
    fn reduce_into(out_shape: &[usize], src: &[f64], dst_shape: &[usize], dst: &mut [f64]) {
        if out_shape == dst_shape {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
            return;
        }
        let strd = broadcast_strides(dst_shape, out_shape);
        let zeros = vec![0usize; out_shape.len()];
        for_each_broadcast2(out_shape, &strd, &zeros, |i, id, _| {
            dst[id] += src[i];
        });
    }

    fn propagate(&mut self, i: usize, gi: &[f64], adj: &mut Vec<Vec<f64>>) {
        let op = self.nodes[i].op.clone();
        let out_shape = self.nodes[i].shape.clone();
        match op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let sa = self.nodes[a].shape.clone();
                let sb = self.nodes[b].shape.clone();
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let lead = &out_shape[..out_shape.len() - 2];
                let batch: usize = lead.iter().product();
                let stra = batch_strides(&sa, lead, m * k);
                let strb = batch_strides(&sb, lead, k * n);
                if self.needs(a) {
                    let bdata = self.nodes[b].data.clone();
                    let da = self.adj_buf(adj, a);
                    for p in 0..batch {
                        let ao = batch_offset(p, lead, &stra);
                        let bo = batch_offset(p, lead, &strb);
                        // dA += dC * B^T
                        gemm(
                            m,
                            n,
                            k,
                            1.0,
                            &gi[p * m * n..(p + 1) * m * n],
                            false,
                            &bdata[bo..bo + k * n],
                            true,
                            1.0,
                            &mut da[ao..ao + m * k],
                        );
                    }
                }
                if self.needs(b) {
                    let adata = self.nodes[a].data.clone();
                    let db = self.adj_buf(adj, b);
                    for p in 0..batch {
                        let ao = batch_offset(p, lead, &stra);
                        let bo = batch_offset(p, lead, &strb);
                        // dB += A^T * dC
                        gemm(
                            k,
                            m,
                            n,
                            1.0,
                            &adata[ao..ao + m * k],
                            true,
                            &gi[p * m * n..(p + 1) * m * n],
                            false,
                            1.0,
                            &mut db[bo..bo + k * n],
                        );
                    }
                }
            }
            Op::Add { a, b } => {
                if self.needs(a) {
                    let sa = self.nodes[a].shape.clone();
                    Self::reduce_into(&out_shape, gi, &sa, self.adj_buf(adj, a));
                }
                if self.needs(b) {
                    let sb = self.nodes[b].shape.clone();
                    Self::reduce_into(&out_shape, gi, &sb, self.adj_buf(adj, b));
                }
            }
            Op::Sub { a, b } => {
                if self.needs(a) {
                    let sa = self.nodes[a].shape.clone();
                    Self::reduce_into(&out_shape, gi, &sa, self.adj_buf(adj, a));
                }
                if self.needs(b) {
                    let sb = self.nodes[b].shape.clone();
                    let neg: Vec<f64> = gi.iter().map(|g| -g).collect();
                    Self::reduce_into(&out_shape, &neg, &sb, self.adj_buf(adj, b));
                }
            }
            Op::Mul { a, b } => {
                let sa = self.nodes[a].shape.clone();
                let sb = self.nodes[b].shape.clone();
                let stra = broadcast_strides(&sa, &out_shape);
                let strb = broadcast_strides(&sb, &out_shape);
                if self.needs(a) {
                    let bdata = self.nodes[b].data.clone();
                    let da = self.adj_buf(adj, a);
                    for_each_broadcast2(&out_shape, &stra, &strb, |idx, ia, ib| {
                        da[ia] += gi[idx] * bdata[ib];
                    });
                }
                if self.needs(b) {
                    let adata = self.nodes[a].data.clone();
                    let db = self.adj_buf(adj, b);
                    for_each_broadcast2(&out_shape, &stra, &strb, |idx, ia, ib| {
                        db[ib] += gi[idx] * adata[ia];
                    });
                }
            }
            Op::Div { a, b } => {
                let sa = self.nodes[a].shape.clone();
                let sb = self.nodes[b].shape.clone();
                let stra = broadcast_strides(&sa, &out_shape);
                let strb = broadcast_strides(&sb, &out_shape);
                let bdata = self.nodes[b].data.clone();
                if self.needs(a) {
                    let da = self.adj_buf(adj, a);
                    for_each_broadcast2(&out_shape, &stra, &strb, |idx, ia, ib| {
                        da[ia] += gi[idx] / bdata[ib];
                    });
                }
                if self.needs(b) {
                    let adata = self.nodes[a].data.clone();
                    let db = self.adj_buf(adj, b);
                    for_each_broadcast2(&out_shape, &stra, &strb, |idx, ia, ib| {
                        db[ib] -= gi[idx] * adata[ia] / (bdata[ib] * bdata[ib]);
                    });
                }
            }
            Op::Scale { a, factor } => {
                if self.needs(a) {
                    let da = self.adj_buf(adj, a);
                    for (d, g) in da.iter_mut().zip(gi) {
                        *d += g * factor;
                    }
                }
            }
            Op::AddScalar { a } => {
                if self.needs(a) {
                    let da = self.adj_buf(adj, a);
                    for (d, g) in da.iter_mut().zip(gi) {
                        *d += g;
                    }
                }
            }
            Op::Gelu { a } => {
                if self.needs(a) {
                    let xs = self.nodes[a].data.clone();
                    let da = self.adj_buf(adj, a);
                    for ((d, g), x) in da.iter_mut().zip(gi).zip(&xs) {
                        *d += g * gelu_grad(*x);
                    }
                }
            }
            Op::Sqrt { a } => {
                if self.needs(a) {
                    let ys = self.nodes[i].data.clone();
                    let da = self.adj_buf(adj, a);
                    for ((d, g), y) in da.iter_mut().zip(gi).zip(&ys) {
                        *d += g * 0.5 / y;
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                self.layer_norm_backward(x, gamma, beta, eps, gi, adj);
            }
            Op::SumAxis { a, axis } => {
                if self.needs(a) {
                    let shape = self.nodes[a].shape.clone();
                    let outer: usize = shape[..axis].iter().product();
                    let mid = shape[axis];
                    let inner: usize = shape[axis + 1..].iter().product();
                    let da = self.adj_buf(adj, a);
                    for o in 0..outer {
                        for m in 0..mid {
                            let base = (o * mid + m) * inner;
                            let grow = &gi[o * inner..(o + 1) * inner];
                            for (off, g) in grow.iter().enumerate() {
                                da[base + off] += g;
                            }
                        }
                    }
                }
            }
            Op::SumAll { a } => {
                if self.needs(a) {
                    let g = gi[0];
                    let da = self.adj_buf(adj, a);
                    for d in da.iter_mut() {
                        *d += g;
                    }
                }
            }
            Op::MeanAll { a } => {
                if self.needs(a) {
                    let g = gi[0] / self.nodes[a].data.len().max(1) as f64;
                    let da = self.adj_buf(adj, a);
                    for d in da.iter_mut() {
                        *d += g;
                    }
                }
            }
            Op::TransposeLast { a } => {
                if self.needs(a) {
                    let shape = self.nodes[a].shape.clone();
                    let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                    let batch: usize = shape[..shape.len() - 2].iter().product();
                    let da = self.adj_buf(adj, a);
                    for p in 0..batch {
                        let g = &gi[p * r * c..(p + 1) * r * c];
                        let d = &mut da[p * r * c..(p + 1) * r * c];
                        // gi is laid out [c, r]; scatter back to [r, c].
                        for j in 0..c {
                            for i2 in 0..r {
                                d[i2 * c + j] += g[j * r + i2];
                            }
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                if self.needs(a) {
                    let da = self.adj_buf(adj, a);
                    for (d, g) in da.iter_mut().zip(gi) {
                        *d += g;
                    }
                }
            }
        }
    }

    fn layer_norm_backward(
        &mut self,
        x: usize,
        gamma: Option<usize>,
        beta: Option<usize>,
        eps: f64,
        gi: &[f64],
        adj: &mut Vec<Vec<f64>>,
    ) {
        let shape = self.nodes[x].shape.clone();
        let d = *shape.last().unwrap();
        let rows = self.nodes[x].data.len() / d;
        let xv = self.nodes[x].data.clone();
        let gv = gamma.map(|g| self.nodes[g].data.clone());

        if self.needs(x) {
            let dx = self.adj_buf(adj, x);
            for r in 0..rows {
                let row = &xv[r * d..(r + 1) * d];
                let grow = &gi[r * d..(r + 1) * d];
                let (mean, rstd) = row_moments(row, eps);
                // ghat = upstream ⊙ gamma, folded with xhat moments.
                let mut sum_g = 0.0;
                let mut sum_gx = 0.0;
                for j in 0..d {
                    let xhat = (row[j] - mean) * rstd;
                    let gh = match &gv {
                        Some(g) => grow[j] * g[j],
                        None => grow[j],
                    };
                    sum_g += gh;
                    sum_gx += gh * xhat;
                }
                let inv_d = 1.0 / d as f64;
                let drow = &mut dx[r * d..(r + 1) * d];
                for j in 0..d {
                    let xhat = (row[j] - mean) * rstd;
                    let gh = match &gv {
                        Some(g) => grow[j] * g[j],
                        None => grow[j],
                    };
                    drow[j] += rstd * (gh - inv_d * sum_g - xhat * inv_d * sum_gx);
                }
            }
        }
        if let Some(g_idx) = gamma {
            if self.needs(g_idx) {
                let dg = self.adj_buf(adj, g_idx);
                for r in 0..rows {
                    let row = &xv[r * d..(r + 1) * d];
                    let grow = &gi[r * d..(r + 1) * d];
                    let (mean, rstd) = row_moments(row, eps);
                    for j in 0..d {
                        dg[j] += grow[j] * (row[j] - mean) * rstd;
                    }
                }
            }
        }
        if let Some(b_idx) = beta {
            if self.needs(b_idx) {
                let db = self.adj_buf(adj, b_idx);
                for r in 0..rows {
                    let grow = &gi[r * d..(r + 1) * d];
                    for j in 0..d {
                        db[j] += grow[j];
                    }
                }
            }
        }
    }
}

/// Mean and reciprocal standard deviation (population variance) of one row.
/// Constant rows are detected so that zero-variance symmetry holds exactly.
fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    if row.iter().all(|&v| v == row[0]) {
        return (row[0], 1.0 / eps.sqrt());
    }
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Per-axis strides (in elements) used to locate a matrix inside a batched
/// operand, with stride 0 on broadcast axes.
fn batch_strides(shape: &[usize], lead: &[usize], mat_elems: usize) -> Vec<usize> {
    let own_lead = &shape[..shape.len() - 2];
    let pad = lead.len() - own_lead.len();
    let mut strides = vec![0usize; lead.len()];
    let mut acc = mat_elems;
    for i in (0..own_lead.len()).rev() {
        strides[pad + i] = if own_lead[i] == 1 && lead[pad + i] != 1 { 0 } else { acc };
        acc *= own_lead[i];
    }
    strides
}

fn batch_offset(flat: usize, lead: &[usize], strides: &[usize]) -> usize {
    let mut rem = flat;
    let mut off = 0;
    for d in (0..lead.len()).rev() {
        let c = rem % lead[d];
        rem /= lead[d];
        off += c * strides[d];
    }
    off
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn leaf2(g: &mut Graph, rows: &[Vec<f64>], grad: bool) -> Var {
        let mut t = Tensor::matrix(rows).unwrap();
        if grad {
            t = t.with_grad();
        }
        g.leaf(&t)
    }

    #[test]
    fn matmul_identity_case() {
        let mut g = Graph::new();
        let i2 = leaf2(&mut g, &[vec![1.0, 0.0], vec![0.0, 1.0]], false);
        let a = leaf2(&mut g, &[vec![1.0, 2.0], vec![3.0, 4.0]], false);
        let c = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(c), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_case() {
        let mut g = Graph::new();
        let a = leaf2(&mut g, &[vec![1.0, 2.0], vec![3.0, 4.0]], false);
        let b = leaf2(&mut g, &[vec![5.0], vec![6.0]], false);
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 1]);
        assert_eq!(g.value(c), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_zero_case() {
        let mut g = Graph::new();
        let a = leaf2(&mut g, &[vec![1.0, 2.0], vec![3.0, 4.0]], false);
        let z = g.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let c = g.matmul(a, z).unwrap();
        assert!(g.value(c).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = g.constant(vec![2, 2], vec![0.0; 4]).unwrap();
        match g.matmul(a, b) {
            Err(TensorError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn batched_matmul_broadcasts_leading_dims() {
        let mut g = Graph::new();
        // [2, 2, 2] batch times a shared [2, 2] weight.
        let a = g
            .constant(vec![2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
            .unwrap();
        let w = g.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let c = g.matmul(a, w).unwrap();
        assert_eq!(g.shape(c), &[2, 2, 2]);
        assert_eq!(g.value(c), &[1.0, 4.0, 3.0, 8.0, 5.0, 12.0, 7.0, 16.0]);
    }

    #[test]
    fn layer_norm_example_values() {
        let mut g = Graph::new();
        let x = leaf2(&mut g, &[vec![1.0, -1.0]], false);
        let y = g.layer_norm(x, None, None, 1e-5).unwrap();
        let expect = 1.0 / (1.0 + 1e-5f64).sqrt();
        assert_relative_eq!(g.value(y)[0], expect, max_relative = 1e-12);
        assert_relative_eq!(g.value(y)[1], -expect, max_relative = 1e-12);
    }

    #[test]
    fn layer_norm_constant_row_returns_beta() {
        let mut g = Graph::new();
        let x = leaf2(&mut g, &[vec![3.7, 3.7, 3.7]], false);
        let gamma = g.leaf(&Tensor::from_vec(vec![5.0, -2.0, 0.5]));
        let beta = g.leaf(&Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let y = g.layer_norm(x, Some(gamma), Some(beta), 1e-5).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn layer_norm_gamma_scaling() {
        let mut g = Graph::new();
        let x = leaf2(&mut g, &[vec![1.0, -1.0]], false);
        let gamma = g.leaf(&Tensor::from_vec(vec![2.0, 2.0]));
        let beta = g.leaf(&Tensor::from_vec(vec![0.0, 0.0]));
        let y = g.layer_norm(x, Some(gamma), Some(beta), 1e-5).unwrap();
        let expect = 2.0 / (1.0 + 1e-5f64).sqrt();
        assert_relative_eq!(g.value(y)[0], expect, max_relative = 1e-12);
        assert_relative_eq!(g.value(y)[1], -expect, max_relative = 1e-12);
    }

    #[test]
    fn backward_square_at_three() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::scalar(3.0).with_grad());
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_constant_gives_zero() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::scalar(3.0).with_grad());
        let c = g.constant_scalar(7.0);
        let y = g.add(x, c).unwrap();
        let z = g.sub(y, x).unwrap(); // z == c, d z / d x == 0
        g.backward(z).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn backward_layer_norm_beta_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_vec(vec![0.3, -1.2, 2.0, 0.7]));
        let gamma = g.leaf(&Tensor::from_vec(vec![1.0; 4]));
        let beta = g.leaf(&Tensor::from_vec(vec![0.0; 4]).with_grad());
        let y = g.layer_norm(x, Some(gamma), Some(beta), 1e-5).unwrap();
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(beta).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::scalar(3.0).with_grad());
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[12.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_vec(vec![1.0, 2.0]).with_grad());
        assert!(matches!(g.backward(x), Err(TensorError::NotScalar { .. })));
    }

    #[test]
    fn backward_rejects_unknown_var() {
        let mut g = Graph::new();
        let _ = g.leaf(&Tensor::scalar(1.0));
        let bogus = Var(17);
        assert!(matches!(g.backward(bogus), Err(TensorError::UnknownVar { .. })));
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let mut g = Graph::new();
        let x = g.constant(vec![3, 2], (0..6).map(|v| v as f64).collect()).unwrap();
        let b = g.leaf(&Tensor::from_vec(vec![10.0, 20.0]).with_grad());
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y), &[10.0, 21.0, 12.0, 23.0, 14.0, 25.0]);
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        // The bias participates in all three rows.
        assert_eq!(g.grad(b).unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn transpose_roundtrip_and_grad() {
        let mut g = Graph::new();
        let x = g.leaf(
            &Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
                .unwrap()
                .with_grad(),
        );
        let xt = g.transpose_last(x).unwrap();
        assert_eq!(g.shape(xt), &[3, 2]);
        assert_eq!(g.value(xt), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let back = g.transpose_last(xt).unwrap();
        assert_eq!(g.value(back), g.value(x));
        let s = g.sum_all(xt);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn check_finite_flags_nan_nodes() {
        let mut g = Graph::new();
        let x = g.constant(vec![2], vec![1.0, f64::NAN]).unwrap();
        assert!(g.check_finite(x, "unit").is_err());
    }

    #[test]
    fn matmul_associativity_within_tolerance() {
        let mut g = Graph::new();
        let seed_data = |n: usize, mul: f64| -> Vec<f64> {
            (0..n).map(|i| ((i as f64 * mul + 0.3).sin()) * 2.0).collect()
        };
        let a = g.constant(vec![4, 5], seed_data(20, 0.7)).unwrap();
        let b = g.constant(vec![5, 3], seed_data(15, 1.3)).unwrap();
        let c = g.constant(vec![3, 6], seed_data(18, 2.1)).unwrap();
        let ab = g.matmul(a, b).unwrap();
        let left = g.matmul(ab, c).unwrap();
        let bc = g.matmul(b, c).unwrap();
        let right = g.matmul(a, bc).unwrap();
        let mag = g.value(left).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (l, r) in g.value(left).iter().zip(g.value(right)) {
            assert!((l - r).abs() <= 1e-10 * mag);
        }
    }
}
