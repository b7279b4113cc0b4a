//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every forward call appends a node holding its value. `backward` walks the
//! nodes in reverse creation order, which is a valid reverse topological order
//! because a node can only reference nodes created before it.

use std::fmt;

use crate::error::{Result, TensorError};
use crate::kernels::gemm;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation whose forward pass is computed by the caller.
///
/// `backward` receives the input values, the recorded output and the upstream
/// gradient, and returns one gradient per input (`None` for inputs it does not
/// differentiate).
pub trait CustomOp: fmt::Debug {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul { a: Var, b: Var, trans_b: bool },
    Silu(Var),
    Sigmoid(Var),
    Tanh(Var),
    RmsNorm { x: Var, eps: f64 },
    LayerNorm { x: Var, eps: f64 },
    ConcatCols(Vec<Var>),
    SumAll(Var),
    Reshape(Var),
    GatherRows { table: Var, index: Vec<Option<usize>> },
    SelectCols { x: Var, cols: Vec<usize> },
    LogSumExpRows(Var),
    BatchedMatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    GroupedMatVec { x: Var, w: Var, groups: Vec<usize> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`, if any flowed into it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape when nothing flowed into it.
    pub fn get_or_zeros(&self, graph: &Graph, var: Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(var).shape()))
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn broadcast_dims(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
) -> Result<(usize, usize, Vec<usize>)> {
    let (ar, ac) = dims2(a);
    let (br, bc) = dims2(b);
    let fit = |x: usize, y: usize| x == y || x == 1 || y == 1;
    if !fit(ar, br) || !fit(ac, bc) {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (r, c) = (ar.max(br), ac.max(bc));
    let shape = if a.shape() == b.shape() || (ar, ac) == (r, c) {
        a.shape().to_vec()
    } else if (br, bc) == (r, c) {
        b.shape().to_vec()
    } else {
        vec![r, c]
    };
    Ok((r, c, shape))
}

/// Sum `g` (shape r×c) down to the broadcast source extents `sr×sc`.
fn reduce_to(g: &[f64], r: usize, c: usize, sr: usize, sc: usize) -> Vec<f64> {
    if sr == r && sc == c {
        return g.to_vec();
    }
    let mut out = vec![0.0; sr * sc];
    for i in 0..r {
        let oi = if sr == 1 { 0 } else { i };
        for j in 0..c {
            let oj = if sc == 1 { 0 } else { j };
            out[oi * sc + oj] += g[i * c + j];
        }
    }
    out
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => {
            for (x, y) in d.iter_mut().zip(src) {
                *x += y;
            }
        }
        None => *dst = Some(src.to_vec()),
    }
}

fn add_owned(dst: &mut Option<Vec<f64>>, src: Vec<f64>) {
    match dst {
        Some(d) => {
            for (x, y) in d.iter_mut().zip(&src) {
                *x += y;
            }
        }
        None => *dst = Some(src),
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, inputs: &[Var], op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf tensor. Tracked leaves receive gradients in `backward`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Result<Var> {
        self.leaf(Tensor::scalar(value), false)
    }

    fn binary<F: Fn(f64, f64) -> f64>(&mut self, name: &'static str, a: Var, b: Var, f: F) -> Result<(Tensor, usize, usize)> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, c, shape) = broadcast_dims(name, ta, tb)?;
        let (ar, ac) = dims2(ta);
        let (br, bc) = dims2(tb);
        let data = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                let ra = &ta.data()[if ar == 1 { 0 } else { i * ac }..][..ac];
                let rb = &tb.data()[if br == 1 { 0 } else { i * bc }..][..bc];
                match (ac == c, bc == c) {
                    (true, true) => out.extend(ra.iter().zip(rb).map(|(&x, &y)| f(x, y))),
                    (true, false) => out.extend(ra.iter().map(|&x| f(x, rb[0]))),
                    (false, true) => out.extend(rb.iter().map(|&y| f(ra[0], y))),
                    (false, false) => out.extend(std::iter::repeat_n(f(ra[0], rb[0]), c)),
                }
            }
            out
        };
        Ok((Tensor::from_parts(shape, data), r, c))
    }

    /// Elementwise sum with row/column broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, _, _) = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", v, &[a, b], Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, _, _) = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", v, &[a, b], Op::Sub(a, b))
    }

    /// Elementwise product with row/column broadcasting. Multiplying by a
    /// constant 0/1 tensor is how masks are applied.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, _, _) = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", v, &[a, b], Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let t = self.value(x);
        let v = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| v * factor).collect());
        self.push("scale", v, &[x], Op::Scale(x, factor))
    }

    /// Sum of several same-shaped tensors.
    pub fn sum_of(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs.split_first().ok_or(TensorError::InvalidShape {
            op: "sum_of",
            detail: "no operands".into(),
        })?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    /// Arithmetic mean of several same-shaped tensors.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var> {
        let s = self.sum_of(xs)?;
        if xs.len() == 1 {
            return Ok(s);
        }
        self.scale(s, 1.0 / xs.len() as f64)
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = dims2(ta);
        let (br, bc) = dims2(tb);
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), trans_b, &mut out, false);
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        self.push("matmul", Tensor::from_parts(shape, out), &[a, b], Op::MatMul { a, b, trans_b })
    }

    fn unary<F: Fn(f64) -> f64>(&mut self, name: &'static str, x: Var, f: F, op: Op) -> Result<Var> {
        let t = self.value(x);
        let v = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect());
        self.push(name, v, &[x], op)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary("silu", x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    /// Row-wise `x / sqrt(mean(x²) + eps)` with no learnable gain.
    pub fn rms_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let c = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(c) {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / c as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            out.extend(row.iter().map(|v| v * inv));
        }
        self.push("rms_norm", Tensor::from_parts(t.shape().to_vec(), out), &[x], Op::RmsNorm { x, eps })
    }

    /// Row-wise layer normalization without affine parameters.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let c = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            out.extend(row.iter().map(|v| (v - mean) * inv));
        }
        self.push("layer_norm", Tensor::from_parts(t.shape().to_vec(), out), &[x], Op::LayerNorm { x, eps })
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or(TensorError::InvalidShape {
            op: "concat_cols",
            detail: "no operands".into(),
        })?;
        let rows = self.value(first).rows();
        for &x in xs {
            if self.value(x).rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(first).shape().to_vec(),
                    right: self.value(x).shape().to_vec(),
                });
            }
        }
        let total: usize = xs.iter().map(|&x| self.value(x).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                out.extend_from_slice(self.value(x).row(r));
            }
        }
        self.push("concat_cols", Tensor::from_parts(vec![rows, total], out), xs, Op::ConcatCols(xs.to_vec()))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum_all", Tensor::scalar(s), &[x], Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshaped(shape)?;
        self.push("reshape", v, &[x], Op::Reshape(x))
    }

    /// Rows of `table` selected by `index`; `None` yields an all-zero row.
    pub fn gather_rows(&mut self, table: Var, index: &[Option<usize>]) -> Result<Var> {
        let t = self.value(table);
        let (v, c) = dims2(t);
        if index.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "gather_rows",
                detail: "empty index".into(),
            });
        }
        let mut out = vec![0.0; index.len() * c];
        for (r, idx) in index.iter().enumerate() {
            if let Some(i) = *idx {
                if i >= v {
                    return Err(TensorError::IndexOutOfRange {
                        op: "gather_rows",
                        index: i,
                        extent: v,
                    });
                }
                out[r * c..(r + 1) * c].copy_from_slice(t.row(i));
            }
        }
        self.push(
            "gather_rows",
            Tensor::from_parts(vec![index.len(), c], out),
            &[table],
            Op::GatherRows {
                table,
                index: index.to_vec(),
            },
        )
    }

    /// Columns of `x` in the order given by `cols`; repeats are allowed.
    pub fn select_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = dims2(t);
        if cols.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "select_cols",
                detail: "empty column list".into(),
            });
        }
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(TensorError::IndexOutOfRange {
                op: "select_cols",
                index: bad,
                extent: c,
            });
        }
        let mut out = Vec::with_capacity(r * cols.len());
        for i in 0..r {
            let row = t.row(i);
            out.extend(cols.iter().map(|&j| row[j]));
        }
        self.push(
            "select_cols",
            Tensor::from_parts(vec![r, cols.len()], out),
            &[x],
            Op::SelectCols { x, cols: cols.to_vec() },
        )
    }

    /// Row-wise `ln Σ exp(x)`, shape `rows×1`.
    pub fn log_sum_exp_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let c = t.cols();
        let out: Vec<f64> = t.data().chunks(c).map(log_sum_exp).collect();
        let r = out.len();
        self.push("log_sum_exp_rows", Tensor::from_parts(vec![r, 1], out), &[x], Op::LogSumExpRows(x))
    }

    /// Per-row small matrix products: row `t` of `a` holds an `m×k` matrix,
    /// row `t` of `b` a `k×n` matrix. Either operand may have a single row,
    /// which is then shared by every output row.
    pub fn batched_matmul(&mut self, a: Var, b: Var, m: usize, k: usize, n: usize) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ar, ac) = dims2(ta);
        let (br, bc) = dims2(tb);
        if ac != m * k || bc != k * n || !(ar == br || ar == 1 || br == 1) {
            return Err(TensorError::ShapeMismatch {
                op: "batched_matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let rows = ar.max(br);
        let mut out = vec![0.0; rows * m * n];
        for t in 0..rows {
            let am = ta.row(if ar == 1 { 0 } else { t });
            let bm = tb.row(if br == 1 { 0 } else { t });
            let om = &mut out[t * m * n..(t + 1) * m * n];
            for i in 0..m {
                for p in 0..k {
                    let av = am[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        om[i * n + j] += av * bm[p * n + j];
                    }
                }
            }
        }
        self.push(
            "batched_matmul",
            Tensor::from_parts(vec![rows, m * n], out),
            &[a, b],
            Op::BatchedMatMul { a, b, m, k, n },
        )
    }

    /// `y[p] = W[groups[p]] · x[p]` where row `g` of `w` holds a row-major
    /// `out×in` matrix and `x` is `P×in`.
    pub fn grouped_matvec(&mut self, x: Var, w: Var, groups: &[usize]) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (p, inp) = dims2(tx);
        let (g, wc) = dims2(tw);
        if groups.len() != p || wc % inp != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "grouped_matvec",
                left: tx.shape().to_vec(),
                right: tw.shape().to_vec(),
            });
        }
        if let Some(&bad) = groups.iter().find(|&&gi| gi >= g) {
            return Err(TensorError::IndexOutOfRange {
                op: "grouped_matvec",
                index: bad,
                extent: g,
            });
        }
        let outw = wc / inp;
        let mut out = vec![0.0; p * outw];
        for (r, &gi) in groups.iter().enumerate() {
            let xr = tx.row(r);
            let wm = tw.row(gi);
            for o in 0..outw {
                let wrow = &wm[o * inp..(o + 1) * inp];
                out[r * outw + o] = wrow.iter().zip(xr).map(|(a, b)| a * b).sum();
            }
        }
        self.push(
            "grouped_matvec",
            Tensor::from_parts(vec![p, outw], out),
            &[x, w],
            Op::GroupedMatVec {
                x,
                w,
                groups: groups.to_vec(),
            },
        )
    }

    /// Records the result of an externally computed operation together with
    /// its backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        let name = op.name();
        self.push(
            name,
            output,
            inputs,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Reverse-mode sweep from a scalar root.
    ///
    /// A root that does not depend on any tracked leaf yields empty gradients.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(TensorError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match (&n.op, g) {
                (Op::Leaf, Some(g)) => Some(Tensor::from_parts(n.value.shape().to_vec(), g)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let (r, c) = dims2(out);
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.tracked(*a) {
                    let (sr, sc) = dims2(self.value(*a));
                    add_owned(&mut grads[a.0], reduce_to(g, r, c, sr, sc));
                }
                if self.tracked(*b) {
                    let (sr, sc) = dims2(self.value(*b));
                    let mut gb = reduce_to(g, r, c, sr, sc);
                    if sign < 0.0 {
                        gb.iter_mut().for_each(|v| *v = -*v);
                    }
                    add_owned(&mut grads[b.0], gb);
                }
            }
            Op::Mul(a, b) => {
                let (r, c) = dims2(out);
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if !self.tracked(this) {
                        continue;
                    }
                    let to = self.value(other);
                    let (or, oc) = dims2(to);
                    let prod: Vec<f64> = if or == r && oc == c {
                        g.iter().zip(to.data()).map(|(x, y)| x * y).collect()
                    } else {
                        let mut p = Vec::with_capacity(r * c);
                        for i in 0..r {
                            let oi = if or == 1 { 0 } else { i };
                            for j in 0..c {
                                let oj = if oc == 1 { 0 } else { j };
                                p.push(g[i * c + j] * to.data()[oi * oc + oj]);
                            }
                        }
                        p
                    };
                    let (sr, sc) = dims2(self.value(this));
                    add_owned(&mut grads[this.0], reduce_to(&prod, r, c, sr, sc));
                }
            }
            Op::Scale(x, f) => {
                if self.tracked(*x) {
                    add_owned(&mut grads[x.0], g.iter().map(|v| v * f).collect());
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = dims2(ta);
                let n = out.cols();
                if self.tracked(*a) {
                    let mut da = vec![0.0; m * k];
                    // da = g · op(b)ᵀ
                    gemm(m, n, k, g, false, tb.data(), !trans_b, &mut da, false);
                    add_owned(&mut grads[a.0], da);
                }
                if self.tracked(*b) {
                    let mut db = vec![0.0; k * n];
                    if *trans_b {
                        // db[n×k] = gᵀ · a
                        gemm(n, m, k, g, true, ta.data(), false, &mut db, false);
                    } else {
                        // db[k×n] = aᵀ · g
                        gemm(k, m, n, ta.data(), true, g, false, &mut db, false);
                    }
                    add_owned(&mut grads[b.0], db);
                }
            }
            Op::Silu(x) => {
                if self.tracked(*x) {
                    let xs = self.value(*x).data();
                    let d = xs
                        .iter()
                        .zip(g)
                        .map(|(&v, &gv)| {
                            let s = sigmoid(v);
                            gv * (s + v * s * (1.0 - s))
                        })
                        .collect();
                    add_owned(&mut grads[x.0], d);
                }
            }
            Op::Sigmoid(x) => {
                if self.tracked(*x) {
                    let d = out.data().iter().zip(g).map(|(&s, &gv)| gv * s * (1.0 - s)).collect();
                    add_owned(&mut grads[x.0], d);
                }
            }
            Op::Tanh(x) => {
                if self.tracked(*x) {
                    let d = out.data().iter().zip(g).map(|(&t, &gv)| gv * (1.0 - t * t)).collect();
                    add_owned(&mut grads[x.0], d);
                }
            }
            Op::RmsNorm { x, eps } => {
                if self.tracked(*x) {
                    let t = self.value(*x);
                    let c = t.cols();
                    let mut d = Vec::with_capacity(t.len());
                    for (row, gr) in t.data().chunks(c).zip(g.chunks(c)) {
                        let ms = row.iter().map(|v| v * v).sum::<f64>() / c as f64;
                        let r2 = ms + eps;
                        let inv = 1.0 / r2.sqrt();
                        let dot: f64 = row.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let coef = dot / (c as f64 * r2);
                        d.extend(row.iter().zip(gr).map(|(&xv, &gv)| inv * (gv - xv * coef)));
                    }
                    add_owned(&mut grads[x.0], d);
                }
            }
            Op::LayerNorm { x, eps } => {
                if self.tracked(*x) {
                    let t = self.value(*x);
                    let c = t.cols();
                    let mut d = Vec::with_capacity(t.len());
                    for (row, gr) in t.data().chunks(c).zip(g.chunks(c)) {
                        let mean = row.iter().sum::<f64>() / c as f64;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gmean = gr.iter().sum::<f64>() / c as f64;
                        let gx: f64 = row
                            .iter()
                            .zip(gr)
                            .map(|(&xv, &gv)| gv * (xv - mean) * inv)
                            .sum::<f64>()
                            / c as f64;
                        d.extend(
                            row.iter()
                                .zip(gr)
                                .map(|(&xv, &gv)| inv * (gv - gmean - (xv - mean) * inv * gx)),
                        );
                    }
                    add_owned(&mut grads[x.0], d);
                }
            }
            Op::ConcatCols(xs) => {
                let rows = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for &x in xs {
                    let c = self.value(x).cols();
                    if self.tracked(x) {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        add_owned(&mut grads[x.0], d);
                    }
                    offset += c;
                }
            }
            Op::SumAll(x) => {
                if self.tracked(*x) {
                    let n = self.value(*x).len();
                    add_owned(&mut grads[x.0], vec![g[0]; n]);
                }
            }
            Op::Reshape(x) => {
                if self.tracked(*x) {
                    add_into(&mut grads[x.0], g);
                }
            }
            Op::GatherRows { table, index } => {
                if self.tracked(*table) {
                    let t = self.value(*table);
                    let c = t.cols();
                    let dst = grads[table.0].get_or_insert_with(|| vec![0.0; t.len()]);
                    for (r, idx) in index.iter().enumerate() {
                        if let Some(i) = *idx {
                            for (d, s) in dst[i * c..(i + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
            Op::SelectCols { x, cols } => {
                if self.tracked(*x) {
                    let t = self.value(*x);
                    let c = t.cols();
                    let w = cols.len();
                    let dst = grads[x.0].get_or_insert_with(|| vec![0.0; t.len()]);
                    for r in 0..t.rows() {
                        for (k, &j) in cols.iter().enumerate() {
                            dst[r * c + j] += g[r * w + k];
                        }
                    }
                }
            }
            Op::LogSumExpRows(x) => {
                if self.tracked(*x) {
                    let t = self.value(*x);
                    let c = t.cols();
                    let mut d = Vec::with_capacity(t.len());
                    for ((row, &lse), &gv) in t.data().chunks(c).zip(out.data()).zip(g) {
                        d.extend(row.iter().map(|&v| gv * (v - lse).exp()));
                    }
                    add_owned(&mut grads[x.0], d);
                }
            }
            Op::BatchedMatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (ar, br) = (ta.rows(), tb.rows());
                let rows = out.rows();
                if self.tracked(*a) {
                    let dst = grads[a.0].get_or_insert_with(|| vec![0.0; ta.len()]);
                    for t in 0..rows {
                        let bm = tb.row(if br == 1 { 0 } else { t });
                        let gm = &g[t * m * n..(t + 1) * m * n];
                        let ai = if ar == 1 { 0 } else { t };
                        let da = &mut dst[ai * m * k..(ai + 1) * m * k];
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += gm[i * n + j] * bm[p * n + j];
                                }
                                da[i * k + p] += s;
                            }
                        }
                    }
                }
                if self.tracked(*b) {
                    let dst = grads[b.0].get_or_insert_with(|| vec![0.0; tb.len()]);
                    for t in 0..rows {
                        let am = ta.row(if ar == 1 { 0 } else { t });
                        let gm = &g[t * m * n..(t + 1) * m * n];
                        let bi = if br == 1 { 0 } else { t };
                        let db = &mut dst[bi * k * n..(bi + 1) * k * n];
                        for i in 0..m {
                            for p in 0..k {
                                let av = am[i * k + p];
                                for j in 0..n {
                                    db[p * n + j] += av * gm[i * n + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::GroupedMatVec { x, w, groups } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let inp = tx.cols();
                let outw = out.cols();
                if self.tracked(*x) {
                    let mut dx = vec![0.0; tx.len()];
                    for (r, &gi) in groups.iter().enumerate() {
                        let wm = tw.row(gi);
                        let dxr = &mut dx[r * inp..(r + 1) * inp];
                        for o in 0..outw {
                            let gv = g[r * outw + o];
                            for (d, wv) in dxr.iter_mut().zip(&wm[o * inp..(o + 1) * inp]) {
                                *d += gv * wv;
                            }
                        }
                    }
                    add_owned(&mut grads[x.0], dx);
                }
                if self.tracked(*w) {
                    let wc = tw.cols();
                    let dst = grads[w.0].get_or_insert_with(|| vec![0.0; tw.len()]);
                    for (r, &gi) in groups.iter().enumerate() {
                        let xr = tx.row(r);
                        let dw = &mut dst[gi * wc..(gi + 1) * wc];
                        for o in 0..outw {
                            let gv = g[r * outw + o];
                            for (d, xv) in dw[o * inp..(o + 1) * inp].iter_mut().zip(xr) {
                                *d += gv * xv;
                            }
                        }
                    }
                }
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let gt = Tensor::from_parts(out.shape().to_vec(), g.to_vec());
                let result = op.backward(&values, out, &gt);
                for (&v, d) in inputs.iter().zip(result) {
                    if let (true, Some(d)) = (self.tracked(v), d) {
                        debug_assert_eq!(d.len(), self.value(v).len(), "{} gradient size", op.name());
                        add_owned(&mut grads[v.0], d.into_data());
                    }
                }
            }
        }
    }
}

/// Numerically stable `ln Σ exp(x)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn silu_of_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0)).unwrap();
        let y = g.silu(x).unwrap();
        assert_eq!(g.value(y).item(), 0.0);
    }

    #[test]
    fn rms_norm_of_symmetric_pair() {
        let mut g = Graph::new();
        let x = g.constant(t(&[&[3.0, -3.0]])).unwrap();
        let y = g.rms_norm(x, 1e-6).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-6 && (v[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn log_sum_exp_of_equal_pair() {
        // ln(e^5 + e^5) evaluated without the stabilising shift.
        let brute = (5.0f64.exp() + 5.0f64.exp()).ln();
        let mut g = Graph::new();
        let x = g.constant(t(&[&[5.0, 5.0]])).unwrap();
        let y = g.log_sum_exp_rows(x).unwrap();
        assert!((g.value(y).item() - brute).abs() < 1e-12);
        assert!((g.value(y).item() - 5.693147180559945).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[3, 2])).unwrap();
        match g.add(a, b) {
            Err(TensorError::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![3, 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_leaf_rejected() {
        let mut g = Graph::new();
        let err = g.constant(Tensor::scalar(f64::NAN)).unwrap_err();
        assert_eq!(err, TensorError::NonFinite { op: "leaf" });
    }

    #[test]
    fn reused_leaf_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.5), true).unwrap();
        let y = g.add(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn constant_root_gives_zero_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(1.0), true).unwrap();
        let c = g.constant(Tensor::scalar(4.0)).unwrap();
        let root = g.scale(c, 2.0).unwrap();
        let grads = g.backward(root).unwrap();
        assert!(grads.get(w).is_none());
        assert_eq!(grads.get_or_zeros(&g, w).item(), 0.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 2]), true).unwrap();
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarRoot(_))));
    }

    #[test]
    fn broadcast_add_row_and_column() {
        let mut g = Graph::new();
        let a = g.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let row = g.constant(t(&[&[10.0, 20.0]])).unwrap();
        let col = g.constant(t(&[&[100.0], &[200.0]])).unwrap();
        let s = g.add(a, row).unwrap();
        let s = g.add(s, col).unwrap();
        assert_eq!(g.value(s).data(), &[111.0, 122.0, 213.0, 224.0]);
    }

    #[test]
    fn backward_leaves_values_untouched() {
        let mut g = Graph::new();
        let w = g.leaf(t(&[&[0.5, -1.0], &[2.0, 0.25]]), true).unwrap();
        let x = g.constant(t(&[&[1.0], &[3.0]])).unwrap();
        let y = g.matmul(w, x).unwrap();
        let y = g.tanh(y).unwrap();
        let s = g.sum_all(y).unwrap();
        let before = g.value(w).clone();
        g.backward(s).unwrap();
        assert_eq!(g.value(w), &before);
    }
}
