//! HSTU decoder layer: SiLU-gated pointwise attention with positional and
//! temporal relative biases under a causal mask.

use std::rc::Rc;

use inttravel_tensor::{CustomOp, Graph, ParamBinder, Result, Tensor, Var};

pub const TIME_DELTA_BUCKETS: usize = 32;
/// Upper edge of the temporal bucket range.
pub const MAX_TIME_DELTA_MS: f64 = 90.0 * 24.0 * 3600.0 * 1000.0;
pub const NORM_EPS: f64 = 1e-6;

/// Log₂-spaced bucket of a time difference: 0 below 1 ms, then 31 buckets
/// spanning 1 ms to 90 days, clamped at the top.
pub fn time_delta_bucket(delta_ms: i64) -> usize {
    if delta_ms < 1 {
        return 0;
    }
    let span = MAX_TIME_DELTA_MS.log2();
    let b = 1.0 + ((delta_ms as f64).log2() * (TIME_DELTA_BUCKETS - 2) as f64 / span).floor();
    (b as usize).min(TIME_DELTA_BUCKETS - 1)
}

/// Index into the positional table for query `i` and key `j`, clamped to
/// the table.
pub fn position_bucket(i: usize, j: usize, max_len: usize) -> usize {
    let off = i.saturating_sub(j).min(max_len - 1);
    off + max_len - 1
}

/// Positional plus temporal bias for one head over a single sequence,
/// row-major `len × len`. Entries above the diagonal use a clamped zero
/// offset.
pub fn relative_bias(timestamps: &[i64], rab_p: &[f64], rab_t: &[f64], max_len: usize) -> Vec<f64> {
    let n = timestamps.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let dt = (timestamps[i] - timestamps[j]).max(0);
            out[i * n + j] = rab_p[position_bucket(i, j, max_len)] + rab_t[time_delta_bucket(dt)];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HstuConfig {
    pub dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub max_len: usize,
    pub time_bias: bool,
}

impl HstuConfig {
    pub fn inner(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// Sequence layout shared by every layer of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayout {
    pub batch: usize,
    pub len: usize,
    pub valid: Vec<bool>,
    pub timestamps: Vec<i64>,
    /// Precomputed temporal bucket for every causal `(b, i, j)` pair,
    /// `b * len * len + i * len + j`.
    time_buckets: Vec<u8>,
}

impl AttentionLayout {
    pub fn new(batch: usize, len: usize, valid: Vec<bool>, timestamps: Vec<i64>) -> Self {
        let mut time_buckets = vec![0u8; batch * len * len];
        for b in 0..batch {
            for i in 0..len {
                for j in 0..=i {
                    let dt = timestamps[b * len + i] - timestamps[b * len + j];
                    time_buckets[(b * len + i) * len + j] = time_delta_bucket(dt) as u8;
                }
            }
        }
        Self {
            batch,
            len,
            valid,
            timestamps,
            time_buckets,
        }
    }

    /// Keys visible to query `i` of sequence `b`.
    fn keys(&self, b: usize, i: usize) -> impl Iterator<Item = usize> + '_ {
        let base = b * self.len;
        let open = self.valid[base + i];
        (0..=i).filter(move |&j| open && self.valid[base + j])
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Strided view `(offset, row stride, col stride)` into a row-major buffer.
type View = (usize, usize, usize);

/// `c = beta·c + a·b` for `a: m×k` and `b: k×n`, all given as strided views.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], va: View, b: &[f64], vb: View, c: &mut [f64], vc: View, beta: f64) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let last = |(o, rs, cs): View, r: usize, cc: usize| o + (r - 1) * rs + (cc - 1) * cs;
    assert!(last(va, m, k) < a.len() && last(vb, k, n) < b.len() && last(vc, m, n) < c.len());
    // SAFETY: the assert bounds the last element of every view, strides are
    // non-negative, and `c` is a distinct mutable buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(va.0),
            va.1 as isize,
            va.2 as isize,
            b.as_ptr().add(vb.0),
            vb.1 as isize,
            vb.2 as isize,
            beta,
            c.as_mut_ptr().add(vc.0),
            vc.1 as isize,
            vc.2 as isize,
        );
    }
}

#[derive(Debug)]
struct PointwiseAttention {
    layout: Rc<AttentionLayout>,
    heads: usize,
    head_dim: usize,
    max_len: usize,
    time_bias: bool,
}

impl PointwiseAttention {
    /// Raw scores `q·kᵀ + bias` of sequence `b`, head `h` into `s`, and the
    /// per-query normaliser `1 / visible keys` into `inv` (0 for closed rows).
    fn scores(&self, q: &Tensor, k: &Tensor, rp: &Tensor, rt: Option<&Tensor>, b: usize, h: usize, s: &mut [f64], inv: &mut [f64]) {
        let l = &self.layout;
        let (n, d, w) = (l.len, self.head_dim, self.heads * self.head_dim);
        let base = b * n * w + h * d;
        gemm(n, d, n, q.data(), (base, w, 1), k.data(), (base, 1, w), s, (0, n, 1), 0.0);
        let (rph, rth) = (rp.row(h), rt.map(|t| t.row(h)));
        for i in 0..n {
            let visible = l.keys(b, i).count();
            inv[i] = if visible == 0 { 0.0 } else { 1.0 / visible as f64 };
            for j in 0..=i {
                let mut bias = rph[position_bucket(i, j, self.max_len)];
                if let Some(rt) = rth {
                    bias += rt[l.time_buckets[(b * n + i) * n + j] as usize];
                }
                s[i * n + j] += bias;
            }
        }
    }

    fn open(&self, b: usize, i: usize, j: usize) -> bool {
        let base = b * self.layout.len;
        j <= i && self.layout.valid[base + i] && self.layout.valid[base + j]
    }

    fn forward(&self, q: &Tensor, k: &Tensor, v: &Tensor, rp: &Tensor, rt: Option<&Tensor>) -> Tensor {
        let l = &self.layout;
        let (n, d, w) = (l.len, self.head_dim, self.heads * self.head_dim);
        let mut out = vec![0.0; l.batch * n * w];
        let mut s = vec![0.0; n * n];
        let mut inv = vec![0.0; n];
        for b in 0..l.batch {
            for h in 0..self.heads {
                self.scores(q, k, rp, rt, b, h, &mut s, &mut inv);
                for i in 0..n {
                    for j in 0..n {
                        let x = s[i * n + j];
                        s[i * n + j] = if self.open(b, i, j) { x * sigmoid(x) * inv[i] } else { 0.0 };
                    }
                }
                let base = b * n * w + h * d;
                gemm(n, n, d, &s, (0, n, 1), v.data(), (base, w, 1), &mut out, (base, w, 1), 0.0);
            }
        }
        Tensor::new(vec![l.batch * n, w], out).expect("attention output shape")
    }
}

impl CustomOp for PointwiseAttention {
    fn name(&self) -> &'static str {
        "pointwise_attention"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (q, k, v, rp) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let rt = if self.time_bias { Some(inputs[4]) } else { None };
        let l = &self.layout;
        let (n, d, w) = (l.len, self.head_dim, self.heads * self.head_dim);
        let mut dq = vec![0.0; q.len()];
        let mut dk = vec![0.0; k.len()];
        let mut dv = vec![0.0; v.len()];
        let mut drp = vec![0.0; rp.len()];
        let mut drt = vec![0.0; rt.map_or(0, |t| t.len())];
        let (pw, tw) = (rp.cols(), rt.map_or(0, |t| t.cols()));
        let mut s = vec![0.0; n * n];
        let mut a = vec![0.0; n * n];
        let mut da = vec![0.0; n * n];
        let mut inv = vec![0.0; n];
        for b in 0..l.batch {
            for h in 0..self.heads {
                let base = b * n * w + h * d;
                self.scores(q, k, rp, rt, b, h, &mut s, &mut inv);
                gemm(n, d, n, grad.data(), (base, w, 1), v.data(), (base, 1, w), &mut da, (0, n, 1), 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let ix = i * n + j;
                        if !self.open(b, i, j) {
                            a[ix] = 0.0;
                            da[ix] = 0.0;
                            continue;
                        }
                        let x = s[ix];
                        let sg = sigmoid(x);
                        a[ix] = x * sg * inv[i];
                        let ds = da[ix] * inv[i] * (sg * (1.0 + x * (1.0 - sg)));
                        da[ix] = ds;
                        drp[h * pw + position_bucket(i, j, self.max_len)] += ds;
                        if rt.is_some() {
                            drt[h * tw + l.time_buckets[(b * n + i) * n + j] as usize] += ds;
                        }
                    }
                }
                // dV = Aᵀ·G, dQ = dS·K, dK = dSᵀ·Q
                gemm(n, n, d, &a, (0, 1, n), grad.data(), (base, w, 1), &mut dv, (base, w, 1), 0.0);
                gemm(n, n, d, &da, (0, n, 1), k.data(), (base, w, 1), &mut dq, (base, w, 1), 0.0);
                gemm(n, n, d, &da, (0, 1, n), q.data(), (base, w, 1), &mut dk, (base, w, 1), 0.0);
            }
        }
        let t = |shape: &[usize], data| Some(Tensor::new(shape.to_vec(), data).expect("gradient shape"));
        let mut out = vec![t(q.shape(), dq), t(k.shape(), dk), t(v.shape(), dv), t(rp.shape(), drp)];
        if let Some(rt) = rt {
            out.push(t(rt.shape(), drt));
        }
        out
    }
}

/// Pointwise attention over `[N, heads·head_dim]` projections; queries with
/// no visible key (padding) output zero.
pub fn pointwise_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    rab_p: Var,
    rab_t: Option<Var>,
    layout: Rc<AttentionLayout>,
    cfg: &HstuConfig,
) -> Result<Var> {
    let op = PointwiseAttention {
        layout,
        heads: cfg.heads,
        head_dim: cfg.head_dim,
        max_len: cfg.max_len,
        time_bias: rab_t.is_some(),
    };
    let out = op.forward(
        g.value(q),
        g.value(k),
        g.value(v),
        g.value(rab_p),
        rab_t.map(|t| g.value(t)),
    );
    let mut inputs = vec![q, k, v, rab_p];
    inputs.extend(rab_t);
    g.custom(&inputs, out, Box::new(op))
}

/// Parameter names and shapes of one layer under `prefix`.
pub fn hstu_param_shapes(prefix: &str, cfg: &HstuConfig) -> Vec<(String, Vec<usize>)> {
    let inner = cfg.inner();
    let mut v = vec![
        (format!("{prefix}.f1.w"), vec![cfg.dim, 4 * inner]),
        (format!("{prefix}.f1.b"), vec![1, 4 * inner]),
        (format!("{prefix}.f2.w"), vec![inner, cfg.dim]),
        (format!("{prefix}.f2.b"), vec![1, cfg.dim]),
        (format!("{prefix}.rab_p"), vec![cfg.heads, 2 * cfg.max_len - 1]),
    ];
    if cfg.time_bias {
        v.push((format!("{prefix}.rab_t"), vec![cfg.heads, TIME_DELTA_BUCKETS]));
    }
    v
}

/// `f₂(LayerNorm(attention) ⊙ U)` for rows `x: [N, C]`. The residual is the
/// caller's responsibility.
pub fn hstu_layer_forward(
    g: &mut Graph,
    p: &mut ParamBinder<'_>,
    prefix: &str,
    x: Var,
    layout: &Rc<AttentionLayout>,
    cfg: &HstuConfig,
) -> Result<Var> {
    let inner = cfg.inner();
    let f1w = p.param(g, &format!("{prefix}.f1.w"))?;
    let f1b = p.param(g, &format!("{prefix}.f1.b"))?;
    let h = g.matmul(x, f1w)?;
    let h = g.add(h, f1b)?;
    let h = g.silu(h)?;
    let part = |g: &mut Graph, i: usize| g.select_cols(h, &(i * inner..(i + 1) * inner).collect::<Vec<_>>());
    let u = part(g, 0)?;
    let v = part(g, 1)?;
    let q = part(g, 2)?;
    let k = part(g, 3)?;
    let rab_p = p.param(g, &format!("{prefix}.rab_p"))?;
    let rab_t = if cfg.time_bias {
        Some(p.param(g, &format!("{prefix}.rab_t"))?)
    } else {
        None
    };
    let a = pointwise_attention(g, q, k, v, rab_p, rab_t, layout.clone(), cfg)?;
    let a = g.layer_norm(a, NORM_EPS)?;
    let a = g.mul(a, u)?;
    let f2w = p.param(g, &format!("{prefix}.f2.w"))?;
    let f2b = p.param(g, &format!("{prefix}.f2.b"))?;
    let y = g.matmul(a, f2w)?;
    g.add(y, f2b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucket_edges() {
        assert_eq!(time_delta_bucket(0), 0);
        assert_eq!(time_delta_bucket(-5), 0);
        assert_eq!(time_delta_bucket(1), 1);
        assert_eq!(time_delta_bucket(MAX_TIME_DELTA_MS as i64), 31);
        assert_eq!(time_delta_bucket(i64::MAX), 31);
        let (sec, day) = (time_delta_bucket(1000), time_delta_bucket(86_400_000));
        assert!(sec < day, "{sec} {day}");
    }

    #[test]
    fn zero_offset_buckets() {
        assert_eq!(position_bucket(3, 3, 10), 9);
        assert_eq!(position_bucket(9, 0, 10), 18);
        assert_eq!(position_bucket(50, 0, 10), 18);
        let bias = relative_bias(&[0, 5, 5], &vec![0.0; 19], &[0.0; 32], 10);
        assert!(bias.iter().all(|&b| b == 0.0));
    }
}
