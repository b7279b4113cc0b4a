//! Task-gated hyper connections: an `n`-stream residual state per token,
//! mixed by static plus input-dependent pre/post/res matrices whose pre and
//! res parts are gated per task.

use std::rc::Rc;

use inttravel_tensor::{Graph, ParamBinder, Result, Var};

use super::hstu::{hstu_layer_forward, AttentionLayout, HstuConfig, NORM_EPS};

/// Which task gates apply; `false` substitutes the ungated matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateFlags {
    pub pre: bool,
    pub res: bool,
}

/// Per-token hyper-connection matrices, flattened row-major:
/// `pre`/`post` are `[N, n]`, `res` is `[N, n·n]`.
#[derive(Debug, Clone, Copy)]
pub struct HcMatrices {
    pub pre: Var,
    pub post: Var,
    pub res: Var,
}

pub fn hc_param_shapes(prefix: &str, n: usize, dim: usize, tasks: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{prefix}.b_pre"), vec![1, n]),
        (format!("{prefix}.b_post"), vec![1, n]),
        (format!("{prefix}.b_res"), vec![1, n * n]),
        (format!("{prefix}.theta_pre"), vec![1, dim]),
        (format!("{prefix}.theta_post"), vec![1, dim]),
        (format!("{prefix}.theta_res"), vec![n, dim]),
        (format!("{prefix}.alpha_pre"), vec![1, 1]),
        (format!("{prefix}.alpha_post"), vec![1, 1]),
        (format!("{prefix}.alpha_res"), vec![1, 1]),
        (format!("{prefix}.gamma"), vec![tasks, n]),
    ]
}

/// Replicates each embedding row `n` times: `[N, C]` to `[N, n·C]`.
pub fn init_streams(g: &mut Graph, x: Var, n: usize) -> Result<Var> {
    if n == 1 {
        return Ok(x);
    }
    let c = g.value(x).cols();
    let cols: Vec<usize> = (0..n).flat_map(|_| 0..c).collect();
    g.select_cols(x, &cols)
}

/// Static plus dynamic matrices from the stream state `x: [N, n·C]`.
pub fn compute_hc_matrices(g: &mut Graph, p: &mut ParamBinder<'_>, prefix: &str, x: Var, n: usize) -> Result<HcMatrices> {
    let rows = g.value(x).rows();
    let c = g.value(x).cols() / n;
    let flat = g.reshape(x, &[rows * n, c])?;
    let xt = g.rms_norm(flat, NORM_EPS)?;

    let dynamic = |g: &mut Graph, p: &mut ParamBinder<'_>, which: &str, width: usize| -> Result<Var> {
        let theta = p.param(g, &format!("{prefix}.theta_{which}"))?;
        let alpha = p.param(g, &format!("{prefix}.alpha_{which}"))?;
        let bias = p.param(g, &format!("{prefix}.b_{which}"))?;
        let d = g.matmul_nt(xt, theta)?;
        let d = g.reshape(d, &[rows, width])?;
        let d = if which == "res" {
            // Stream s of the product holds θᵢ·x̃ₛ in column i; H_res[i][s]
            // wants it transposed.
            let perm: Vec<usize> = (0..n * n).map(|idx| (idx % n) * n + idx / n).collect();
            g.select_cols(d, &perm)?
        } else {
            d
        };
        let d = g.tanh(d)?;
        let d = g.mul(d, alpha)?;
        g.add(d, bias)
    };
    let pre = dynamic(g, p, "pre", n)?;
    let post = dynamic(g, p, "post", n)?;
    let res = dynamic(g, p, "res", n * n)?;
    Ok(HcMatrices { pre, post, res })
}

/// `J_pre = H_pre ⊙ γ` and `J_res[i][j] = H_res[i][j]·γ[j]` for a gate row
/// `gamma: [1, n]`.
pub fn apply_task_gates(g: &mut Graph, h: &HcMatrices, gamma: Var, n: usize, flags: GateFlags) -> Result<(Var, Var)> {
    let j_pre = if flags.pre { g.mul(h.pre, gamma)? } else { h.pre };
    let j_res = if flags.res {
        let tiled: Vec<usize> = (0..n * n).map(|idx| idx % n).collect();
        let gt = g.select_cols(gamma, &tiled)?;
        g.mul(h.res, gt)?
    } else {
        h.res
    };
    Ok((j_pre, j_res))
}

/// One multi-task hyper-connection layer around an HSTU block.
#[allow(clippy::too_many_arguments)]
pub fn tip_layer_forward(
    g: &mut Graph,
    p: &mut ParamBinder<'_>,
    prefix: &str,
    x: Var,
    tasks: &[usize],
    n: usize,
    flags: GateFlags,
    layout: &Rc<AttentionLayout>,
    hstu: &HstuConfig,
) -> Result<Var> {
    let c = hstu.dim;
    let h = compute_hc_matrices(g, p, &format!("{prefix}.hc"), x, n)?;
    let gamma_table = p.param(g, &format!("{prefix}.hc.gamma"))?;
    let mut pre_terms = Vec::with_capacity(tasks.len());
    let mut res_terms = Vec::with_capacity(tasks.len());
    for &k in tasks {
        let gamma = g.gather_rows(gamma_table, &[Some(k)])?;
        let (j_pre, j_res) = apply_task_gates(g, &h, gamma, n, flags)?;
        pre_terms.push(g.batched_matmul(j_pre, x, 1, n, c)?);
        res_terms.push(g.batched_matmul(j_res, x, n, n, c)?);
    }
    let input = g.mean_of(&pre_terms)?;
    let mixed = g.mean_of(&res_terms)?;
    let out = hstu_layer_forward(g, p, &format!("{prefix}.hstu"), input, layout, hstu)?;
    let post = g.batched_matmul(h.post, out, n, 1, c)?;
    g.add(mixed, post)
}

/// Plain residual block `x + HSTU(x)`.
pub fn residual_layer_forward(
    g: &mut Graph,
    p: &mut ParamBinder<'_>,
    prefix: &str,
    x: Var,
    layout: &Rc<AttentionLayout>,
    hstu: &HstuConfig,
) -> Result<Var> {
    let out = hstu_layer_forward(g, p, &format!("{prefix}.hstu"), x, layout, hstu)?;
    g.add(x, out)
}
