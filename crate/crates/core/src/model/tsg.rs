//! Task-specific selective gating over decoder depth.

use inttravel_tensor::{Graph, ParamBinder, Result, Var};

pub fn tsg_param_shapes(dim: usize, depth: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        ("tsg.w1".into(), vec![dim, dim]),
        ("tsg.b1".into(), vec![1, dim]),
        ("tsg.w2".into(), vec![dim, depth]),
        ("tsg.b2".into(), vec![1, depth]),
    ]
}

/// Mean over the `n` streams: `[N, n·C]` to `[N, C]`.
pub fn aggregate_streams(g: &mut Graph, x: Var, n: usize) -> Result<Var> {
    if n == 1 {
        return Ok(x);
    }
    let c = g.value(x).cols() / n;
    let w = g.constant(inttravel_tensor::Tensor::full(&[1, n], 1.0 / n as f64))?;
    g.batched_matmul(w, x, 1, n, c)
}

/// Raw per-layer gates `[1, L]` from a task embedding row `[1, C]`.
pub fn compute_layer_gates(g: &mut Graph, p: &mut ParamBinder<'_>, task_emb: Var) -> Result<Var> {
    let w1 = p.param(g, "tsg.w1")?;
    let b1 = p.param(g, "tsg.b1")?;
    let w2 = p.param(g, "tsg.w2")?;
    let b2 = p.param(g, "tsg.b2")?;
    let h = g.matmul(task_emb, w1)?;
    let h = g.add(h, b1)?;
    let h = g.silu(h)?;
    let s = g.matmul(h, w2)?;
    g.add(s, b2)
}

/// `mean_l s_l · z_l`. Without gates this is the plain mean of the layer
/// outputs; `layers` selects which gate column pairs with each output.
pub fn gate_and_pool(g: &mut Graph, zs: &[Var], gates: Option<Var>, layers: &[usize]) -> Result<Var> {
    let terms = match gates {
        None => zs.to_vec(),
        Some(s) => zs
            .iter()
            .zip(layers)
            .map(|(&z, &l)| {
                let sl = g.select_cols(s, &[l])?;
                g.mul(z, sl)
            })
            .collect::<Result<Vec<_>>>()?,
    };
    g.mean_of(&terms)
}
