//! Task-aware scenario factorization: a per-(task, profile) output layer
//! composed from shared and private expert banks, applied to filtered task
//! features.

use inttravel_tensor::{Graph, ParamBinder, Result, Var};

use crate::datastore::PROFILE_FEATURES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpertLayout {
    pub shared: usize,
    pub private_per_task: usize,
    pub tasks: usize,
}

impl ExpertLayout {
    pub fn total(&self) -> usize {
        self.shared + self.private_per_task * self.tasks
    }

    /// Global expert indices consumed by `task`: shared first, then its own.
    pub fn experts_for(&self, task: usize) -> Vec<usize> {
        let own = self.shared + task * self.private_per_task;
        (0..self.shared).chain(own..own + self.private_per_task).collect()
    }

    pub fn owner(&self, expert: usize) -> Option<usize> {
        expert.checked_sub(self.shared).map(|e| e / self.private_per_task)
    }
}

pub fn expert_name(e: usize) -> String {
    format!("tsf.expert{e}")
}

pub fn tsf_param_shapes(dim: usize, profile_dim: usize, experts: &ExpertLayout) -> Vec<(String, Vec<usize>)> {
    let ctx = dim + profile_dim;
    let mut v = vec![
        ("tsf.beta.w1".to_string(), vec![ctx, dim]),
        ("tsf.beta.b1".to_string(), vec![1, dim]),
        ("tsf.beta.w2".to_string(), vec![dim, experts.total()]),
        ("tsf.beta.b2".to_string(), vec![1, experts.total()]),
        ("tsf.filter.w1".to_string(), vec![dim + ctx, dim]),
        ("tsf.filter.b1".to_string(), vec![1, dim]),
        ("tsf.filter.w2".to_string(), vec![dim, dim]),
        ("tsf.filter.b2".to_string(), vec![1, dim]),
    ];
    for e in 0..experts.total() {
        v.push((format!("{}.w", expert_name(e)), vec![1, dim * dim]));
        v.push((format!("{}.b", expert_name(e)), vec![1, dim]));
    }
    v
}

fn mlp2(g: &mut Graph, p: &mut ParamBinder<'_>, prefix: &str, x: Var) -> Result<Var> {
    let w1 = p.param(g, &format!("{prefix}.w1"))?;
    let b1 = p.param(g, &format!("{prefix}.b1"))?;
    let w2 = p.param(g, &format!("{prefix}.w2"))?;
    let b2 = p.param(g, &format!("{prefix}.b2"))?;
    let h = g.matmul(x, w1)?;
    let h = g.add(h, b1)?;
    let h = g.silu(h)?;
    let y = g.matmul(h, w2)?;
    g.add(y, b2)
}

/// Summed profile embedding `[B, C_p]` from dense feature indices.
pub fn profile_embedding(g: &mut Graph, p: &mut ParamBinder<'_>, profile: &[[usize; PROFILE_FEATURES]]) -> Result<Var> {
    let parts = (0..PROFILE_FEATURES)
        .map(|k| {
            let table = p.param(g, &format!("emb.profile{k}"))?;
            let idx: Vec<Option<usize>> = profile.iter().map(|f| Some(f[k])).collect();
            g.gather_rows(table, &idx)
        })
        .collect::<Result<Vec<_>>>()?;
    g.sum_of(&parts)
}

/// `R_k = [e_k, p]` per sequence: `[B, C + C_p]`.
pub fn context_vector(g: &mut Graph, task_table: Var, task: usize, profile: Var) -> Result<Var> {
    let b = g.value(profile).rows();
    let e = g.gather_rows(task_table, &vec![Some(task); b])?;
    g.concat_cols(&[e, profile])
}

/// `β = 2σ(MLP(R))` restricted to the experts of `task`: `[B, |E_k|]`.
pub fn expert_weights(g: &mut Graph, p: &mut ParamBinder<'_>, ctx: Var, task: usize, experts: &ExpertLayout) -> Result<Var> {
    let logits = mlp2(g, p, "tsf.beta", ctx)?;
    let own = g.select_cols(logits, &experts.experts_for(task))?;
    let s = g.sigmoid(own)?;
    g.scale(s, 2.0)
}

/// `W_k = Σ β_e W̃_e` as `[B, C·C]` and `b_k = Σ β_e b̃_e` as `[B, C]`.
pub fn compose_parameters(
    g: &mut Graph,
    p: &mut ParamBinder<'_>,
    beta: Var,
    task: usize,
    experts: &ExpertLayout,
) -> Result<(Var, Var)> {
    let mut ws = Vec::new();
    let mut bs = Vec::new();
    for (i, e) in experts.experts_for(task).into_iter().enumerate() {
        let be = g.select_cols(beta, &[i])?;
        let we = p.param(g, &format!("{}.w", expert_name(e)))?;
        let bb = p.param(g, &format!("{}.b", expert_name(e)))?;
        ws.push(g.mul(be, we)?);
        bs.push(g.mul(be, bb)?);
    }
    Ok((g.sum_of(&ws)?, g.sum_of(&bs)?))
}

/// `z ⊙ σ(MLP([z, R]))` for rows `z: [P, C]` and matching contexts `[P, ·]`.
pub fn filter_features(g: &mut Graph, p: &mut ParamBinder<'_>, z: Var, ctx_rows: Var) -> Result<Var> {
    let input = g.concat_cols(&[z, ctx_rows])?;
    let gate = mlp2(g, p, "tsf.filter", input)?;
    let gate = g.sigmoid(gate)?;
    g.mul(z, gate)
}

/// Task query `ŷ_k = W_k z̃ + b_k` for rows `z: [P, C]`; `row_seq[r]` is the
/// sequence of row `r`.
pub fn tsf_forward(
    g: &mut Graph,
    p: &mut ParamBinder<'_>,
    z: Var,
    ctx: Var,
    row_seq: &[usize],
    task: usize,
    experts: &ExpertLayout,
) -> Result<Var> {
    let beta = expert_weights(g, p, ctx, task, experts)?;
    let (w, b) = compose_parameters(g, p, beta, task, experts)?;
    let idx: Vec<Option<usize>> = row_seq.iter().map(|&s| Some(s)).collect();
    let ctx_rows = g.gather_rows(ctx, &idx)?;
    let zf = filter_features(g, p, z, ctx_rows)?;
    let y = g.grouped_matvec(zf, w, row_seq)?;
    let bias = g.gather_rows(b, &idx)?;
    g.add(y, bias)
}

pub fn head_param_shapes(dim: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        ("head.w1".into(), vec![dim, dim]),
        ("head.b1".into(), vec![1, dim]),
        ("head.w2".into(), vec![dim, dim]),
        ("head.b2".into(), vec![1, dim]),
    ]
}

/// Shared two-layer head used when the factorized output is ablated.
pub fn mlp_head(g: &mut Graph, p: &mut ParamBinder<'_>, z: Var) -> Result<Var> {
    mlp2(g, p, "head", z)
}
