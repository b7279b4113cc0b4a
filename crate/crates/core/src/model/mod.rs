//! The decoder stack and task heads: token embedding, HSTU layers inside
//! task-gated hyper connections, layer gating per task and expert-composed
//! output projections.

pub mod hstu;
pub mod tip;
pub mod tsf;
pub mod tsg;
mod variant;

use std::rc::Rc;

use inttravel_tensor::{Graph, ParamBinder, ParameterStore, Result, Tensor, TensorError, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::objective::task_infonce;
use crate::seqbuild::{Batch, TokenKind, VocabSizes};
use crate::Task;
use hstu::{AttentionLayout, HstuConfig};
use tip::GateFlags;
use tsf::ExpertLayout;

pub use variant::{Ablation, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub depth: usize,
    pub streams: usize,
    pub max_len: usize,
    pub shared_experts: usize,
    pub private_experts: usize,
    pub profile_dim: usize,
    /// Standard deviation of embedding-table initialization.
    pub embed_std: f64,
    pub vocab: VocabSizes,
    pub variant: Variant,
    /// Tasks modeled; the variant may remove one more.
    pub tasks: Vec<Task>,
}

impl ModelConfig {
    pub fn new(vocab: VocabSizes) -> Self {
        Self {
            dim: 96,
            heads: 1,
            depth: 3,
            streams: 2,
            max_len: 120,
            shared_experts: 2,
            private_experts: 1,
            profile_dim: 48,
            embed_std: 0.1,
            vocab,
            variant: Variant::Full,
            tasks: Task::ALL.to_vec(),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let positive = [
            ("dim", self.dim),
            ("heads", self.heads),
            ("depth", self.depth),
            ("streams", self.streams),
            ("private_experts", self.private_experts),
            ("profile_dim", self.profile_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be positive"));
        }
        if self.dim % self.heads != 0 {
            return Err(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if self.tasks.is_empty() || self.tasks.iter().all(|t| Some(*t) == self.variant.ablation().dropped_task) {
            return Err("no active task".into());
        }
        if self.max_len < 3 {
            return Err("max_len must be at least 3".into());
        }
        if !(self.embed_std > 0.0 && self.embed_std.is_finite()) {
            return Err("embed_std must be positive".into());
        }
        Ok(())
    }

    pub fn hstu(&self) -> HstuConfig {
        HstuConfig {
            dim: self.dim,
            heads: self.heads,
            head_dim: self.dim / self.heads,
            max_len: self.max_len,
            time_bias: true,
        }
    }

    pub fn experts(&self) -> ExpertLayout {
        ExpertLayout {
            shared: self.shared_experts,
            private_per_task: self.private_experts,
            tasks: Task::ALL.len(),
        }
    }
}

/// Dense table holding candidate embeddings of `task`.
pub fn candidate_table(task: Task) -> &'static str {
    match task {
        Task::When => "emb.time",
        Task::How => "emb.mode",
        Task::Where | Task::Via => "emb.poi",
    }
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a keeps each parameter's draw independent of which others exist.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Per-layer decoder outputs `z_l` (stream means), each `[N, C]`.
#[derive(Debug, Clone)]
pub struct Hidden {
    pub layers: Vec<Var>,
}

/// Loss graph of one batch.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub total: Var,
    pub per_task: [Option<Var>; 4],
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> std::result::Result<Self, String> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn ablation(&self) -> Ablation {
        self.cfg.variant.ablation()
    }

    pub fn active_tasks(&self) -> Vec<Task> {
        let dropped = self.ablation().dropped_task;
        self.cfg.tasks.iter().copied().filter(|t| Some(*t) != dropped).collect()
    }

    /// Every parameter of this variant with its shape.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = &self.cfg;
        let a = self.ablation();
        let v = &c.vocab;
        let mut out: Vec<(String, Vec<usize>)> = vec![
            ("emb.poi".into(), vec![v.poi, c.dim]),
            ("emb.gid".into(), vec![v.gid, c.dim]),
            ("emb.arid".into(), vec![v.arid, c.dim]),
            ("emb.weather".into(), vec![v.weather, c.dim]),
            ("emb.time".into(), vec![v.time, c.dim]),
            ("emb.action".into(), vec![v.action, c.dim]),
            ("emb.mode".into(), vec![v.mode, c.dim]),
            ("emb.kind".into(), vec![3, c.dim]),
            ("task.emb".into(), vec![Task::ALL.len(), c.dim]),
        ];
        let hstu = c.hstu();
        for l in 0..c.depth {
            out.extend(hstu::hstu_param_shapes(&format!("layer{l}.hstu"), &hstu));
            if a.tip {
                out.extend(tip::hc_param_shapes(&format!("layer{l}.hc"), c.streams, c.dim, Task::ALL.len()));
            }
        }
        if a.task_gating {
            out.extend(tsg::tsg_param_shapes(c.dim, c.depth));
        }
        if a.tsf {
            for (k, &size) in v.profile.iter().enumerate() {
                out.push((format!("emb.profile{k}"), vec![size, c.profile_dim]));
            }
            out.extend(tsf::tsf_param_shapes(c.dim, c.profile_dim, &c.experts()));
        } else {
            out.extend(tsf::head_param_shapes(c.dim));
        }
        out
    }

    fn init_tensor(&self, name: &str, shape: &[usize], seed: u64) -> Tensor {
        let c = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
        let mut normal = |std: f64| {
            let d = Normal::new(0.0, std).expect("finite std");
            Tensor::from_fn(shape, |_| d.sample(&mut rng))
        };
        let leaf = name.rsplit('.').next().unwrap_or(name);
        let n = c.streams;
        match leaf {
            "b_pre" | "b_post" => Tensor::from_fn(shape, |i| if i == 0 { 1.0 } else { 0.0 }),
            "b_res" => Tensor::from_fn(shape, |i| if i / n == i % n { 1.0 } else { 0.0 }),
            "gamma" => Tensor::full(shape, 1.0),
            l if l.starts_with("alpha") => Tensor::zeros(shape),
            l if l.starts_with("theta") => normal(0.02),
            "rab_p" | "rab_t" => Tensor::zeros(shape),
            _ if name == "tsg.w2" || name == "tsf.beta.w2" => Tensor::zeros(shape),
            _ if name == "tsg.b2" => Tensor::full(shape, 1.0),
            _ if name == "task.emb" => normal(1.0),
            _ if name.starts_with("emb.") => normal(c.embed_std),
            _ if name.starts_with("tsf.expert") && leaf == "w" => {
                let k = (c.shared_experts + c.private_experts) as f64;
                normal(1.0 / (c.dim as f64 * k).sqrt())
            }
            l if l.starts_with('w') => normal(1.0 / (shape[0] as f64).sqrt()),
            _ => Tensor::zeros(shape),
        }
    }

    /// Fresh parameters; each tensor's draw depends only on its name and
    /// `seed`, so variants share every common parameter.
    pub fn init_params(&self, seed: u64) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        for (name, shape) in self.param_shapes() {
            let t = self.init_tensor(&name, &shape, seed);
            store.insert(name, t)?;
        }
        Ok(store)
    }

    /// Summed feature embeddings per token, `[N, C]`; padding rows are zero.
    pub fn embed(&self, g: &mut Graph, p: &mut ParamBinder<'_>, batch: &Batch) -> Result<Var> {
        let a = self.ablation();
        let mut kind: Vec<Option<usize>> = batch.kind.iter().map(|k| k.map(TokenKind::index)).collect();
        if a.drop_item_tokens {
            for k in kind.iter_mut() {
                if *k == Some(TokenKind::Item.index()) {
                    *k = None;
                }
            }
        }
        let mut fields: Vec<(&str, &[Option<usize>])> = vec![
            ("emb.kind", &kind),
            ("emb.gid", &batch.gid),
            ("emb.arid", &batch.arid),
            ("emb.weather", &batch.weather),
            ("emb.action", &batch.action),
        ];
        if !a.drop_item_tokens {
            fields.push(("emb.poi", &batch.poi));
        }
        if !a.drop_time_feature {
            fields.push(("emb.time", &batch.time));
        }
        if !a.drop_mode_feature {
            fields.push(("emb.mode", &batch.mode));
        }
        let parts = fields
            .into_iter()
            .map(|(name, idx)| {
                let t = p.param(g, name)?;
                g.gather_rows(t, idx)
            })
            .collect::<Result<Vec<_>>>()?;
        g.sum_of(&parts)
    }

    pub fn layout(&self, batch: &Batch) -> Rc<AttentionLayout> {
        Rc::new(AttentionLayout::new(
            batch.size,
            batch.len,
            batch.valid.clone(),
            batch.timestamps.clone(),
        ))
    }

    /// Runs the decoder and returns every layer's aggregated output.
    pub fn hidden(&self, g: &mut Graph, p: &mut ParamBinder<'_>, batch: &Batch) -> Result<Hidden> {
        if batch.rows() == 0 {
            return Err(TensorError::InvalidShape {
                op: "model",
                detail: "empty batch".into(),
            });
        }
        let c = &self.cfg;
        let a = self.ablation();
        let layout = self.layout(batch);
        let hstu = c.hstu();
        let x0 = self.embed(g, p, batch)?;
        let mut layers = Vec::with_capacity(c.depth);
        if a.tip {
            let tasks: Vec<usize> = self.active_tasks().iter().map(|t| t.index()).collect();
            let flags = GateFlags {
                pre: a.gate_pre,
                res: a.gate_res,
            };
            let mut x = tip::init_streams(g, x0, c.streams)?;
            for l in 0..c.depth {
                x = tip::tip_layer_forward(g, p, &format!("layer{l}"), x, &tasks, c.streams, flags, &layout, &hstu)?;
                layers.push(tsg::aggregate_streams(g, x, c.streams)?);
            }
        } else {
            let mut x = x0;
            for l in 0..c.depth {
                x = tip::residual_layer_forward(g, p, &format!("layer{l}"), x, &layout, &hstu)?;
                layers.push(x);
            }
        }
        Ok(Hidden { layers })
    }

    /// Task query vectors `ŷ_k` at flat positions `rows`, `[rows, C]`.
    pub fn task_queries(
        &self,
        g: &mut Graph,
        p: &mut ParamBinder<'_>,
        batch: &Batch,
        hidden: &Hidden,
        task: Task,
        rows: &[usize],
    ) -> Result<Var> {
        let c = &self.cfg;
        let a = self.ablation();
        let k = task.index();
        let idx: Vec<Option<usize>> = rows.iter().map(|&r| Some(r)).collect();
        let (zs, layer_ids): (Vec<Var>, Vec<usize>) = if a.hidden_states {
            let zs = hidden
                .layers
                .iter()
                .map(|&z| g.gather_rows(z, &idx))
                .collect::<Result<Vec<_>>>()?;
            (zs, (0..c.depth).collect())
        } else {
            let last = *hidden.layers.last().expect("depth >= 1");
            (vec![g.gather_rows(last, &idx)?], vec![c.depth - 1])
        };
        let task_table = p.param(g, "task.emb")?;
        let gates = if a.task_gating {
            let e = g.gather_rows(task_table, &[Some(k)])?;
            Some(tsg::compute_layer_gates(g, p, e)?)
        } else {
            None
        };
        let z = tsg::gate_and_pool(g, &zs, gates, &layer_ids)?;
        if a.tsf {
            let profile = tsf::profile_embedding(g, p, &batch.profile)?;
            let ctx = tsf::context_vector(g, task_table, k, profile)?;
            let seqs: Vec<usize> = rows.iter().map(|r| r / batch.len).collect();
            tsf::tsf_forward(g, p, z, ctx, &seqs, k, &c.experts())
        } else {
            tsf::mlp_head(g, p, z)
        }
    }

    /// Summed per-task InfoNCE over the batch's labeled rows. Tasks without
    /// labeled rows, or removed by the variant, contribute nothing.
    pub fn loss(&self, g: &mut Graph, p: &mut ParamBinder<'_>, batch: &Batch, weights: &[f64; 4]) -> Result<LossOutput> {
        let hidden = self.hidden(g, p, batch)?;
        let mut per_task: [Option<Var>; 4] = [None; 4];
        let mut terms = Vec::new();
        for task in self.active_tasks() {
            let labels = batch.task(task);
            if labels.is_empty() {
                continue;
            }
            let q = self.task_queries(g, p, batch, &hidden, task, &labels.rows)?;
            let table = p.param(g, candidate_table(task))?;
            let l = task_infonce(g, q, table, &labels.candidates, &labels.positive)?;
            per_task[task.index()] = Some(l);
            let w = weights[task.index()];
            terms.push(if w == 1.0 { l } else { g.scale(l, w)? });
        }
        let total = if terms.is_empty() {
            g.scalar(0.0)?
        } else {
            g.sum_of(&terms)?
        };
        Ok(LossOutput { total, per_task })
    }
}
