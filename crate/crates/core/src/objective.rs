//! Candidate scoring and sampled-softmax (InfoNCE) losses.

use inttravel_tensor::{log_sum_exp, CustomOp, Graph, Result, Tensor, TensorError, Var};

/// `logit_i = ⟨query, emb_i⟩` over one candidate list.
pub fn score_candidates(query: &[f64], embeddings: &[&[f64]]) -> Vec<f64> {
    embeddings.iter().map(|e| e.iter().zip(query).map(|(a, b)| a * b).sum()).collect()
}

/// `−log softmax(logits)[positive]`, via log-sum-exp.
pub fn infonce(logits: &[f64], positive: usize) -> f64 {
    log_sum_exp(logits) - logits[positive]
}

fn offsets(lists: &[Vec<usize>]) -> Vec<usize> {
    let mut o = Vec::with_capacity(lists.len() + 1);
    o.push(0);
    for l in lists {
        o.push(o.last().unwrap() + l.len());
    }
    o
}

#[derive(Debug)]
struct CandidateDot {
    candidates: Vec<Vec<usize>>,
}

impl CustomOp for CandidateDot {
    fn name(&self) -> &'static str {
        "candidate_dot"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (q, table) = (inputs[0], inputs[1]);
        let c = q.cols();
        let mut dq = vec![0.0; q.len()];
        let mut dt = vec![0.0; table.len()];
        let mut k = 0;
        for (r, list) in self.candidates.iter().enumerate() {
            let qr = q.row(r);
            for &id in list {
                let gk = grad.data()[k];
                k += 1;
                if gk == 0.0 {
                    continue;
                }
                let e = table.row(id);
                for i in 0..c {
                    dq[r * c + i] += gk * e[i];
                    dt[id * c + i] += gk * qr[i];
                }
            }
        }
        vec![
            Some(Tensor::new(q.shape().to_vec(), dq).expect("query grad")),
            Some(Tensor::new(table.shape().to_vec(), dt).expect("table grad")),
        ]
    }
}

/// Logits of every candidate of every row, flattened to `[Σ|list|, 1]`.
pub fn candidate_logits(g: &mut Graph, query: Var, table: Var, candidates: &[Vec<usize>]) -> Result<Var> {
    let (q, t) = (g.value(query), g.value(table));
    if q.cols() != t.cols() || q.rows() != candidates.len() {
        return Err(TensorError::ShapeMismatch {
            op: "candidate_dot",
            left: q.shape().to_vec(),
            right: t.shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(candidates.iter().map(Vec::len).sum());
    for (r, list) in candidates.iter().enumerate() {
        for &id in list {
            if id >= t.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: "candidate_dot",
                    index: id,
                    extent: t.rows(),
                });
            }
            let embs = [t.row(id)];
            out.extend(score_candidates(q.row(r), &embs));
        }
    }
    let n = out.len();
    let op = CandidateDot {
        candidates: candidates.to_vec(),
    };
    g.custom(&[query, table], Tensor::new(vec![n, 1], out)?, Box::new(op))
}

#[derive(Debug)]
struct GroupedNll {
    offsets: Vec<usize>,
    positive: Vec<usize>,
}

impl CustomOp for GroupedNll {
    fn name(&self) -> &'static str {
        "grouped_nll"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0].data();
        let mut dx = vec![0.0; x.len()];
        for (r, w) in self.offsets.windows(2).enumerate() {
            let gr = grad.data()[r];
            let group = &x[w[0]..w[1]];
            let lse = log_sum_exp(group);
            for (i, &v) in group.iter().enumerate() {
                dx[w[0] + i] = gr * (v - lse).exp();
            }
            dx[w[0] + self.positive[r]] -= gr;
        }
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), dx).expect("nll grad"))]
    }
}

/// Per-row InfoNCE over flattened logits: `[rows, 1]`.
pub fn grouped_infonce(g: &mut Graph, logits: Var, candidates: &[Vec<usize>], positive: &[usize]) -> Result<Var> {
    let offsets = offsets(candidates);
    let x = g.value(logits).data();
    if offsets.last() != Some(&x.len()) || positive.len() != candidates.len() {
        return Err(TensorError::InvalidShape {
            op: "grouped_nll",
            detail: format!("{} logits for {} candidates", x.len(), offsets.last().unwrap_or(&0)),
        });
    }
    if let Some(r) = (0..positive.len()).find(|&r| positive[r] >= candidates[r].len()) {
        return Err(TensorError::IndexOutOfRange {
            op: "grouped_nll",
            index: positive[r],
            extent: candidates[r].len(),
        });
    }
    let out: Vec<f64> = offsets
        .windows(2)
        .zip(positive)
        .map(|(w, &p)| infonce(&x[w[0]..w[1]], p))
        .collect();
    let n = out.len();
    let op = GroupedNll {
        offsets,
        positive: positive.to_vec(),
    };
    g.custom(&[logits], Tensor::new(vec![n, 1], out)?, Box::new(op))
}

/// Mean InfoNCE of one task over its labeled rows.
pub fn task_infonce(g: &mut Graph, query: Var, table: Var, candidates: &[Vec<usize>], positive: &[usize]) -> Result<Var> {
    let logits = candidate_logits(g, query, table, candidates)?;
    let per_row = grouped_infonce(g, logits, candidates, positive)?;
    g.mean_all(per_row)
}
