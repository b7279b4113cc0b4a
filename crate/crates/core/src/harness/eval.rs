//! Candidate ranking and metric computation over evaluation batches.

use std::collections::HashMap;

use inttravel_tensor::{Graph, ParamBinder, ParameterStore};

use super::data::Prepared;
use super::HarnessError;
use crate::metrics::{
    classification_metrics, retrieval_metrics, HowReport, MaeMode, MetricsReport, RetrievalReport, TaskEntry,
    TaskReport, WhenReport,
};
use crate::model::{candidate_table, Model};
use crate::objective::candidate_logits;
use crate::seqbuild::{when_bucket, Batch, Vocabularies};
use crate::Task;

/// Anything that scores the candidate lists of a batch.
pub trait Predictor {
    /// For each task in `tasks`, one score vector per labeled row, aligned
    /// with that row's candidate list.
    fn scores(&mut self, batch: &Batch, tasks: &[Task]) -> Result<Vec<Vec<Vec<f64>>>, HarnessError>;
}

/// Scores candidates by their inner product with the model's task query.
pub struct ModelPredictor<'a> {
    pub model: &'a Model,
    pub store: &'a ParameterStore,
}

impl Predictor for ModelPredictor<'_> {
    fn scores(&mut self, batch: &Batch, tasks: &[Task]) -> Result<Vec<Vec<Vec<f64>>>, HarnessError> {
        let mut g = Graph::new();
        let mut p = ParamBinder::new(self.store);
        let hidden = self.model.hidden(&mut g, &mut p, batch)?;
        let mut out = Vec::with_capacity(tasks.len());
        for &task in tasks {
            let labels = batch.task(task);
            if labels.is_empty() {
                out.push(Vec::new());
                continue;
            }
            let q = self.model.task_queries(&mut g, &mut p, batch, &hidden, task, &labels.rows)?;
            let table = p.param(&mut g, candidate_table(task))?;
            let logits = candidate_logits(&mut g, q, table, &labels.candidates)?;
            let flat = g.value(logits).data();
            let mut k = 0;
            let rows = labels
                .candidates
                .iter()
                .map(|c| {
                    let s = flat[k..k + c.len()].to_vec();
                    k += c.len();
                    s
                })
                .collect();
            out.push(rows);
        }
        Ok(out)
    }
}

/// Candidate counts per dense row, with a tie-break added to each score.
#[derive(Debug, Clone, Default)]
struct Counts {
    time: HashMap<usize, f64>,
    mode: HashMap<usize, f64>,
    poi: HashMap<usize, f64>,
}

impl Counts {
    fn add(&mut self, vocabs: &Vocabularies, it: &crate::datastore::InteractionRecord) {
        *self.time.entry(when_bucket(it.timestamp) as usize + 1).or_default() += 1.0;
        if let Some(m) = it.travel_mode.and_then(|m| vocabs.mode.get(m)) {
            *self.mode.entry(m).or_default() += 1.0;
        }
        for p in std::iter::once(it.target_poi_id).chain(it.via_poi_id) {
            if let Some(i) = vocabs.poi.get(p) {
                *self.poi.entry(i).or_default() += 1.0;
            }
        }
    }

    fn table(&self, task: Task) -> &HashMap<usize, f64> {
        match task {
            Task::When => &self.time,
            Task::How => &self.mode,
            Task::Where | Task::Via => &self.poi,
        }
    }
}

fn score_by_counts(batch: &Batch, tasks: &[Task], counts: impl Fn(usize, Task) -> Vec<f64>) -> Vec<Vec<Vec<f64>>> {
    tasks
        .iter()
        .map(|&task| {
            let labels = batch.task(task);
            labels
                .rows
                .iter()
                .zip(&labels.candidates)
                .map(|(&r, cands)| {
                    let per = counts(r / batch.len, task);
                    cands.iter().map(|&c| per[c]).collect()
                })
                .collect()
        })
        .collect()
}

/// Global training frequency of each class or POI, with POI ties broken by
/// nscore.
#[derive(Debug, Clone)]
pub struct PopularityPredictor {
    dense: [Vec<f64>; 4],
}

impl PopularityPredictor {
    pub fn fit(data: &Prepared) -> Self {
        let mut counts = Counts::default();
        for u in &data.split.users {
            for &i in &u.train {
                counts.add(&data.vocabs, &data.dataset.interactions[i]);
            }
        }
        let sizes = data.vocabs.sizes();
        let dense = Task::ALL.map(|task| {
            let n = match task {
                Task::When => sizes.time,
                Task::How => sizes.mode,
                Task::Where | Task::Via => sizes.poi,
            };
            let mut v = vec![0.0; n];
            for (&k, &c) in counts.table(task) {
                v[k] = c;
            }
            if matches!(task, Task::Where | Task::Via) {
                for (row, x) in v.iter_mut().enumerate() {
                    let ns = data.vocabs.poi.id_of(row).and_then(|id| data.corpus.nscore(id));
                    *x += ns.unwrap_or(0.0);
                }
            }
            v
        });
        Self { dense }
    }
}

impl Predictor for PopularityPredictor {
    fn scores(&mut self, batch: &Batch, tasks: &[Task]) -> Result<Vec<Vec<Vec<f64>>>, HarnessError> {
        Ok(score_by_counts(batch, tasks, |_, task| self.dense[task.index()].clone()))
    }
}

/// Ranks by how often the same user produced each class or POI in
/// training.
#[derive(Debug, Clone)]
pub struct MemorizerPredictor {
    per_user: HashMap<usize, Counts>,
    sizes: [usize; 4],
}

impl MemorizerPredictor {
    pub fn fit(data: &Prepared) -> Self {
        let mut per_user = HashMap::new();
        for u in &data.split.users {
            let c: &mut Counts = per_user.entry(u.user).or_default();
            for &i in &u.train {
                c.add(&data.vocabs, &data.dataset.interactions[i]);
            }
        }
        let s = data.vocabs.sizes();
        Self {
            per_user,
            sizes: [s.time, s.mode, s.poi, s.poi],
        }
    }
}

impl Predictor for MemorizerPredictor {
    fn scores(&mut self, batch: &Batch, tasks: &[Task]) -> Result<Vec<Vec<Vec<f64>>>, HarnessError> {
        let empty = Counts::default();
        Ok(score_by_counts(batch, tasks, |b, task| {
            let c = self.per_user.get(&batch.users[b]).unwrap_or(&empty);
            let mut v = vec![0.0; self.sizes[task.index()]];
            for (&k, &x) in c.table(task) {
                v[k] = x;
            }
            v
        }))
    }
}

/// Candidate positions sorted by descending score; ties keep list order.
pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Evaluates `tasks` over `batches`; other tasks are reported as absent.
pub fn evaluate(
    predictor: &mut dyn Predictor,
    batches: &[Batch],
    data: &Prepared,
    tasks: &[Task],
    mae: MaeMode,
) -> Result<MetricsReport, HarnessError> {
    let vocabs = &data.vocabs;
    // Per task: ranked labels, truths, excluded count.
    let mut class_ranked: [Vec<Vec<usize>>; 2] = Default::default();
    let mut class_truth: [Vec<usize>; 2] = Default::default();
    let mut poi_ranked: [Vec<Vec<u64>>; 2] = Default::default();
    let mut poi_truth: [Vec<u64>; 2] = Default::default();
    let mut excluded = [0usize; 4];

    for batch in batches {
        let scores = predictor.scores(batch, tasks)?;
        for (&task, rows) in tasks.iter().zip(&scores) {
            let labels = batch.task(task);
            excluded[task.index()] += labels.excluded;
            if rows.len() != labels.len() {
                return Err(HarnessError::Eval(format!(
                    "{task}: predictor returned {} rows for {} labels",
                    rows.len(),
                    labels.len()
                )));
            }
            for ((s, cands), &pos) in rows.iter().zip(&labels.candidates).zip(&labels.positive) {
                if s.len() != cands.len() {
                    return Err(HarnessError::Eval(format!("{task}: score count does not match candidates")));
                }
                let order = rank(s);
                match task {
                    Task::When | Task::How => {
                        // When rows are bucket + 1; mode rows are compared as-is.
                        let shift = usize::from(task == Task::When);
                        let k = task.index();
                        class_ranked[k].push(order.iter().map(|&i| cands[i] - shift).collect());
                        class_truth[k].push(cands[pos] - shift);
                    }
                    Task::Where | Task::Via => {
                        let k = task.index() - 2;
                        let id = |row: usize| {
                            vocabs
                                .poi
                                .id_of(row)
                                .ok_or_else(|| HarnessError::Eval(format!("candidate row {row} has no poi")))
                        };
                        poi_ranked[k].push(order.iter().map(|&i| id(cands[i])).collect::<Result<_, _>>()?);
                        poi_truth[k].push(id(cands[pos])?);
                    }
                }
            }
        }
    }

    let mut report = MetricsReport::default();
    for &task in tasks {
        let k = task.index();
        let metrics_err = |e: crate::metrics::MetricsError| HarnessError::Eval(format!("{task}: {e}"));
        let (metrics, count) = match task {
            Task::When | Task::How => {
                let truth = &class_truth[k];
                let ranked = &class_ranked[k];
                if truth.is_empty() {
                    (TaskEntry::missing(task).metrics, 0)
                } else {
                    let preds: Vec<usize> = ranked.iter().map(|r| r[0]).collect();
                    let m = classification_metrics(&preds, truth, ranked, mae).map_err(metrics_err)?;
                    let r = if task == Task::When {
                        TaskReport::When(Some(WhenReport { acc: m.acc, mae: m.mae }))
                    } else {
                        TaskReport::How(Some(HowReport { acc: m.acc, bcr: m.bcr }))
                    };
                    (r, truth.len())
                }
            }
            Task::Where | Task::Via => {
                let truth = &poi_truth[k - 2];
                if truth.is_empty() {
                    (TaskEntry::missing(task).metrics, 0)
                } else {
                    let m = retrieval_metrics(&poi_ranked[k - 2], truth, |p| data.corpus.category(p), &[1, 5])
                        .map_err(metrics_err)?;
                    let r = RetrievalReport {
                        hr1: m.hr(1).unwrap_or(0.0),
                        hr5: m.hr(5).unwrap_or(0.0),
                        cir: m.cir,
                    };
                    (TaskReport::Retrieval(Some(r)), truth.len())
                }
            }
        };
        report.tasks[k] = TaskEntry {
            metrics,
            count,
            excluded: excluded[k],
        };
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_is_stable_and_descending() {
        assert_eq!(rank(&[0.1, 0.5, 0.1, 0.9]), vec![3, 1, 0, 2]);
        assert_eq!(rank(&[1.0, 1.0, 1.0]), vec![0, 1, 2]);
    }
}
