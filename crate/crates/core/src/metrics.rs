//! Evaluation metrics and the per-run metrics report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::Task;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty evaluation set")]
    Empty,
    #[error("sample {index}: {message}")]
    Malformed { index: usize, message: String },
    #[error("poi {0} has no known category")]
    UnknownPoi(u64),
    #[error("report line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// How absolute bucket differences are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaeMode {
    Linear,
    /// Shortest distance on a clock of the given period.
    Circular(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationMetrics {
    pub acc: f64,
    pub mae: f64,
    /// Share of samples whose label is absent from the top three.
    pub bcr: f64,
}

/// Accuracy, mean absolute error and top-3 miss rate. `ranked[i]` is the
/// full class ranking of sample `i`, best first; `predictions[i]` is
/// normally its head.
pub fn classification_metrics(
    predictions: &[usize],
    labels: &[usize],
    ranked: &[Vec<usize>],
    mae: MaeMode,
) -> Result<ClassificationMetrics, MetricsError> {
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    if predictions.len() != labels.len() || ranked.len() != labels.len() {
        return Err(MetricsError::Malformed {
            index: 0,
            message: format!(
                "{} predictions, {} labels, {} rankings",
                predictions.len(),
                labels.len(),
                ranked.len()
            ),
        });
    }
    let n = labels.len() as f64;
    let mut hits = 0usize;
    let mut abs = 0.0;
    let mut misses = 0usize;
    for ((&p, &y), r) in predictions.iter().zip(labels).zip(ranked) {
        hits += usize::from(p == y);
        let d = p.abs_diff(y);
        abs += match mae {
            MaeMode::Linear => d,
            MaeMode::Circular(period) => d.min(period - d % period),
        } as f64;
        misses += usize::from(!r.iter().take(3).any(|&c| c == y));
    }
    Ok(ClassificationMetrics {
        acc: hits as f64 / n,
        mae: abs / n,
        bcr: misses as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalMetrics {
    /// `(N, HR@N)` in the order requested.
    pub hit_rates: Vec<(usize, f64)>,
    pub cir: f64,
}

impl RetrievalMetrics {
    pub fn hr(&self, n: usize) -> Option<f64> {
        self.hit_rates.iter().find(|(k, _)| *k == n).map(|(_, v)| *v)
    }
}

/// Hit rates at each cutoff in `ns` and the category inconsistency rate of
/// the top-1 POI. Every ranked POI must resolve through `category`.
pub fn retrieval_metrics<F>(
    ranked: &[Vec<u64>],
    truth: &[u64],
    category: F,
    ns: &[usize],
) -> Result<RetrievalMetrics, MetricsError>
where
    F: Fn(u64) -> Option<u64>,
{
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    if ranked.len() != truth.len() {
        return Err(MetricsError::Malformed {
            index: 0,
            message: format!("{} rankings for {} labels", ranked.len(), truth.len()),
        });
    }
    let mut hits = vec![0usize; ns.len()];
    let mut inconsistent = 0usize;
    for (i, (r, &gt)) in ranked.iter().zip(truth).enumerate() {
        let Some(&top) = r.first() else {
            return Err(MetricsError::Malformed {
                index: i,
                message: "empty ranking".into(),
            });
        };
        for &p in r {
            category(p).ok_or(MetricsError::UnknownPoi(p))?;
        }
        let gt_cat = category(gt).ok_or(MetricsError::UnknownPoi(gt))?;
        for (h, &n) in hits.iter_mut().zip(ns) {
            *h += usize::from(r.iter().take(n).any(|&p| p == gt));
        }
        if top != gt && category(top) != Some(gt_cat) {
            inconsistent += 1;
        }
    }
    let n = truth.len() as f64;
    Ok(RetrievalMetrics {
        hit_rates: ns.iter().zip(hits).map(|(&k, h)| (k, h as f64 / n)).collect(),
        cir: inconsistent as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhenReport {
    pub acc: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HowReport {
    pub acc: f64,
    pub bcr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalReport {
    pub hr1: f64,
    pub hr5: f64,
    pub cir: f64,
}

/// Metrics of one task; `None` values mean the task was not evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaskReport {
    When(Option<WhenReport>),
    How(Option<HowReport>),
    Retrieval(Option<RetrievalReport>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskEntry {
    pub metrics: TaskReport,
    pub count: usize,
    /// Labeled positions left out because the label did not resolve.
    pub excluded: usize,
}

impl TaskEntry {
    pub fn missing(task: Task) -> Self {
        let metrics = match task {
            Task::When => TaskReport::When(None),
            Task::How => TaskReport::How(None),
            Task::Where | Task::Via => TaskReport::Retrieval(None),
        };
        Self {
            metrics,
            count: 0,
            excluded: 0,
        }
    }

    fn values(&self) -> Vec<(&'static str, Option<f64>)> {
        match self.metrics {
            TaskReport::When(m) => vec![("acc", m.map(|m| m.acc)), ("mae", m.map(|m| m.mae))],
            TaskReport::How(m) => vec![("acc", m.map(|m| m.acc)), ("bcr", m.map(|m| m.bcr))],
            TaskReport::Retrieval(m) => vec![
                ("hr1", m.map(|m| m.hr1)),
                ("hr5", m.map(|m| m.hr5)),
                ("cir", m.map(|m| m.cir)),
            ],
        }
    }
}

/// Per-task evaluation results, indexed by [`Task::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub tasks: [TaskEntry; 4],
}

impl Default for MetricsReport {
    fn default() -> Self {
        Self {
            tasks: Task::ALL.map(TaskEntry::missing),
        }
    }
}

impl MetricsReport {
    pub fn task(&self, task: Task) -> &TaskEntry {
        &self.tasks[task.index()]
    }

    pub fn when(&self) -> Option<WhenReport> {
        match self.task(Task::When).metrics {
            TaskReport::When(m) => m,
            _ => None,
        }
    }

    pub fn how(&self) -> Option<HowReport> {
        match self.task(Task::How).metrics {
            TaskReport::How(m) => m,
            _ => None,
        }
    }

    pub fn retrieval(&self, task: Task) -> Option<RetrievalReport> {
        match self.task(task).metrics {
            TaskReport::Retrieval(m) => m,
            _ => None,
        }
    }

    /// Flat key/value pairs in a fixed order; absent metrics are `NA`.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for task in Task::ALL {
            let e = self.task(task);
            for (k, v) in e.values() {
                let v = v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
                out.push((format!("{}.{k}", task.name()), v));
            }
            out.push((format!("{}.count", task.name()), e.count.to_string()));
            out.push((format!("{}.excluded", task.name()), e.excluded.to_string()));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Reads the output of [`MetricsReport::to_text`]. Every key must be
    /// present exactly once.
    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| MetricsError::Parse {
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            if kv.insert(k.trim().to_string(), (i + 1, v.trim().to_string())).is_some() {
                return Err(MetricsError::Parse {
                    line: i + 1,
                    message: format!("duplicate key {}", k.trim()),
                });
            }
        }
        let mut take = |key: String| {
            kv.remove(&key).ok_or(MetricsError::Parse {
                line: 0,
                message: format!("missing key {key}"),
            })
        };
        let mut report = MetricsReport::default();
        for task in Task::ALL {
            let t = task.name();
            let mut num = |key: &str| -> Result<Option<f64>, MetricsError> {
                let (line, v) = take(format!("{t}.{key}"))?;
                if v == "NA" {
                    return Ok(None);
                }
                v.parse().map(Some).map_err(|_| MetricsError::Parse {
                    line,
                    message: format!("`{v}` is not a number"),
                })
            };
            let metrics = match task {
                Task::When => {
                    let (acc, mae) = (num("acc")?, num("mae")?);
                    TaskReport::When(acc.zip(mae).map(|(acc, mae)| WhenReport { acc, mae }))
                }
                Task::How => {
                    let (acc, bcr) = (num("acc")?, num("bcr")?);
                    TaskReport::How(acc.zip(bcr).map(|(acc, bcr)| HowReport { acc, bcr }))
                }
                Task::Where | Task::Via => {
                    let (hr1, hr5, cir) = (num("hr1")?, num("hr5")?, num("cir")?);
                    TaskReport::Retrieval(match (hr1, hr5, cir) {
                        (Some(hr1), Some(hr5), Some(cir)) => Some(RetrievalReport { hr1, hr5, cir }),
                        _ => None,
                    })
                }
            };
            let count = num("count")?.unwrap_or(0.0) as usize;
            let excluded = num("excluded")?.unwrap_or(0.0) as usize;
            report.tasks[task.index()] = TaskEntry {
                metrics,
                count,
                excluded,
            };
        }
        if let Some((k, (line, _))) = kv.into_iter().next() {
            return Err(MetricsError::Parse {
                line,
                message: format!("unknown key {k}"),
            });
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = classification_metrics(&[1, 2], &[1, 2], &[vec![1, 0], vec![2, 1]], MaeMode::Linear).unwrap();
        assert_eq!((m.acc, m.mae, m.bcr), (1.0, 0.0, 0.0));
    }

    #[test]
    fn half_right_with_distance_four() {
        let m = classification_metrics(&[0, 0], &[0, 4], &[vec![0], vec![0]], MaeMode::Linear).unwrap();
        assert_eq!((m.acc, m.mae), (0.5, 2.0));
    }

    #[test]
    fn fourth_place_is_a_bad_case() {
        let m = classification_metrics(&[0], &[3], &[vec![0, 1, 2, 3, 4]], MaeMode::Linear).unwrap();
        assert_eq!(m.bcr, 1.0);
    }

    #[test]
    fn circular_distance_wraps() {
        let m = classification_metrics(&[47], &[0], &[vec![47]], MaeMode::Circular(48)).unwrap();
        assert_eq!(m.mae, 1.0);
        let m = classification_metrics(&[47], &[0], &[vec![47]], MaeMode::Linear).unwrap();
        assert_eq!(m.mae, 47.0);
    }

    #[test]
    fn empty_sets_rejected() {
        assert_eq!(classification_metrics(&[], &[], &[], MaeMode::Linear), Err(MetricsError::Empty));
        assert_eq!(retrieval_metrics(&[], &[], |_| Some(0), &[1]), Err(MetricsError::Empty));
    }

    #[test]
    fn category_rules() {
        let cat = |p: u64| if p < 100 { Some(p % 2) } else { None };
        // Top-1 hit.
        let m = retrieval_metrics(&[vec![4, 5]], &[4], cat, &[1, 5]).unwrap();
        assert_eq!((m.hr(1), m.cir), (Some(1.0), 0.0));
        // Miss within the same category.
        let m = retrieval_metrics(&[vec![6, 4]], &[4], cat, &[1, 5]).unwrap();
        assert_eq!((m.hr(1), m.hr(5), m.cir), (Some(0.0), Some(1.0), 0.0));
        // Miss across categories.
        let m = retrieval_metrics(&[vec![5, 4]], &[4], cat, &[1]).unwrap();
        assert_eq!(m.cir, 1.0);
        assert_eq!(retrieval_metrics(&[vec![5, 400]], &[4], cat, &[1]), Err(MetricsError::UnknownPoi(400)));
    }

    #[test]
    fn report_text_round_trip() {
        let mut r = MetricsReport::default();
        r.tasks[0] = TaskEntry {
            metrics: TaskReport::When(Some(WhenReport { acc: 0.25, mae: 3.5 })),
            count: 8,
            excluded: 0,
        };
        r.tasks[2] = TaskEntry {
            metrics: TaskReport::Retrieval(Some(RetrievalReport {
                hr1: 0.1,
                hr5: 0.30000000000000004,
                cir: 0.7,
            })),
            count: 10,
            excluded: 2,
        };
        let text = r.to_text();
        assert!(text.contains("how.acc = NA"));
        assert!(text.contains("where.excluded = 2"));
        assert_eq!(MetricsReport::parse(&text).unwrap(), r);
        assert!(MetricsReport::parse("when.acc = 1").is_err());
    }
}
