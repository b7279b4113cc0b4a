//! Dataset preparation shared by training and evaluation.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::EvalSplit;
use super::HarnessError;
use crate::datastore::{load_dir, temporal_split, Dataset, DatasetSplit, PoiCorpus};
use crate::seqbuild::{build_labeled_sequence, LabeledSequence, Vocabularies};
use crate::Task;

/// Seed salts keeping the training, evaluation and shuffling streams apart.
pub(crate) const TRAIN_NEGATIVE_SALT: u64 = 0x7472_6169_6e00_0000;
pub(crate) const EVAL_NEGATIVE_SALT: u64 = 0x6576_616c_0000_0000;
pub(crate) const CANDIDATE_SALT: u64 = 0x6361_6e64_0000_0000;
pub(crate) const SHUFFLE_SALT: u64 = 0x7368_7566_0000_0000;

/// Mixes an epoch or other counter into a base seed.
pub(crate) fn derive_seed(seed: u64, salt: u64, counter: u64) -> u64 {
    seed ^ salt ^ counter.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// A validated dataset with its vocabularies, POI corpus and temporal split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub vocabs: Vocabularies,
    pub corpus: PoiCorpus,
    pub split: DatasetSplit,
}

impl Prepared {
    pub fn new(dataset: Dataset) -> Result<Self, HarnessError> {
        dataset.validate()?;
        let vocabs = Vocabularies::build(&dataset);
        let corpus = PoiCorpus::new(&dataset.pois);
        let split = temporal_split(&dataset.histories());
        Ok(Self {
            dataset,
            vocabs,
            corpus,
            split,
        })
    }

    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        Self::new(load_dir(dir)?)
    }

    /// One sequence per user over the training part of the history, with
    /// negatives drawn from `negative_seed`. Labels of tasks outside `tasks`
    /// are removed.
    pub fn train_sequences(
        &self,
        max_len: usize,
        tasks: &[Task],
        negative_seed: u64,
    ) -> Result<Vec<LabeledSequence>, HarnessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(negative_seed);
        let mut out = Vec::new();
        for u in &self.split.users {
            if u.train.is_empty() {
                continue;
            }
            let mut s = build_labeled_sequence(&self.dataset, u.user, &u.train, max_len)?;
            retain_tasks(&mut s, tasks);
            s.attach_negatives(&self.corpus, &mut rng)?;
            out.push(s);
        }
        Ok(out)
    }

    /// One sequence per user holding a `split` interaction: the preceding
    /// history followed by that interaction, labeled only on its tokens.
    /// `max_users` caps the count when positive.
    pub fn eval_sequences(
        &self,
        split: EvalSplit,
        max_len: usize,
        tasks: &[Task],
        negative_seed: u64,
        max_users: usize,
    ) -> Result<Vec<LabeledSequence>, HarnessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(negative_seed);
        let mut out = Vec::new();
        for u in &self.split.users {
            let (target, mut history) = match split {
                EvalSplit::Validation => (u.validation, u.train.clone()),
                EvalSplit::Test => (u.test, u.train.clone()),
            };
            let Some(target) = target else { continue };
            if split == EvalSplit::Test {
                history.extend(u.validation);
            }
            history.push(target);
            let mut s = build_labeled_sequence(&self.dataset, u.user, &history, max_len)?;
            s.keep_labels_of(target);
            retain_tasks(&mut s, tasks);
            s.attach_negatives(&self.corpus, &mut rng)?;
            out.push(s);
            if max_users > 0 && out.len() == max_users {
                break;
            }
        }
        if out.is_empty() {
            return Err(HarnessError::Eval(format!(
                "the {} split is empty: no user has three or more interactions",
                split.name()
            )));
        }
        Ok(out)
    }
}

fn retain_tasks(s: &mut LabeledSequence, tasks: &[Task]) {
    for t in Task::ALL {
        if !tasks.contains(&t) {
            s.clear_labels(t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{generate_synthetic, GeneratorConfig};

    fn prepared() -> Prepared {
        let cfg = GeneratorConfig {
            users: 20,
            pois: 100,
            gids: 5,
            mean_interactions: 6.0,
            ..Default::default()
        };
        Prepared::new(generate_synthetic(&cfg, 4).unwrap()).unwrap()
    }

    #[test]
    fn eval_sequences_label_only_the_target() {
        let p = prepared();
        let seqs = p.eval_sequences(EvalSplit::Test, 120, &Task::ALL, 1, 0).unwrap();
        assert_eq!(seqs.len(), p.split.test_len());
        for s in &seqs {
            let u = p.split.users.iter().find(|u| u.user == s.user).unwrap();
            let last = s.tokens.last().unwrap().interaction;
            assert_eq!(Some(last), u.test);
            for (pos, tok) in s.tokens.iter().enumerate() {
                if tok.interaction != last {
                    assert!(Task::ALL.iter().all(|&t| !s.is_labeled(t, pos)));
                }
            }
            assert!(s.is_labeled(Task::Where, s.len() - 3));
        }
    }

    #[test]
    fn validation_history_excludes_the_test_trip() {
        let p = prepared();
        for s in p.eval_sequences(EvalSplit::Validation, 120, &Task::ALL, 1, 0).unwrap() {
            let u = p.split.users.iter().find(|u| u.user == s.user).unwrap();
            assert!(s.tokens.iter().all(|t| Some(t.interaction) != u.test));
        }
    }

    #[test]
    fn removed_tasks_carry_no_labels() {
        let p = prepared();
        let seqs = p.train_sequences(120, &[Task::When, Task::How], 3).unwrap();
        for s in &seqs {
            assert!(s.target.iter().chain(&s.via).all(Option::is_none));
        }
    }

    #[test]
    fn empty_split_rejected() {
        let cfg = GeneratorConfig {
            users: 3,
            pois: 40,
            gids: 2,
            mean_interactions: 1.0,
            interactions_sigma: 0.0,
            ..Default::default()
        };
        let p = Prepared::new(generate_synthetic(&cfg, 0).unwrap()).unwrap();
        assert!(matches!(
            p.eval_sequences(EvalSplit::Test, 120, &Task::ALL, 0, 0),
            Err(HarnessError::Eval(_))
        ));
    }
}
