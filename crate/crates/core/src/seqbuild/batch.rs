use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sequence::{LabeledSequence, Token, TokenKind, TIME_BUCKETS};
use super::vocab::Vocabularies;
use crate::datastore::{UserRecord, PROFILE_FEATURES};
use crate::Task;

/// Labeled rows of one task inside a batch.
///
/// `candidates[r]` lists dense table rows scored for row `rows[r]`, and
/// `positive[r]` is the position of the ground truth in that list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaskLabels {
    /// Flat `b * len + t` positions.
    pub rows: Vec<usize>,
    pub candidates: Vec<Vec<usize>>,
    pub positive: Vec<usize>,
    /// Labeled positions dropped because the label does not resolve.
    pub excluded: usize,
}

impl TaskLabels {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Right-padded token features for `size` sequences of `len` positions.
/// Per-position vectors are flat with index `b * len + t`; `None` marks a
/// feature the token does not carry.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub len: usize,
    /// Index into the dataset's users, per sequence.
    pub users: Vec<usize>,
    pub kind: Vec<Option<TokenKind>>,
    pub gid: Vec<Option<usize>>,
    pub arid: Vec<Option<usize>>,
    pub weather: Vec<Option<usize>>,
    pub time: Vec<Option<usize>>,
    pub poi: Vec<Option<usize>>,
    pub action: Vec<Option<usize>>,
    pub mode: Vec<Option<usize>>,
    pub timestamps: Vec<i64>,
    pub valid: Vec<bool>,
    /// Dense profile features per sequence, 0 when missing.
    pub profile: Vec<[usize; PROFILE_FEATURES]>,
    pub labels: [TaskLabels; 4],
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.size * self.len
    }

    pub fn task(&self, task: Task) -> &TaskLabels {
        &self.labels[task.index()]
    }

    /// Sequence index of every row of `task`, for per-user lookups.
    pub fn row_users(&self, task: Task) -> Vec<usize> {
        self.task(task).rows.iter().map(|r| r / self.len).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub batch_size: usize,
    /// Shuffles sequence order before chunking.
    pub shuffle_seed: Option<u64>,
    /// Shuffles each candidate list so ties cannot favor a fixed position.
    pub candidate_seed: Option<u64>,
    /// Groups sequences of similar length to cut padding. Sorting happens
    /// inside windows of 16 batches, after shuffling.
    pub bucket_by_length: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            batch_size: 64,
            shuffle_seed: None,
            candidate_seed: None,
            bucket_by_length: false,
        }
    }
}

/// Groups sequences into padded batches. Sequence `i` of `sequences` uses
/// `users[sequences[i].user]` for its profile.
pub fn batchify(
    sequences: &[LabeledSequence],
    users: &[UserRecord],
    vocabs: &Vocabularies,
    opts: BatchOptions,
) -> Vec<Batch> {
    let size = opts.batch_size.max(1);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut shuffle_rng = opts.shuffle_seed.map(ChaCha8Rng::seed_from_u64);
    if let Some(rng) = shuffle_rng.as_mut() {
        order.shuffle(rng);
    }
    let mut chunks: Vec<&[usize]> = Vec::new();
    if opts.bucket_by_length {
        for window in order.chunks_mut(16 * size) {
            window.sort_by_key(|&i| sequences[i].len());
        }
        chunks.extend(order.chunks(size));
        if let Some(rng) = shuffle_rng.as_mut() {
            chunks.shuffle(rng);
        }
    } else {
        chunks.extend(order.chunks(size));
    }
    let mut cand_rng = opts.candidate_seed.map(ChaCha8Rng::seed_from_u64);
    chunks
        .into_iter()
        .map(|chunk| {
            let seqs: Vec<&LabeledSequence> = chunk.iter().map(|&i| &sequences[i]).collect();
            build_batch(&seqs, users, vocabs, cand_rng.as_mut())
        })
        .collect()
}

fn build_batch(
    seqs: &[&LabeledSequence],
    users: &[UserRecord],
    vocabs: &Vocabularies,
    mut cand_rng: Option<&mut ChaCha8Rng>,
) -> Batch {
    let size = seqs.len();
    let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    let n = size * len;
    let mut b = Batch {
        size,
        len,
        users: seqs.iter().map(|s| s.user).collect(),
        kind: vec![None; n],
        gid: vec![None; n],
        arid: vec![None; n],
        weather: vec![None; n],
        time: vec![None; n],
        poi: vec![None; n],
        action: vec![None; n],
        mode: vec![None; n],
        timestamps: vec![0; n],
        valid: vec![false; n],
        profile: seqs
            .iter()
            .map(|s| std::array::from_fn(|k| vocabs.profile[k].lookup_opt(users[s.user].profile[k])))
            .collect(),
        labels: Default::default(),
    };
    let time_candidates: Vec<usize> = (1..=TIME_BUCKETS).collect();
    let mode_candidates: Vec<usize> = (1..vocabs.mode.size()).collect();

    for (bi, seq) in seqs.iter().enumerate() {
        for (t, tok) in seq.tokens.iter().enumerate() {
            let r = bi * len + t;
            b.valid[r] = true;
            b.timestamps[r] = tok.timestamp;
            b.kind[r] = Some(tok.token.kind());
            match tok.token {
                Token::Scenario {
                    gid,
                    arid,
                    weather,
                    time_bucket,
                } => {
                    b.gid[r] = Some(vocabs.gid.lookup(gid));
                    b.arid[r] = Some(vocabs.arid.lookup(arid));
                    b.weather[r] = Some(vocabs.weather.lookup(weather));
                    b.time[r] = Some(time_bucket.map_or(0, |x| x as usize + 1));
                }
                Token::Item { poi } => b.poi[r] = Some(vocabs.poi.lookup(poi)),
                Token::Feedback { action, mode } => {
                    b.action[r] = Some(vocabs.action.lookup(action));
                    b.mode[r] = Some(vocabs.mode.lookup_opt(mode));
                }
            }

            let mut push = |task: Task, cands: Option<Vec<usize>>, positive: usize| {
                let l = &mut b.labels[task.index()];
                match cands {
                    Some(mut c) => {
                        let mut pos = positive;
                        if let Some(rng) = cand_rng.as_deref_mut() {
                            let truth = c[pos];
                            c.shuffle(rng);
                            pos = c.iter().position(|&x| x == truth).unwrap_or(0);
                        }
                        l.rows.push(r);
                        l.candidates.push(c);
                        l.positive.push(pos);
                    }
                    None => l.excluded += 1,
                }
            };
            if let Some(w) = seq.when[t] {
                push(Task::When, Some(time_candidates.clone()), w as usize);
            }
            if let Some(m) = seq.how[t] {
                let c = vocabs.mode.get(m).map(|_| mode_candidates.clone());
                push(Task::How, c, vocabs.mode.lookup(m).saturating_sub(1));
            }
            for (task, label, negs) in [
                (Task::Where, seq.target[t], &seq.target_negatives[t]),
                (Task::Via, seq.via[t], &seq.via_negatives[t]),
            ] {
                if let Some(p) = label {
                    let c = vocabs.poi.get(p).map(|pi| {
                        let mut c = vec![pi];
                        if let Some(negs) = negs {
                            c.extend(negs.iter().filter_map(|&q| vocabs.poi.get(q)));
                        }
                        c
                    });
                    push(task, c, 0);
                }
            }
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{generate_synthetic, GeneratorConfig};
    use crate::seqbuild::build_labeled_sequence;

    #[test]
    fn padding_to_longest() {
        let ds = generate_synthetic(
            &GeneratorConfig {
                users: 2,
                pois: 40,
                gids: 4,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let vocabs = Vocabularies::build(&ds);
        let hist = ds.histories();
        let a = build_labeled_sequence(&ds, 0, &hist[0].interactions[..2], 120).unwrap();
        let c = build_labeled_sequence(&ds, 1, &hist[1].interactions[..3], 120).unwrap();
        let batches = batchify(&[a, c], &ds.users, &vocabs, BatchOptions::default());
        assert_eq!(batches.len(), 1);
        let b = &batches[0];
        assert_eq!((b.size, b.len), (2, 9));
        assert_eq!(b.valid.iter().filter(|v| !**v).count(), 3);
        for r in 6..9 {
            assert!(b.kind[r].is_none() && b.poi[r].is_none() && b.time[r].is_none());
            for l in &b.labels {
                assert!(!l.rows.contains(&r));
            }
        }
        assert_eq!(b.task(Task::Where).len(), 5);
    }
}
