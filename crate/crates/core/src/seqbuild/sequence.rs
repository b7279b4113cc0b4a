use rand::Rng;

use crate::datastore::{sample_negatives, DataError, Dataset, InteractionRecord, PoiCorpus, DAY_MS, HALF_HOUR_MS};
use crate::Task;

pub const TIME_BUCKETS: usize = 48;

/// Half-hour-of-day bucket in `0..48`.
pub fn when_bucket(timestamp: i64) -> u32 {
    (timestamp.rem_euclid(DAY_MS) / HALF_HOUR_MS) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Labels {
    pub when: u32,
    pub how: Option<u64>,
    pub target: u64,
    pub via: Option<u64>,
}

pub fn derive_labels(it: &InteractionRecord) -> Labels {
    Labels {
        when: when_bucket(it.timestamp),
        how: it.travel_mode,
        target: it.target_poi_id,
        via: it.via_poi_id,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Scenario,
    Item,
    Feedback,
}

impl TokenKind {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    /// Context at departure. `time_bucket` is the departure bucket of the
    /// previous trip, `None` for the first trip in the log.
    Scenario {
        gid: u64,
        arid: u64,
        weather: u64,
        time_bucket: Option<u32>,
    },
    Item { poi: u64 },
    Feedback { action: u64, mode: Option<u64> },
}

impl Token {
    pub fn kind(&self) -> TokenKind {
        match self {
            Token::Scenario { .. } => TokenKind::Scenario,
            Token::Item { .. } => TokenKind::Item,
            Token::Feedback { .. } => TokenKind::Feedback,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqToken {
    pub token: Token,
    pub timestamp: i64,
    /// Index of the source row in [`Dataset::interactions`].
    pub interaction: usize,
}

/// Chronological S/I/F tokens with four per-position label channels.
/// A channel entry is `Some` exactly where its mask is set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSequence {
    /// Index into [`Dataset::users`].
    pub user: usize,
    pub tokens: Vec<SeqToken>,
    pub when: Vec<Option<u32>>,
    pub how: Vec<Option<u64>>,
    pub target: Vec<Option<u64>>,
    pub via: Vec<Option<u64>>,
    /// Sampled negatives for the `target` channel, aligned with it.
    pub target_negatives: Vec<Option<Vec<u64>>>,
    pub via_negatives: Vec<Option<Vec<u64>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum SeqError {
    #[error("max_len must be at least 3, got {0}")]
    MaxLen(usize),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Builds the token stream for the time-sorted `history` (indices into
/// `ds.interactions`), keeping the most recent `max_len / 3` interactions.
///
/// Token times: S at the previous trip's time, I one millisecond before its
/// own trip, F at the trip. Every label therefore describes an event later
/// than the token carrying it.
pub fn build_labeled_sequence(
    ds: &Dataset,
    user: usize,
    history: &[usize],
    max_len: usize,
) -> Result<LabeledSequence, SeqError> {
    if max_len < 3 {
        return Err(SeqError::MaxLen(max_len));
    }
    let keep = history.len().min(max_len / 3);
    let start = history.len() - keep;
    let n = 3 * keep;
    let mut seq = LabeledSequence {
        user,
        tokens: Vec::with_capacity(n),
        when: vec![None; n],
        how: vec![None; n],
        target: vec![None; n],
        via: vec![None; n],
        target_negatives: vec![None; n],
        via_negatives: vec![None; n],
    };
    for (pos, &idx) in history.iter().enumerate().skip(start) {
        let it = &ds.interactions[idx];
        let prev = pos.checked_sub(1).map(|p| ds.interactions[history[p]].timestamp);
        let s_time = prev.unwrap_or(it.timestamp - 1);
        let i_time = (it.timestamp - 1).max(s_time);
        let labels = derive_labels(it);
        let base = seq.tokens.len();
        seq.tokens.push(SeqToken {
            token: Token::Scenario {
                gid: it.gid,
                arid: it.arid,
                weather: it.weather,
                time_bucket: prev.map(when_bucket),
            },
            timestamp: s_time,
            interaction: idx,
        });
        seq.tokens.push(SeqToken {
            token: Token::Item { poi: it.target_poi_id },
            timestamp: i_time,
            interaction: idx,
        });
        seq.tokens.push(SeqToken {
            token: Token::Feedback {
                action: it.action_type,
                mode: it.travel_mode,
            },
            timestamp: it.timestamp,
            interaction: idx,
        });
        seq.when[base] = Some(labels.when);
        seq.how[base] = labels.how;
        seq.target[base] = Some(labels.target);
        seq.via[base + 1] = labels.via;
    }
    Ok(seq)
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Whether `task` carries a label at `pos`.
    pub fn is_labeled(&self, task: Task, pos: usize) -> bool {
        match task {
            Task::When => self.when[pos].is_some(),
            Task::How => self.how[pos].is_some(),
            Task::Where => self.target[pos].is_some(),
            Task::Via => self.via[pos].is_some(),
        }
    }

    pub fn clear_labels(&mut self, task: Task) {
        match task {
            Task::When => self.when.iter_mut().for_each(|l| *l = None),
            Task::How => self.how.iter_mut().for_each(|l| *l = None),
            Task::Where => {
                self.target.iter_mut().for_each(|l| *l = None);
                self.target_negatives.iter_mut().for_each(|l| *l = None);
            }
            Task::Via => {
                self.via.iter_mut().for_each(|l| *l = None);
                self.via_negatives.iter_mut().for_each(|l| *l = None);
            }
        }
    }

    /// Keeps labels only on tokens of the given interaction.
    pub fn keep_labels_of(&mut self, interaction: usize) {
        for (pos, tok) in self.tokens.iter().enumerate() {
            if tok.interaction != interaction {
                self.when[pos] = None;
                self.how[pos] = None;
                self.target[pos] = None;
                self.via[pos] = None;
                self.target_negatives[pos] = None;
                self.via_negatives[pos] = None;
            }
        }
    }

    /// Draws negatives for every labeled Where and Via position.
    pub fn attach_negatives<R: Rng + ?Sized>(&mut self, corpus: &PoiCorpus, rng: &mut R) -> Result<(), DataError> {
        for pos in 0..self.tokens.len() {
            self.target_negatives[pos] = match self.target[pos] {
                Some(p) => Some(sample_negatives(p, corpus, rng)?),
                None => None,
            };
            self.via_negatives[pos] = match self.via[pos] {
                Some(p) => Some(sample_negatives(p, corpus, rng)?),
                None => None,
            };
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{PoiRecord, UserRecord, EPOCH_MS};

    fn record(ts: i64, target: u64, via: Option<u64>) -> InteractionRecord {
        InteractionRecord {
            user_id: 1,
            timestamp: ts,
            action_type: 2,
            target_poi_id: target,
            gid: 7,
            arid: 8,
            weather: 3,
            travel_mode: Some(4),
            via_poi_id: via,
        }
    }

    fn dataset(records: Vec<InteractionRecord>) -> Dataset {
        Dataset {
            pois: (0..3)
                .map(|i| PoiRecord {
                    poi_id: i,
                    nscore: 0.5,
                    gid: 0,
                    cid: 0,
                    arid: 0,
                    coordinates: (0.0, 0.0),
                })
                .collect(),
            users: vec![UserRecord {
                user_id: 1,
                profile: [None; 6],
            }],
            interactions: records,
        }
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(when_bucket(EPOCH_MS + 14 * 60_000), 0);
        assert_eq!(when_bucket(EPOCH_MS + 30 * 60_000), 1);
        assert_eq!(when_bucket(EPOCH_MS + DAY_MS - 1), 47);
    }

    #[test]
    fn two_interactions_hand_trace() {
        let ds = dataset(vec![record(EPOCH_MS + 100, 1, None), record(EPOCH_MS + DAY_MS, 2, Some(0))]);
        let seq = build_labeled_sequence(&ds, 0, &[0, 1], 120).unwrap();
        let kinds: Vec<TokenKind> = seq.tokens.iter().map(|t| t.token.kind()).collect();
        use TokenKind::*;
        assert_eq!(kinds, vec![Scenario, Item, Feedback, Scenario, Item, Feedback]);
        assert_eq!(seq.when, vec![Some(0), None, None, Some(0), None, None]);
        assert_eq!(seq.target, vec![Some(1), None, None, Some(2), None, None]);
        assert_eq!(seq.how[0], Some(4));
        assert_eq!(seq.via, vec![None, None, None, None, Some(0), None]);
        assert_eq!(
            seq.tokens[0].token,
            Token::Scenario {
                gid: 7,
                arid: 8,
                weather: 3,
                time_bucket: None
            }
        );
        assert!(matches!(seq.tokens[3].token, Token::Scenario { time_bucket: Some(0), .. }));
    }

    #[test]
    fn truncation_keeps_recent() {
        let recs: Vec<InteractionRecord> = (0..50).map(|i| record(EPOCH_MS + i * 1000, 0, None)).collect();
        let ds = dataset(recs);
        let hist: Vec<usize> = (0..50).collect();
        let seq = build_labeled_sequence(&ds, 0, &hist, 120).unwrap();
        assert_eq!(seq.len(), 120);
        assert_eq!(seq.tokens[0].interaction, 10);
        assert!(build_labeled_sequence(&ds, 0, &hist, 2).is_err());
        assert!(build_labeled_sequence(&ds, 0, &[], 120).unwrap().is_empty());
    }
}
