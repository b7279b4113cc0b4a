use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;

use super::records::PoiCorpus;
use super::DataError;

pub const UNIFORM_NEGATIVES: usize = 14;
pub const HARD_NEGATIVES: usize = 50;

/// Hybrid negatives for one positive: uniform corpus samples followed by
/// same-GID samples.
///
/// Hard negatives are drawn first, all of them when the pool holds at most
/// [`HARD_NEGATIVES`]. Uniform negatives are then drawn from the corpus
/// minus the positive and the chosen hard set, so the list is duplicate-free
/// and the uniform count stays exact whenever the corpus allows it.
pub fn sample_negatives<R: Rng + ?Sized>(positive: u64, corpus: &PoiCorpus, rng: &mut R) -> Result<Vec<u64>, DataError> {
    let gid = corpus.gid(positive).ok_or(DataError::UnknownPoi(positive))?;
    let pool: Vec<u64> = corpus.same_gid(gid).iter().copied().filter(|&p| p != positive).collect();
    let hard: Vec<u64> = if pool.len() <= HARD_NEGATIVES {
        pool
    } else {
        sample(rng, pool.len(), HARD_NEGATIVES).iter().map(|i| pool[i]).collect()
    };

    let mut taken: HashSet<u64> = hard.iter().copied().collect();
    taken.insert(positive);
    let ids = corpus.ids();
    let available = ids.len() - taken.len();
    let mut uniform = Vec::with_capacity(UNIFORM_NEGATIVES);
    if available <= UNIFORM_NEGATIVES {
        uniform.extend(ids.iter().copied().filter(|p| !taken.contains(p)));
    } else if available < 2 * UNIFORM_NEGATIVES {
        let rest: Vec<u64> = ids.iter().copied().filter(|p| !taken.contains(p)).collect();
        uniform.extend(sample(rng, rest.len(), UNIFORM_NEGATIVES).iter().map(|i| rest[i]));
    } else {
        while uniform.len() < UNIFORM_NEGATIVES {
            let p = ids[rng.random_range(0..ids.len())];
            if taken.insert(p) {
                uniform.push(p);
            }
        }
    }
    uniform.extend(hard);
    Ok(uniform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::PoiRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus(gids: &[u64]) -> PoiCorpus {
        let pois: Vec<PoiRecord> = gids
            .iter()
            .enumerate()
            .map(|(i, &gid)| PoiRecord {
                poi_id: i as u64,
                nscore: 0.5,
                gid,
                cid: 0,
                arid: 0,
                coordinates: (0.0, 0.0),
            })
            .collect();
        PoiCorpus::new(&pois)
    }

    #[test]
    fn small_pool_fully_included() {
        // Positive 0 shares gid 1 with POIs 1..=3; 100 singletons elsewhere.
        let mut gids = vec![1, 1, 1, 1];
        gids.extend(100..200);
        let c = corpus(&gids);
        let negs = sample_negatives(0, &c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(negs.len(), 17);
        assert_eq!(&negs[14..], &[1, 2, 3]);
    }

    #[test]
    fn lone_positive_gets_uniform_only() {
        let gids: Vec<u64> = (0..40).collect();
        let c = corpus(&gids);
        let negs = sample_negatives(5, &c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(negs.len(), 14);
        assert!(!negs.contains(&5));
    }

    #[test]
    fn unknown_positive_rejected() {
        let c = corpus(&[0; 20]);
        assert!(matches!(
            sample_negatives(99, &c, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(DataError::UnknownPoi(99))
        ));
    }

    #[test]
    fn tight_corpus_still_exact() {
        // 16 POIs, one gid: 15 hard and nothing left for uniform draws.
        let c = corpus(&[0; 16]);
        let negs = sample_negatives(0, &c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(negs.len(), 15);
        // 70 POIs split across two gids: 20 hard, 14 uniform from the other 49.
        let mut gids = vec![0; 21];
        gids.extend([1; 49]);
        let c = corpus(&gids);
        let negs = sample_negatives(0, &c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(negs.len(), 34);
        let set: HashSet<u64> = negs.iter().copied().collect();
        assert_eq!(set.len(), 34);
    }
}
