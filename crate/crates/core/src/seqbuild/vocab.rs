use std::collections::HashMap;

use crate::datastore::{Dataset, PROFILE_FEATURES};

/// Dense indexing of raw IDs. Index 0 is reserved for missing or unknown.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    ids: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl Vocab {
    pub fn new(raw: impl IntoIterator<Item = u64>) -> Self {
        let mut ids: Vec<u64> = raw.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i + 1)).collect();
        Self { ids, index }
    }

    /// Table rows including the missing row.
    pub fn size(&self) -> usize {
        self.ids.len() + 1
    }

    pub fn get(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Dense index, 0 for unknown IDs.
    pub fn lookup(&self, id: u64) -> usize {
        self.get(id).unwrap_or(0)
    }

    pub fn lookup_opt(&self, id: Option<u64>) -> usize {
        id.map_or(0, |v| self.lookup(v))
    }

    pub fn id_of(&self, index: usize) -> Option<u64> {
        index.checked_sub(1).and_then(|i| self.ids.get(i).copied())
    }
}

/// Embedding table sizes, including the missing row of every table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabSizes {
    pub poi: usize,
    pub gid: usize,
    pub arid: usize,
    pub weather: usize,
    pub action: usize,
    pub mode: usize,
    pub time: usize,
    pub profile: [usize; PROFILE_FEATURES],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabularies {
    pub poi: Vocab,
    pub gid: Vocab,
    pub arid: Vocab,
    pub weather: Vocab,
    pub action: Vocab,
    pub mode: Vocab,
    pub profile: [Vocab; PROFILE_FEATURES],
}

impl Vocabularies {
    pub fn build(ds: &Dataset) -> Self {
        let it = &ds.interactions;
        Self {
            poi: Vocab::new(ds.pois.iter().map(|p| p.poi_id)),
            gid: Vocab::new(ds.pois.iter().map(|p| p.gid).chain(it.iter().map(|r| r.gid))),
            arid: Vocab::new(ds.pois.iter().map(|p| p.arid).chain(it.iter().map(|r| r.arid))),
            weather: Vocab::new(it.iter().map(|r| r.weather)),
            action: Vocab::new(it.iter().map(|r| r.action_type)),
            mode: Vocab::new(it.iter().filter_map(|r| r.travel_mode)),
            profile: std::array::from_fn(|k| Vocab::new(ds.users.iter().filter_map(|u| u.profile[k]))),
        }
    }

    pub fn sizes(&self) -> VocabSizes {
        VocabSizes {
            poi: self.poi.size(),
            gid: self.gid.size(),
            arid: self.arid.size(),
            weather: self.weather.size(),
            action: self.action.size(),
            mode: self.mode.size(),
            time: super::TIME_BUCKETS + 1,
            profile: std::array::from_fn(|k| self.profile[k].size()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_reserved() {
        let v = Vocab::new([30, 10, 20, 10]);
        assert_eq!(v.size(), 4);
        assert_eq!(v.lookup(10), 1);
        assert_eq!(v.lookup(30), 3);
        assert_eq!(v.lookup(99), 0);
        assert_eq!(v.id_of(2), Some(20));
        assert_eq!(v.id_of(0), None);
    }
}
