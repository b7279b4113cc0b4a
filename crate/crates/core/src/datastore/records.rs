use std::collections::{BTreeMap, HashMap};

use super::DataError;

/// One row of `pois.tsv`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoiRecord {
    pub poi_id: u64,
    /// Popularity-like score in `[0, 1]`.
    pub nscore: f64,
    pub gid: u64,
    pub cid: u64,
    pub arid: u64,
    pub coordinates: (f64, f64),
}

pub const PROFILE_FEATURES: usize = 6;

/// One row of `users.tsv`. Missing profile features stay `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRecord {
    pub user_id: u64,
    pub profile: [Option<u64>; PROFILE_FEATURES],
}

/// One row of `interactions.tsv`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user_id: u64,
    /// Milliseconds; only relative order is meaningful.
    pub timestamp: i64,
    pub action_type: u64,
    pub target_poi_id: u64,
    /// Geographic block where the user was located.
    pub gid: u64,
    pub arid: u64,
    pub weather: u64,
    pub travel_mode: Option<u64>,
    pub via_poi_id: Option<u64>,
}

/// The three tables, rows kept in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub pois: Vec<PoiRecord>,
    pub users: Vec<UserRecord>,
    pub interactions: Vec<InteractionRecord>,
}

/// A user's interactions as indices into [`Dataset::interactions`], sorted
/// by timestamp with ties kept in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserHistory {
    /// Index into [`Dataset::users`].
    pub user: usize,
    pub interactions: Vec<usize>,
}

impl Dataset {
    /// Checks uniqueness, value ranges and every cross-table reference.
    /// Row numbers in errors are 1-based data rows (the header is row 0).
    pub fn validate(&self) -> Result<(), DataError> {
        let mut pois = HashMap::with_capacity(self.pois.len());
        for (row, p) in self.pois.iter().enumerate() {
            if pois.insert(p.poi_id, row).is_some() {
                return Err(DataError::Duplicate {
                    table: "pois",
                    row: row + 1,
                    id: p.poi_id,
                });
            }
            if !(0.0..=1.0).contains(&p.nscore) {
                return Err(DataError::Parse {
                    table: "pois",
                    row: row + 1,
                    column: "nscore",
                    message: format!("{} outside [0, 1]", p.nscore),
                });
            }
        }
        let mut users = HashMap::with_capacity(self.users.len());
        for (row, u) in self.users.iter().enumerate() {
            if users.insert(u.user_id, row).is_some() {
                return Err(DataError::Duplicate {
                    table: "users",
                    row: row + 1,
                    id: u.user_id,
                });
            }
        }
        for (row, it) in self.interactions.iter().enumerate() {
            let dangling = |column: &'static str, id: u64| DataError::Dangling {
                table: "interactions",
                row: row + 1,
                column,
                id,
            };
            if !users.contains_key(&it.user_id) {
                return Err(dangling("user_id", it.user_id));
            }
            if !pois.contains_key(&it.target_poi_id) {
                return Err(dangling("target_poi_id", it.target_poi_id));
            }
            if let Some(v) = it.via_poi_id {
                if !pois.contains_key(&v) {
                    return Err(dangling("via_poi_id", v));
                }
            }
        }
        Ok(())
    }

    /// Per-user time-sorted histories, in user-table order. Users without
    /// interactions get an empty history.
    pub fn histories(&self) -> Vec<UserHistory> {
        let pos: HashMap<u64, usize> = self.users.iter().enumerate().map(|(i, u)| (u.user_id, i)).collect();
        let mut out: Vec<UserHistory> = (0..self.users.len())
            .map(|user| UserHistory {
                user,
                interactions: Vec::new(),
            })
            .collect();
        for (i, it) in self.interactions.iter().enumerate() {
            if let Some(&u) = pos.get(&it.user_id) {
                out[u].interactions.push(i);
            }
        }
        for h in &mut out {
            // Stable sort keeps file order among equal timestamps.
            h.interactions.sort_by_key(|&i| self.interactions[i].timestamp);
        }
        out
    }

    pub fn poi_index(&self) -> HashMap<u64, usize> {
        self.pois.iter().enumerate().map(|(i, p)| (p.poi_id, i)).collect()
    }
}

/// POI lookup structures used for negative sampling and category metrics.
#[derive(Debug, Clone)]
pub struct PoiCorpus {
    ids: Vec<u64>,
    position: HashMap<u64, usize>,
    gid_of: Vec<u64>,
    cid_of: Vec<u64>,
    nscore_of: Vec<f64>,
    by_gid: BTreeMap<u64, Vec<u64>>,
}

impl PoiCorpus {
    pub fn new(pois: &[PoiRecord]) -> Self {
        let mut by_gid: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for p in pois {
            by_gid.entry(p.gid).or_default().push(p.poi_id);
        }
        Self {
            ids: pois.iter().map(|p| p.poi_id).collect(),
            position: pois.iter().enumerate().map(|(i, p)| (p.poi_id, i)).collect(),
            gid_of: pois.iter().map(|p| p.gid).collect(),
            cid_of: pois.iter().map(|p| p.cid).collect(),
            nscore_of: pois.iter().map(|p| p.nscore).collect(),
            by_gid,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn contains(&self, poi: u64) -> bool {
        self.position.contains_key(&poi)
    }

    pub fn gid(&self, poi: u64) -> Option<u64> {
        self.position.get(&poi).map(|&i| self.gid_of[i])
    }

    pub fn category(&self, poi: u64) -> Option<u64> {
        self.position.get(&poi).map(|&i| self.cid_of[i])
    }

    pub fn nscore(&self, poi: u64) -> Option<f64> {
        self.position.get(&poi).map(|&i| self.nscore_of[i])
    }

    /// All POIs sharing a geographic block, in table order.
    pub fn same_gid(&self, gid: u64) -> &[u64] {
        self.by_gid.get(&gid).map_or(&[], Vec::as_slice)
    }

    pub fn gid_index(&self) -> &BTreeMap<u64, Vec<u64>> {
        &self.by_gid
    }
}
