//! Planted-structure travel logs.
//!
//! Each user has a home GID, a favorite POI inside it, a dominant travel
//! mode and a preferred half-hour departure bucket. Every draw either
//! follows the user's latent preference with a configured probability or
//! falls back to a popularity (nscore) weighted or uniform draw.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, LogNormal, Normal};

use super::negatives::UNIFORM_NEGATIVES;
use super::records::{Dataset, InteractionRecord, PoiRecord, UserRecord, PROFILE_FEATURES};
use super::DataError;

pub const HALF_HOUR_MS: i64 = 30 * 60 * 1000;
pub const DAY_MS: i64 = 48 * HALF_HOUR_MS;
/// Midnight of the first generated day.
pub const EPOCH_MS: i64 = 19_675 * DAY_MS;

const PROFILE_CARDINALITY: [u64; PROFILE_FEATURES] = [2, 3, 8, 6, 5, 4];

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub users: usize,
    pub pois: usize,
    pub gids: usize,
    pub categories: usize,
    pub arids: usize,
    pub weathers: usize,
    pub action_types: usize,
    pub travel_modes: usize,
    /// Mean interactions per user; counts are log-normal around it.
    pub mean_interactions: f64,
    pub interactions_sigma: f64,
    pub p_fav: f64,
    pub p_mode: f64,
    pub p_time: f64,
    pub p_via: f64,
    /// Share of interactions carrying a via POI.
    pub via_rate: f64,
    pub mode_missing_rate: f64,
    /// Probability the user departs from the home GID.
    pub p_home: f64,
    pub profile_missing_rate: f64,
    /// Mean gap between consecutive trips, in days.
    pub mean_gap_days: f64,
    /// Exponent of the power law giving GID sizes.
    pub gid_skew: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            users: 1000,
            pois: 5000,
            gids: 250,
            categories: 20,
            arids: 40,
            weathers: 8,
            action_types: 6,
            travel_modes: 5,
            mean_interactions: 25.0,
            interactions_sigma: 0.6,
            p_fav: 0.6,
            p_mode: 0.9,
            p_time: 0.7,
            p_via: 0.5,
            via_rate: 0.3,
            mode_missing_rate: 0.05,
            p_home: 0.8,
            profile_missing_rate: 0.15,
            mean_gap_days: 3.0,
            gid_skew: 0.8,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Config(m.to_string()));
        if self.pois < UNIFORM_NEGATIVES + 1 {
            return bad(&format!("need at least {} POIs, got {}", UNIFORM_NEGATIVES + 1, self.pois));
        }
        if self.gids == 0 || self.categories == 0 || self.arids == 0 {
            return bad("gids, categories and arids must be positive");
        }
        if self.weathers == 0 || self.action_types == 0 || self.travel_modes < 2 {
            return bad("need weathers >= 1, action_types >= 1, travel_modes >= 2");
        }
        if !(self.mean_interactions >= 1.0 && self.mean_interactions.is_finite()) {
            return bad("mean_interactions must be >= 1");
        }
        if !(self.interactions_sigma >= 0.0 && self.mean_gap_days > 0.0 && self.gid_skew >= 0.0) {
            return bad("interactions_sigma, mean_gap_days and gid_skew must be non-negative");
        }
        for (name, p) in [
            ("p_fav", self.p_fav),
            ("p_mode", self.p_mode),
            ("p_time", self.p_time),
            ("p_via", self.p_via),
            ("via_rate", self.via_rate),
            ("mode_missing_rate", self.mode_missing_rate),
            ("p_home", self.p_home),
            ("profile_missing_rate", self.profile_missing_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} = {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

struct Corpus {
    pois: Vec<PoiRecord>,
    by_gid: Vec<Vec<usize>>,
    popularity: WeightedIndex<f64>,
    gid_weights: WeightedIndex<f64>,
}

fn build_corpus(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Corpus, DataError> {
    let err = |e: rand::distr::weighted::Error| DataError::Config(e.to_string());
    let sizes: Vec<f64> = (0..cfg.gids).map(|g| ((g + 1) as f64).powf(-cfg.gid_skew)).collect();
    let gid_dist = WeightedIndex::new(&sizes).map_err(err)?;
    let nscore = Beta::new(2.0, 5.0).map_err(|e| DataError::Config(e.to_string()))?;
    let jitter = Normal::new(0.0, 500.0).map_err(|e| DataError::Config(e.to_string()))?;
    let centers: Vec<(f64, f64)> = (0..cfg.gids)
        .map(|_| (rng.random_range(-50_000.0..50_000.0), rng.random_range(-50_000.0..50_000.0)))
        .collect();

    let mut by_gid = vec![Vec::new(); cfg.gids];
    let mut pois = Vec::with_capacity(cfg.pois);
    for i in 0..cfg.pois {
        // The first `gids` POIs seed every block so none is empty.
        let g = if i < cfg.gids { i } else { gid_dist.sample(rng) };
        let round = |v: f64| (v * 100.0).round() / 100.0;
        let (cx, cy) = centers[g];
        let score: f64 = nscore.sample(rng);
        pois.push(PoiRecord {
            poi_id: i as u64,
            nscore: (score * 1e6).round() / 1e6,
            gid: g as u64,
            cid: rng.random_range(0..cfg.categories) as u64,
            arid: (g % cfg.arids) as u64,
            coordinates: (round(cx + jitter.sample(rng)), round(cy + jitter.sample(rng))),
        });
        by_gid[g].push(i);
    }
    let weights: Vec<f64> = pois.iter().map(|p| p.nscore + 1e-3).collect();
    let gid_sizes: Vec<f64> = by_gid.iter().map(|v| v.len() as f64).collect();
    Ok(Corpus {
        popularity: WeightedIndex::new(&weights).map_err(err)?,
        gid_weights: WeightedIndex::new(&gid_sizes).map_err(err)?,
        pois,
        by_gid,
    })
}

/// Generates a schema-valid dataset; identical config and seed give
/// identical output.
pub fn generate_synthetic(cfg: &GeneratorConfig, seed: u64) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = build_corpus(cfg, &mut rng)?;

    // ln-mean of a log-normal is mu + sigma^2 / 2.
    let sigma = cfg.interactions_sigma;
    let mu = cfg.mean_interactions.ln() - sigma * sigma / 2.0;
    let counts = LogNormal::new(mu, sigma).map_err(|e| DataError::Config(e.to_string()))?;
    let action_weights: Vec<f64> = (0..cfg.action_types).map(|a| 1.0 / (a + 1) as f64).collect();
    let actions = WeightedIndex::new(&action_weights).map_err(|e| DataError::Config(e.to_string()))?;

    let mut users = Vec::with_capacity(cfg.users);
    let mut interactions = Vec::new();
    for u in 0..cfg.users {
        let mut profile = [None; PROFILE_FEATURES];
        for (slot, card) in profile.iter_mut().zip(PROFILE_CARDINALITY) {
            if !rng.random_bool(cfg.profile_missing_rate) {
                *slot = Some(rng.random_range(0..card));
            }
        }
        let user_id = u as u64;
        users.push(UserRecord { user_id, profile });

        let home = corpus.gid_weights.sample(&mut rng);
        let home_pois = &corpus.by_gid[home];
        let favorite = home_pois[rng.random_range(0..home_pois.len())];
        let mode = rng.random_range(0..cfg.travel_modes) as u64;
        let bucket = rng.random_range(0..48i64);
        let n = (counts.sample(&mut rng).round() as usize).max(1);

        let mut day: i64 = rng.random_range(0..7);
        let mut last_ts = i64::MIN;
        for i in 0..n {
            let b = if rng.random_bool(cfg.p_time) {
                bucket
            } else {
                rng.random_range(0..48)
            };
            let offset = rng.random_range(0..HALF_HOUR_MS);
            let mut ts = EPOCH_MS + day * DAY_MS + b * HALF_HOUR_MS + offset;
            while ts <= last_ts {
                day += 1;
                ts += DAY_MS;
            }
            last_ts = ts;
            // Geometric gap with the configured mean.
            let p_stay = 1.0 / (1.0 + cfg.mean_gap_days);
            while !rng.random_bool(p_stay) {
                day += 1;
            }

            let target = if i > 0 && rng.random_bool(cfg.p_fav) {
                favorite
            } else {
                corpus.popularity.sample(&mut rng)
            };
            let at = if rng.random_bool(cfg.p_home) {
                home
            } else {
                corpus.gid_weights.sample(&mut rng)
            };
            let travel_mode = if rng.random_bool(cfg.mode_missing_rate) {
                None
            } else if rng.random_bool(cfg.p_mode) {
                Some(mode)
            } else {
                let other = rng.random_range(0..cfg.travel_modes as u64 - 1);
                Some(if other >= mode { other + 1 } else { other })
            };
            let via_poi_id = if rng.random_bool(cfg.via_rate) {
                let dest_gid = corpus.pois[target].gid as usize;
                let local: Vec<usize> = corpus.by_gid[dest_gid].iter().copied().filter(|&p| p != target).collect();
                let v = if !local.is_empty() && rng.random_bool(cfg.p_via) {
                    local[rng.random_range(0..local.len())]
                } else {
                    loop {
                        let p = corpus.popularity.sample(&mut rng);
                        if p != target {
                            break p;
                        }
                    }
                };
                Some(v as u64)
            } else {
                None
            };
            interactions.push(InteractionRecord {
                user_id,
                timestamp: ts,
                action_type: actions.sample(&mut rng) as u64,
                target_poi_id: target as u64,
                gid: at as u64,
                arid: (at % cfg.arids) as u64,
                weather: rng.random_range(0..cfg.weathers) as u64,
                travel_mode,
                via_poi_id,
            });
        }
    }
    Ok(Dataset {
        pois: corpus.pois,
        users,
        interactions,
    })
}
