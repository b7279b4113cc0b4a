use std::collections::HashSet;

use inttravel_core::datastore::{
    format_interactions, format_pois, format_users, generate_synthetic, parse_interactions, parse_pois, parse_users,
    sample_negatives, temporal_split, GeneratorConfig, InteractionRecord, PoiCorpus, PoiRecord, UserRecord,
    HARD_NEGATIVES, UNIFORM_NEGATIVES,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn poi() -> impl Strategy<Value = PoiRecord> {
    (any::<u64>(), 0.0..=1.0f64, any::<u64>(), any::<u64>(), any::<u64>(), -180.0..180.0f64, -90.0..90.0f64).prop_map(
        |(poi_id, nscore, gid, cid, arid, lon, lat)| PoiRecord {
            poi_id,
            nscore,
            gid,
            cid,
            arid,
            coordinates: (lon, lat),
        },
    )
}

fn user() -> impl Strategy<Value = UserRecord> {
    (any::<u64>(), prop::array::uniform6(prop::option::of(any::<u64>())))
        .prop_map(|(user_id, profile)| UserRecord { user_id, profile })
}

fn interaction() -> impl Strategy<Value = InteractionRecord> {
    (
        any::<u64>(),
        any::<i64>(),
        any::<u64>(),
        any::<u64>(),
        any::<u64>(),
        any::<u64>(),
        any::<u64>(),
        prop::option::of(any::<u64>()),
        prop::option::of(any::<u64>()),
    )
        .prop_map(
            |(user_id, timestamp, action_type, target_poi_id, gid, arid, weather, travel_mode, via_poi_id)| {
                InteractionRecord {
                    user_id,
                    timestamp,
                    action_type,
                    target_poi_id,
                    gid,
                    arid,
                    weather,
                    travel_mode,
                    via_poi_id,
                }
            },
        )
}

proptest! {
    #[test]
    fn poi_table_round_trips(rows in prop::collection::vec(poi(), 0..20)) {
        prop_assert_eq!(parse_pois(&format_pois(&rows)).unwrap(), rows);
    }

    #[test]
    fn user_table_round_trips(rows in prop::collection::vec(user(), 0..20)) {
        prop_assert_eq!(parse_users(&format_users(&rows)).unwrap(), rows);
    }

    #[test]
    fn interaction_table_round_trips(rows in prop::collection::vec(interaction(), 0..20)) {
        prop_assert_eq!(parse_interactions(&format_interactions(&rows)).unwrap(), rows);
    }

    #[test]
    fn split_is_chronological_and_exhaustive(seed in 0u64..500, users in 1usize..30) {
        let cfg = GeneratorConfig { users, pois: 60, gids: 4, mean_interactions: 4.0, ..Default::default() };
        let ds = generate_synthetic(&cfg, seed).unwrap();
        let histories = ds.histories();
        let split = temporal_split(&histories);
        prop_assert_eq!(split.users.len(), histories.len());
        let mut seen = HashSet::new();
        for (u, h) in split.users.iter().zip(&histories) {
            let mut all = u.train.clone();
            all.extend(u.validation);
            all.extend(u.test);
            prop_assert_eq!(&all, &h.interactions);
            prop_assert_eq!(u.validation.is_some(), h.interactions.len() >= 3);
            prop_assert_eq!(u.test.is_some(), h.interactions.len() >= 3);
            let ts = |i: usize| ds.interactions[i].timestamp;
            if let (Some(v), Some(t)) = (u.validation, u.test) {
                prop_assert!(u.train.iter().all(|&i| ts(i) <= ts(v)));
                prop_assert!(ts(v) <= ts(t));
            }
            for &i in &all {
                prop_assert!(seen.insert(i));
            }
        }
        prop_assert_eq!(seen.len(), ds.interactions.len());
    }

    #[test]
    fn negatives_respect_the_contract(gids in prop::collection::vec(0u64..6, 16..160), seed in any::<u64>()) {
        let pois: Vec<PoiRecord> = gids
            .iter()
            .enumerate()
            .map(|(i, &gid)| PoiRecord { poi_id: 1000 + i as u64, nscore: 0.5, gid, cid: 0, arid: 0, coordinates: (0.0, 0.0) })
            .collect();
        let corpus = PoiCorpus::new(&pois);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &pois {
            let negs = sample_negatives(p.poi_id, &corpus, &mut rng).unwrap();
            let pool = corpus.same_gid(p.gid).len() - 1;
            let hard = pool.min(HARD_NEGATIVES);
            let uniform = UNIFORM_NEGATIVES.min(corpus.len() - 1 - hard);
            prop_assert_eq!(negs.len(), uniform + hard);
            prop_assert!(!negs.contains(&p.poi_id));
            prop_assert_eq!(negs.iter().collect::<HashSet<_>>().len(), negs.len());
            prop_assert!(negs[uniform..].iter().all(|&q| corpus.gid(q) == Some(p.gid)));
        }
    }
}

#[test]
fn generator_is_deterministic_and_valid() {
    let cfg = GeneratorConfig {
        users: 50,
        pois: 300,
        gids: 12,
        ..Default::default()
    };
    let a = generate_synthetic(&cfg, 4).unwrap();
    assert_eq!(a, generate_synthetic(&cfg, 4).unwrap());
    assert_ne!(a, generate_synthetic(&cfg, 5).unwrap());
    a.validate().unwrap();
    assert_eq!(a.users.len(), 50);
    assert_eq!(a.pois.len(), 300);
}

#[test]
fn planted_preferences_show_in_the_logs() {
    let ds = generate_synthetic(&GeneratorConfig::default(), 9).unwrap();
    let mut dominant = 0usize;
    let mut with_mode = 0usize;
    for h in ds.histories() {
        let modes: Vec<u64> = h.interactions.iter().filter_map(|&i| ds.interactions[i].travel_mode).collect();
        dominant += modes.iter().map(|m| modes.iter().filter(|x| *x == m).count()).max().unwrap_or(0);
        with_mode += modes.len();
    }
    // One mode per user dominates when the planted rate is 0.9.
    assert!(dominant as f64 / with_mode as f64 > 0.8);
}

#[test]
fn malformed_rows_are_reported_with_position() {
    let mut text = format_pois(&[PoiRecord {
        poi_id: 1,
        nscore: 0.25,
        gid: 2,
        cid: 3,
        arid: 4,
        coordinates: (1.5, -2.5),
    }]);
    text.push_str("2\tnot-a-number\t2\t3\t4\t0,0\n");
    let err = parse_pois(&text).unwrap_err().to_string();
    assert!(err.contains("row 2"), "{err}");
}
