//! Synthetic dataset export with a distribution summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::HarnessError;
use crate::datastore::{generate_synthetic, save_dir, Dataset, GeneratorConfig};

pub const STATS_FILE: &str = "stats.txt";

/// Flat `key = value` summary: table sizes, interactions per user, and
/// interaction counts per target category, per GID and per action type.
pub fn dataset_stats(ds: &Dataset) -> String {
    let category: BTreeMap<u64, u64> = ds.pois.iter().map(|p| (p.poi_id, p.cid)).collect();
    let mut per_user: BTreeMap<u64, usize> = BTreeMap::new();
    let mut per_cat: BTreeMap<u64, usize> = BTreeMap::new();
    let mut per_gid: BTreeMap<u64, usize> = BTreeMap::new();
    let mut per_action: BTreeMap<u64, usize> = BTreeMap::new();
    let mut with_via = 0usize;
    let mut missing_mode = 0usize;
    for it in &ds.interactions {
        *per_user.entry(it.user_id).or_default() += 1;
        if let Some(&c) = category.get(&it.target_poi_id) {
            *per_cat.entry(c).or_default() += 1;
        }
        *per_gid.entry(it.gid).or_default() += 1;
        *per_action.entry(it.action_type).or_default() += 1;
        with_via += usize::from(it.via_poi_id.is_some());
        missing_mode += usize::from(it.travel_mode.is_none());
    }
    let counts: Vec<usize> = ds.users.iter().map(|u| per_user.get(&u.user_id).copied().unwrap_or(0)).collect();
    let mean = if counts.is_empty() {
        0.0
    } else {
        counts.iter().sum::<usize>() as f64 / counts.len() as f64
    };
    let mut s = String::new();
    let _ = writeln!(s, "users = {}", ds.users.len());
    let _ = writeln!(s, "pois = {}", ds.pois.len());
    let _ = writeln!(s, "interactions = {}", ds.interactions.len());
    let _ = writeln!(s, "interactions_per_user.mean = {mean:.4}");
    let _ = writeln!(s, "interactions_per_user.min = {}", counts.iter().min().unwrap_or(&0));
    let _ = writeln!(s, "interactions_per_user.max = {}", counts.iter().max().unwrap_or(&0));
    let _ = writeln!(s, "interactions_with_via = {with_via}");
    let _ = writeln!(s, "interactions_missing_mode = {missing_mode}");
    for (prefix, map) in [("category", &per_cat), ("gid", &per_gid), ("action", &per_action)] {
        for (k, v) in map {
            let _ = writeln!(s, "{prefix}.{k} = {v}");
        }
    }
    s
}

/// Generates a dataset and writes the three tables plus `stats.txt` into
/// `dir`.
pub fn generate_to_dir(cfg: &GeneratorConfig, seed: u64, dir: &Path) -> Result<Dataset, HarnessError> {
    let ds = generate_synthetic(cfg, seed)?;
    save_dir(&ds, dir)?;
    let path = dir.join(STATS_FILE);
    fs::write(&path, dataset_stats(&ds)).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_report_user_count_and_sections() {
        let cfg = GeneratorConfig {
            users: 30,
            pois: 60,
            gids: 3,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg, 1).unwrap();
        let s = dataset_stats(&ds);
        assert!(s.starts_with("users = 30\n"));
        assert!(s.contains("\ncategory.") && s.contains("\ngid.") && s.contains("\naction."));
        let gid_total: usize = s
            .lines()
            .filter(|l| l.starts_with("gid."))
            .map(|l| l.split(" = ").nth(1).unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(gid_total, ds.interactions.len());
    }
}
