//! Raw tables, TSV storage, the synthetic log generator, temporal splitting
//! and negative sampling.

mod negatives;
mod records;
mod split;
mod synthetic;
mod tsv;

use std::path::PathBuf;

pub use negatives::{sample_negatives, HARD_NEGATIVES, UNIFORM_NEGATIVES};
pub use records::{
    Dataset, InteractionRecord, PoiCorpus, PoiRecord, UserHistory, UserRecord, PROFILE_FEATURES,
};
pub use split::{temporal_split, DatasetSplit, UserSplit};
pub use synthetic::{generate_synthetic, GeneratorConfig, DAY_MS, EPOCH_MS, HALF_HOUR_MS};
pub use tsv::{
    format_interactions, format_pois, format_users, load_dir, load_store_tables, parse_interactions, parse_pois,
    parse_users, save_dir, INTERACTIONS_FILE, POIS_FILE, USERS_FILE,
};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{table}: bad header, expected `{expected}`, found `{found}`")]
    Header {
        table: &'static str,
        expected: String,
        found: String,
    },
    #[error("{table} row {row}, column {column}: {message}")]
    Parse {
        table: &'static str,
        row: usize,
        column: &'static str,
        message: String,
    },
    #[error("{table} row {row}: duplicate id {id}")]
    Duplicate { table: &'static str, row: usize, id: u64 },
    #[error("{table} row {row}: {column} {id} does not resolve")]
    Dangling {
        table: &'static str,
        row: usize,
        column: &'static str,
        id: u64,
    },
    #[error("poi {0} is not in the corpus")]
    UnknownPoi(u64),
    #[error("invalid generator config: {0}")]
    Config(String),
}
