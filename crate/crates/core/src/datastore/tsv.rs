//! Tab-separated storage of the three tables. Columns follow the published
//! table order; missing optional values are empty fields.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::records::{Dataset, InteractionRecord, PoiRecord, UserRecord, PROFILE_FEATURES};
use super::DataError;

pub const POIS_FILE: &str = "pois.tsv";
pub const USERS_FILE: &str = "users.tsv";
pub const INTERACTIONS_FILE: &str = "interactions.tsv";

pub const POI_HEADER: [&str; 6] = ["poi_id", "nscore", "gid", "cid", "arid", "coordinates"];
pub const USER_HEADER: [&str; 7] = ["user_id", "f1", "f2", "f3", "f4", "f5", "f6"];
pub const INTERACTION_HEADER: [&str; 9] = [
    "user_id",
    "timestamp",
    "action_type",
    "target_poi_id",
    "gid",
    "arid",
    "weather",
    "travel_mode",
    "via_poi_id",
];

struct Row<'a> {
    table: &'static str,
    row: usize,
    header: &'a [&'static str],
    fields: Vec<&'a str>,
}

impl<'a> Row<'a> {
    fn field(&self, i: usize) -> &'a str {
        self.fields[i]
    }

    fn err(&self, i: usize, message: String) -> DataError {
        DataError::Parse {
            table: self.table,
            row: self.row,
            column: self.header[i],
            message,
        }
    }

    fn int(&self, i: usize) -> Result<u64, DataError> {
        let f = self.field(i);
        f.parse().map_err(|_| self.err(i, format!("`{f}` is not a non-negative integer")))
    }

    fn opt_int(&self, i: usize) -> Result<Option<u64>, DataError> {
        if self.field(i).is_empty() {
            Ok(None)
        } else {
            self.int(i).map(Some)
        }
    }

    fn signed(&self, i: usize) -> Result<i64, DataError> {
        let f = self.field(i);
        f.parse().map_err(|_| self.err(i, format!("`{f}` is not an integer")))
    }

    fn real(&self, i: usize, s: &str) -> Result<f64, DataError> {
        match s.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(i, format!("`{s}` is not a finite number"))),
        }
    }
}

fn rows<'a>(
    table: &'static str,
    text: &'a str,
    header: &'a [&'static str],
) -> Result<Vec<Row<'a>>, DataError> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    let Some((head, body)) = lines.split_first() else {
        return Err(DataError::Header {
            table,
            expected: header.join("\t"),
            found: String::new(),
        });
    };
    let found: Vec<&str> = head.split('\t').collect();
    if found != header {
        return Err(DataError::Header {
            table,
            expected: header.join("\t"),
            found: head.to_string(),
        });
    }
    body.iter()
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != header.len() {
                return Err(DataError::Parse {
                    table,
                    row: i + 1,
                    column: "*",
                    message: format!("expected {} fields, found {}", header.len(), fields.len()),
                });
            }
            Ok(Row {
                table,
                row: i + 1,
                header,
                fields,
            })
        })
        .collect()
}

pub fn parse_pois(text: &str) -> Result<Vec<PoiRecord>, DataError> {
    rows("pois", text, &POI_HEADER)?
        .iter()
        .map(|r| {
            let coords = r.field(5);
            let (x, y) = coords
                .split_once(',')
                .ok_or_else(|| r.err(5, format!("`{coords}` is not an `x,y` pair")))?;
            Ok(PoiRecord {
                poi_id: r.int(0)?,
                nscore: r.real(1, r.field(1))?,
                gid: r.int(2)?,
                cid: r.int(3)?,
                arid: r.int(4)?,
                coordinates: (r.real(5, x)?, r.real(5, y)?),
            })
        })
        .collect()
}

pub fn parse_users(text: &str) -> Result<Vec<UserRecord>, DataError> {
    rows("users", text, &USER_HEADER)?
        .iter()
        .map(|r| {
            let mut profile = [None; PROFILE_FEATURES];
            for (k, slot) in profile.iter_mut().enumerate() {
                *slot = r.opt_int(k + 1)?;
            }
            Ok(UserRecord {
                user_id: r.int(0)?,
                profile,
            })
        })
        .collect()
}

pub fn parse_interactions(text: &str) -> Result<Vec<InteractionRecord>, DataError> {
    rows("interactions", text, &INTERACTION_HEADER)?
        .iter()
        .map(|r| {
            Ok(InteractionRecord {
                user_id: r.int(0)?,
                timestamp: r.signed(1)?,
                action_type: r.int(2)?,
                target_poi_id: r.int(3)?,
                gid: r.int(4)?,
                arid: r.int(5)?,
                weather: r.int(6)?,
                travel_mode: r.opt_int(7)?,
                via_poi_id: r.opt_int(8)?,
            })
        })
        .collect()
}

fn opt(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_pois(pois: &[PoiRecord]) -> String {
    let mut s = POI_HEADER.join("\t");
    s.push('\n');
    for p in pois {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{},{}",
            p.poi_id, p.nscore, p.gid, p.cid, p.arid, p.coordinates.0, p.coordinates.1
        );
    }
    s
}

pub fn format_users(users: &[UserRecord]) -> String {
    let mut s = USER_HEADER.join("\t");
    s.push('\n');
    for u in users {
        let fields: Vec<String> = u.profile.iter().map(|f| opt(*f)).collect();
        let _ = writeln!(s, "{}\t{}", u.user_id, fields.join("\t"));
    }
    s
}

pub fn format_interactions(interactions: &[InteractionRecord]) -> String {
    let mut s = INTERACTION_HEADER.join("\t");
    s.push('\n');
    for it in interactions {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            it.user_id,
            it.timestamp,
            it.action_type,
            it.target_poi_id,
            it.gid,
            it.arid,
            it.weather,
            opt(it.travel_mode),
            opt(it.via_poi_id)
        );
    }
    s
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: PathBuf, text: String) -> Result<(), DataError> {
    fs::write(&path, text).map_err(|source| DataError::Io { path, source })
}

/// Reads and validates the three tables.
pub fn load_store_tables(pois: &Path, users: &Path, interactions: &Path) -> Result<Dataset, DataError> {
    let ds = Dataset {
        pois: parse_pois(&read(pois)?)?,
        users: parse_users(&read(users)?)?,
        interactions: parse_interactions(&read(interactions)?)?,
    };
    ds.validate()?;
    Ok(ds)
}

/// Loads `pois.tsv`, `users.tsv` and `interactions.tsv` from `dir`.
pub fn load_dir(dir: &Path) -> Result<Dataset, DataError> {
    load_store_tables(&dir.join(POIS_FILE), &dir.join(USERS_FILE), &dir.join(INTERACTIONS_FILE))
}

/// Writes the three tables into `dir`, creating it if needed.
pub fn save_dir(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write(dir.join(POIS_FILE), format_pois(&ds.pois))?;
    write(dir.join(USERS_FILE), format_users(&ds.users))?;
    write(dir.join(INTERACTIONS_FILE), format_interactions(&ds.interactions))
}
