//! Long-format CSV in and out, config loading and atomic file writes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dlmm_core::data::natural_cmp;
use dlmm_core::{Factor, LongDataset, Observation, PseudoUnitAssignment, SimulationConfig};
use serde::Serialize;

use crate::error::{Error, Result};

/// Column names of a long-format file.
///
/// `obs` and `rep` may be absent from the file: missing `obs` identifiers
/// are synthesized and `rep` defaults to 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub eu: String,
    pub obs: String,
    pub time: String,
    pub rep: String,
    pub y: String,
    /// Factor columns. `None` takes every column not named above.
    pub factors: Option<Vec<String>>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            eu: "eu".into(),
            obs: "obs".into(),
            time: "time".into(),
            rep: "rep".into(),
            y: "y".into(),
            factors: None,
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

fn required(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    column(headers, name).ok_or_else(|| Error::MissingColumn {
        path: path.to_path_buf(),
        column: name.to_string(),
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.record() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Malformed {
            path: path.to_path_buf(),
            row,
            message: format!("{other:?}"),
        },
    }
}

struct RawRow {
    eu: String,
    obs: Option<String>,
    time: u32,
    rep: u32,
    levels: Vec<String>,
    y: f64,
}

/// Reads a long-format CSV file.
///
/// Row numbers in errors count data rows from 1, header excluded. With
/// `destructive`, a unit measured at two different times is an error.
pub fn load_csv(path: &Path, schema: &Schema, destructive: bool) -> Result<LongDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(path, &text, schema, destructive)
}

/// [`load_csv`] on text already in memory; `path` only labels errors.
pub fn parse_csv(path: &Path, text: &str, schema: &Schema, destructive: bool) -> Result<LongDataset> {
    let empty = || Error::EmptyFile { path: path.to_path_buf() };
    if text.trim().is_empty() {
        return Err(empty());
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let eu = required(path, &headers, &schema.eu)?;
    let time = required(path, &headers, &schema.time)?;
    let y = required(path, &headers, &schema.y)?;
    let obs = column(&headers, &schema.obs);
    let rep = column(&headers, &schema.rep);
    let factor_names: Vec<String> = match &schema.factors {
        Some(names) => names.clone(),
        None => {
            let reserved = [&schema.eu, &schema.obs, &schema.time, &schema.rep, &schema.y];
            headers
                .iter()
                .filter(|h| !reserved.iter().any(|r| r.as_str() == *h))
                .map(str::to_string)
                .collect()
        }
    };
    let factor_cols = factor_names
        .iter()
        .map(|f| required(path, &headers, f))
        .collect::<Result<Vec<_>>>()?;

    let parse_err = |row: usize, col: usize, value: &str| Error::Parse {
        path: path.to_path_buf(),
        row,
        column: headers[col].to_string(),
        value: value.to_string(),
    };
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let time_v = field(time)
            .parse::<u32>()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| parse_err(row, time, field(time)))?;
        let rep_v = match rep {
            Some(c) => field(c).parse::<u32>().map_err(|_| parse_err(row, c, field(c)))?,
            None => 1,
        };
        let y_v = field(y)
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_err(row, y, field(y)))?;
        if field(eu).is_empty() {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                row,
                message: "empty eu identifier".into(),
            });
        }
        rows.push(RawRow {
            eu: field(eu).to_string(),
            obs: obs.map(field).filter(|s| !s.is_empty()).map(str::to_string),
            time: time_v,
            rep: rep_v,
            levels: factor_cols.iter().map(|&c| field(c).to_string()).collect(),
            y: y_v,
        });
    }
    if rows.is_empty() {
        return Err(empty());
    }
    check_keys(path, &rows, destructive)?;

    let factors: Vec<Factor> = factor_names
        .iter()
        .enumerate()
        .map(|(f, name)| {
            let mut levels: Vec<String> = rows
                .iter()
                .map(|r| r.levels[f].clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            levels.sort_by(|a, b| natural_cmp(a, b));
            Factor::new(name.clone(), levels)
        })
        .collect();
    let lookup: Vec<HashMap<&str, usize>> = factors
        .iter()
        .map(|f| f.levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect())
        .collect();
    let observations = rows
        .iter()
        .map(|r| Observation {
            eu: r.eu.clone(),
            obs: r.obs.clone(),
            time: r.time,
            rep: r.rep,
            levels: r.levels.iter().zip(&lookup).map(|(l, m)| m[l.as_str()]).collect(),
            y: r.y,
        })
        .collect();
    Ok(LongDataset::new(factors, observations)?)
}

fn check_keys(path: &Path, rows: &[RawRow], destructive: bool) -> Result<()> {
    let mut keys = BTreeSet::new();
    let mut times: BTreeMap<(&str, &str), u32> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let Some(obs) = r.obs.as_deref() else { continue };
        if !keys.insert((r.eu.as_str(), obs, r.time, r.rep)) {
            return Err(Error::DuplicateKey {
                path: path.to_path_buf(),
                row: i + 1,
            });
        }
        if destructive {
            if let Some(prev) = times.insert((r.eu.as_str(), obs), r.time) {
                if prev != r.time {
                    return Err(Error::ObservedTwice {
                        path: path.to_path_buf(),
                        row: i + 1,
                        eu: r.eu.clone(),
                        obs: obs.to_string(),
                    });
                }
            }
        }
    }
    Ok(())
}

fn to_string(writer: csv::Writer<Vec<u8>>) -> String {
    let bytes = writer.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("csv output is UTF-8")
}

/// Canonical long-format export; responses use the shortest representation
/// that reads back to the same `f64`.
pub fn dataset_csv(ds: &LongDataset) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["eu", "obs", "time", "rep"];
    header.extend(ds.factors().iter().map(|f| f.name.as_str()));
    header.push("y");
    w.write_record(&header).expect("in-memory write");
    for o in ds.observations() {
        let mut rec = vec![o.eu.clone(), o.obs_id().to_string(), o.time.to_string(), o.rep.to_string()];
        rec.extend(ds.factors().iter().zip(&o.levels).map(|(f, &l)| f.levels[l].clone()));
        rec.push(o.y.to_string());
        w.write_record(&rec).expect("in-memory write");
    }
    to_string(w)
}

/// `eu,time,obs,group` for every observation, in dataset order.
pub fn assignment_csv(ds: &LongDataset, pa: &PseudoUnitAssignment) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["eu", "time", "obs", "group"]).expect("in-memory write");
    for (o, g) in ds.observations().iter().zip(&pa.groups) {
        w.write_record([o.eu.as_str(), &o.time.to_string(), o.obs_id(), &g.to_string()])
            .expect("in-memory write");
    }
    to_string(w)
}

/// Serializes rows with a header taken from the field names.
pub fn records_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    to_string(w)
}

pub fn load_config(path: &Path) -> Result<SimulationConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: SimulationConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(fs::Permissions::from_mode(0o644))
            .map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
