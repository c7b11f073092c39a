//! CSV reading and writing for cohorts and result tables.
//!
//! Cohort files carry `id, group, x1, x2, y1` plus any number of extra
//! columns; every extra column whose non-empty cells all parse as numbers is
//! loaded as a confounder.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use fairdea_core::{Cohort, GroupLabel, PatientRecord};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::ColumnMap;
use crate::error::StageError;

const SCHEMA: [&str; 5] = ["id", "group", "x1", "x2", "y1"];

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> StageError + '_ {
    move |source| StageError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<csv::Writer<File>, StageError> {
    let file = File::create(path).map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<(), StageError> {
    w.flush().map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a file written with the standard column names.
pub fn read_cohort(path: &Path, groups: &[GroupLabel]) -> Result<Cohort, StageError> {
    read_cohort_mapped(path, groups, &ColumnMap::default())
}

pub fn read_cohort_mapped(
    path: &Path,
    groups: &[GroupLabel],
    columns: &ColumnMap,
) -> Result<Cohort, StageError> {
    let file = File::open(path).map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers().map_err(csv_err(path))?.clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| StageError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let schema: Vec<usize> = columns
        .names()
        .iter()
        .map(|c| position(c))
        .collect::<Result<_, _>>()?;
    let rows: Vec<csv::StringRecord> = reader
        .records()
        .collect::<Result<_, _>>()
        .map_err(csv_err(path))?;

    let extra: Vec<usize> = (0..headers.len())
        .filter(|c| !schema.contains(c))
        .filter(|&c| {
            rows.iter()
                .map(|r| r.get(c).unwrap_or(""))
                .all(|v| v.is_empty() || v.parse::<f64>().is_ok())
        })
        .collect();

    let parse = |row: usize, col: usize, value: &str| {
        value.parse::<f64>().map_err(|_| StageError::Parse {
            path: path.to_path_buf(),
            row,
            column: headers[col].to_string(),
            value: value.to_string(),
        })
    };
    let mut records = Vec::with_capacity(rows.len());
    for (row, r) in rows.iter().enumerate() {
        let cell = |c: usize| r.get(c).unwrap_or("");
        let group = cell(schema[1]);
        let label = groups
            .iter()
            .find(|g| g.as_str() == group)
            .cloned()
            .ok_or_else(|| StageError::UnknownGroup {
                path: path.to_path_buf(),
                row,
                group: group.to_string(),
            })?;
        let mut confounders = BTreeMap::new();
        for &c in &extra {
            if !cell(c).is_empty() {
                confounders.insert(headers[c].to_string(), parse(row, c, cell(c))?);
            }
        }
        records.push(PatientRecord {
            id: cell(schema[0]).to_string(),
            group: label,
            x1: parse(row, schema[2], cell(schema[2]))?,
            x2: parse(row, schema[3], cell(schema[3]))?,
            y1: parse(row, schema[4], cell(schema[4]))?,
            confounders,
        });
    }
    Ok(Cohort::new(records, groups.to_vec())?)
}

/// Writes the cohort followed by `extra` columns, one value per record.
pub fn write_cohort(
    path: &Path,
    cohort: &Cohort,
    extra: &[(&str, &[f64])],
) -> Result<(), StageError> {
    let names: BTreeSet<&str> = cohort
        .records()
        .iter()
        .flat_map(|r| r.confounders.keys().map(String::as_str))
        .collect();
    let mut w = create(path)?;
    let header: Vec<&str> = SCHEMA
        .iter()
        .copied()
        .chain(names.iter().copied())
        .chain(extra.iter().map(|(n, _)| *n))
        .collect();
    w.write_record(&header).map_err(csv_err(path))?;
    for (i, r) in cohort.records().iter().enumerate() {
        let mut row = vec![
            r.id.clone(),
            r.group.to_string(),
            r.x1.to_string(),
            r.x2.to_string(),
            r.y1.to_string(),
        ];
        row.extend(
            names
                .iter()
                .map(|n| r.confounder(n).map(|v| v.to_string()).unwrap_or_default()),
        );
        row.extend(extra.iter().map(|(_, col)| col[i].to_string()));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    finish(w, path)
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), StageError> {
    let mut w = create(path)?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    finish(w, path)
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StageError> {
    let file = File::open(path).map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(csv_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StageError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| StageError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|source| StageError::Io {
            path: path.to_path_buf(),
            source,
        })
}
