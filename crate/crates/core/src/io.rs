//! Dataset import and export.
//!
//! Two layouts are understood. The canonical one is a directory of
//! `{"table_id", "title", "category", "rows": [{"key", "values"}]}` JSON files
//! plus a `pairs.jsonl` of `{"pair_id", "table_id", "hypothesis", "label"}`.
//! The InfoTabS-native one is a directory of `key -> [values]` JSON maps
//! (with a `title` entry, file stem = table id) plus a tab-separated pairs file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{Dataset, ExamplePair, Hypothesis, Label, Row, Table, Violation};

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("table {table_id}: key {key:?} appears twice")]
    DuplicateKey { table_id: String, key: String },
    #[error("pair {pair_id}: table {table_id} not found")]
    MissingTable { pair_id: String, table_id: String },
    #[error("{location}: unrecognised label {label:?}")]
    BadLabel { location: String, label: String },
    #[error("table {0}: no rows")]
    EmptyTable(String),
    #[error("pair id {0} appears twice")]
    DuplicatePairId(String),
    #[error("{location}: {message}")]
    Schema { location: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ImportError {
    pub(crate) fn schema(location: impl fmt::Display, message: impl Into<String>) -> Self {
        ImportError::Schema {
            location: location.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ImportError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn from_violation(v: Violation, location: &str) -> Self {
        match v {
            Violation::DuplicateKey { table_id, key } => ImportError::DuplicateKey { table_id, key },
            Violation::EmptyTable { table_id } => ImportError::EmptyTable(table_id),
            other => ImportError::schema(location, other.to_string()),
        }
    }
}

/// JSON object that keeps entry order and duplicate keys.
struct OrderedObject(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for OrderedObject {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = OrderedObject;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<OrderedObject, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Value>()? {
                    entries.push((k, v));
                }
                Ok(OrderedObject(entries))
            }
        }
        deserializer.deserialize_map(V)
    }
}

fn value_strings(v: &Value, location: &str) -> Result<Vec<String>, ImportError> {
    match v {
        Value::String(s) => Ok(vec![s.clone()]),
        Value::Array(items) => items
            .iter()
            .map(|item| match item {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                _ => Err(ImportError::schema(location, "row values must be strings")),
            })
            .collect(),
        Value::Number(n) => Ok(vec![n.to_string()]),
        _ => Err(ImportError::schema(location, "row values must be strings")),
    }
}

fn clean_values(values: Vec<String>) -> Vec<String> {
    values
        .into_iter()
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect()
}

/// Parses one table file in either layout. `fallback_id` is used when the
/// file carries no `table_id` of its own.
pub fn parse_table(text: &str, fallback_id: &str) -> Result<Table, ImportError> {
    let obj: OrderedObject = serde_json::from_str(text).map_err(|e| ImportError::schema(fallback_id, e.to_string()))?;
    let is_canonical = obj.0.iter().any(|(k, v)| k == "rows" && v.is_array());
    let table = if is_canonical {
        let value = Value::Object(obj.0.into_iter().collect());
        let mut table: Table =
            serde_json::from_value(value).map_err(|e| ImportError::schema(fallback_id, e.to_string()))?;
        if table.table_id.is_empty() {
            table.table_id = fallback_id.to_string();
        }
        table
    } else {
        let mut title = None;
        let mut category = String::new();
        let mut rows = Vec::new();
        for (key, value) in obj.0 {
            let location = format!("{fallback_id}/{key}");
            match key.as_str() {
                "title" => {
                    title = value_strings(&value, &location)?.into_iter().next();
                }
                "category" => {
                    category = value_strings(&value, &location)?.join(" ");
                }
                _ => {
                    let values = clean_values(value_strings(&value, &location)?);
                    if values.is_empty() {
                        continue;
                    }
                    rows.push(Row {
                        key: key.trim().to_string(),
                        values,
                    });
                }
            }
        }
        let title = title.ok_or_else(|| ImportError::schema(fallback_id, "table has no title"))?;
        Table {
            table_id: fallback_id.to_string(),
            title: title.trim().to_string(),
            category,
            rows,
        }
    };
    if let Some(v) = table.violations().into_iter().next() {
        return Err(ImportError::from_violation(v, fallback_id));
    }
    Ok(table)
}

fn read_to_string(path: &Path) -> Result<String, ImportError> {
    fs::read_to_string(path).map_err(|e| ImportError::io(path, e))
}

/// Reads every `*.json` table in `dir`, in file-name order.
pub fn load_tables(dir: &Path) -> Result<BTreeMap<String, Table>, ImportError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ImportError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut tables = BTreeMap::new();
    for path in paths {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let table = parse_table(&read_to_string(&path)?, &stem)?;
        if tables.contains_key(&table.table_id) {
            return Err(ImportError::schema(
                path.display(),
                format!("table id {} defined twice", table.table_id),
            ));
        }
        tables.insert(table.table_id.clone(), table);
    }
    Ok(tables)
}

#[derive(Debug, Serialize, Deserialize)]
struct PairLine {
    pair_id: String,
    table_id: String,
    hypothesis: String,
    label: String,
}

fn parse_label(s: &str, location: String) -> Result<Label, ImportError> {
    s.parse().map_err(|_| ImportError::BadLabel {
        location,
        label: s.to_string(),
    })
}

fn load_pairs_jsonl(path: &Path) -> Result<Vec<ExamplePair>, ImportError> {
    let file = fs::File::open(path).map_err(|e| ImportError::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ImportError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{}:{}", path.display(), i + 1);
        let rec: PairLine = serde_json::from_str(&line).map_err(|e| ImportError::schema(&location, e.to_string()))?;
        let gold_label = parse_label(&rec.label, location)?;
        pairs.push(ExamplePair {
            table_ref: rec.table_id,
            hypothesis: Hypothesis {
                pair_id: rec.pair_id,
                text: rec.hypothesis.trim().to_string(),
                gold_label,
            },
        });
    }
    Ok(pairs)
}

fn load_pairs_tsv(path: &Path, split: &str) -> Result<Vec<ExamplePair>, ImportError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| ImportError::schema(path.display(), e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| ImportError::schema(path.display(), e.to_string()))?
        .clone();
    let col = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
    };
    let missing = |c: &str| ImportError::schema(path.display(), format!("missing column {c}"));
    let table_col = col(&["table_id", "tableid"]).ok_or_else(|| missing("table_id"))?;
    let hyp_col = col(&["hypothesis"]).ok_or_else(|| missing("hypothesis"))?;
    let label_col = col(&["label"]).ok_or_else(|| missing("label"))?;
    let id_col = col(&["pair_id", "index", "id"]);

    let mut pairs = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let location = format!("{}:{}", path.display(), i + 2);
        let rec = rec.map_err(|e| ImportError::schema(&location, e.to_string()))?;
        let field = |c: usize| {
            rec.get(c)
                .map(str::trim)
                .ok_or_else(|| ImportError::schema(&location, "short row"))
        };
        let pair_id = match id_col {
            Some(c) => field(c)?.to_string(),
            None => format!("{split}-{i}"),
        };
        let gold_label = parse_label(field(label_col)?, location.clone())?;
        pairs.push(ExamplePair {
            table_ref: field(table_col)?.to_string(),
            hypothesis: Hypothesis {
                pair_id,
                text: field(hyp_col)?.to_string(),
                gold_label,
            },
        });
    }
    Ok(pairs)
}

/// Loads a split from a table directory and a pairs file (`.jsonl` canonical,
/// anything else tab-separated) and checks cross references.
pub fn import_infotabs(table_dir: &Path, pairs_file: &Path, split_name: &str) -> Result<Dataset, ImportError> {
    let tables = load_tables(table_dir)?;
    let is_jsonl = pairs_file.extension().is_some_and(|x| x == "jsonl");
    let pairs = if is_jsonl {
        load_pairs_jsonl(pairs_file)?
    } else {
        load_pairs_tsv(pairs_file, split_name)?
    };
    let mut seen = std::collections::HashSet::new();
    for pair in &pairs {
        if !seen.insert(pair.pair_id().to_string()) {
            return Err(ImportError::DuplicatePairId(pair.pair_id().to_string()));
        }
        if !tables.contains_key(&pair.table_ref) {
            return Err(ImportError::MissingTable {
                pair_id: pair.pair_id().to_string(),
                table_id: pair.table_ref.clone(),
            });
        }
        if pair.hypothesis.text.is_empty() || pair.hypothesis.text.contains('\n') {
            return Err(ImportError::schema(
                pair.pair_id(),
                "hypothesis must be one non-empty line",
            ));
        }
    }
    Ok(Dataset {
        split_name: split_name.to_string(),
        tables,
        pairs,
    })
}

/// Loads a canonical split directory (`<dir>/tables/*.json`, `<dir>/pairs.jsonl`).
pub fn load_split(dir: &Path, split_name: &str) -> Result<Dataset, ImportError> {
    import_infotabs(&dir.join("tables"), &dir.join("pairs.jsonl"), split_name)
}

/// Writes `ds` in the canonical layout under `dir`; `load_split` reads it back.
pub fn export_dataset(ds: &Dataset, dir: &Path) -> Result<(), ImportError> {
    let table_dir = dir.join("tables");
    fs::create_dir_all(&table_dir).map_err(|e| ImportError::io(&table_dir, e))?;
    for table in ds.tables.values() {
        let path = table_dir.join(format!("{}.json", sanitize_file_stem(&table.table_id)));
        let body = serde_json::to_string_pretty(table).expect("tables serialize");
        fs::write(&path, body + "\n").map_err(|e| ImportError::io(&path, e))?;
    }
    let path = dir.join("pairs.jsonl");
    let mut out = fs::File::create(&path).map_err(|e| ImportError::io(&path, e))?;
    for pair in &ds.pairs {
        let line = PairLine {
            pair_id: pair.pair_id().to_string(),
            table_id: pair.table_ref.clone(),
            hypothesis: pair.hypothesis.text.clone(),
            label: pair.gold().code().to_string(),
        };
        let mut s = serde_json::to_string(&line).expect("pairs serialize");
        s.push('\n');
        out.write_all(s.as_bytes()).map_err(|e| ImportError::io(&path, e))?;
    }
    Ok(())
}

fn sanitize_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Reads a JSON-lines file into typed records, reporting the failing line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ImportError> {
    let file = fs::File::open(path).map_err(|e| ImportError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ImportError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| ImportError::schema(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes records as JSON lines; stable field order comes from the types.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut buf = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut buf, rec).map_err(std::io::Error::other)?;
        buf.push(b'\n');
    }
    fs::write(path, buf)
}
