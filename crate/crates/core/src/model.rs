//! Tables, hypotheses, labeled pairs and datasets, plus the
//! "table as paragraph" flattening used to feed tables to text models.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Three-way NLI label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "E")]
    Entail,
    #[serde(rename = "N")]
    Neutral,
    #[serde(rename = "C")]
    Contradict,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entail, Label::Neutral, Label::Contradict];

    pub fn code(self) -> &'static str {
        match self {
            Label::Entail => "E",
            Label::Neutral => "N",
            Label::Contradict => "C",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Entail => "Entail",
            Label::Neutral => "Neutral",
            Label::Contradict => "Contradict",
        }
    }

    /// Position in [`Label::ALL`].
    pub fn index(self) -> usize {
        match self {
            Label::Entail => 0,
            Label::Neutral => 1,
            Label::Contradict => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    /// Entail <-> Contradict; Neutral has no opposite.
    pub fn opposite(self) -> Option<Label> {
        match self {
            Label::Entail => Some(Label::Contradict),
            Label::Contradict => Some(Label::Entail),
            Label::Neutral => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unrecognised label {0:?}")]
pub struct BadLabel(pub String);

impl FromStr for Label {
    type Err = BadLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "e" | "entail" | "entailed" | "entailment" => Ok(Label::Entail),
            "n" | "neutral" => Ok(Label::Neutral),
            "c" | "contradict" | "contradiction" => Ok(Label::Contradict),
            _ => Err(BadLabel(s.to_string())),
        }
    }
}

/// One infobox row: a key with one or more values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Row {
    pub key: String,
    pub values: Vec<String>,
}

impl Row {
    pub fn new<K: Into<String>, V: Into<String>>(key: K, values: impl IntoIterator<Item = V>) -> Self {
        Row {
            key: key.into(),
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_multi_value(&self) -> bool {
        self.values.len() >= 2
    }
}

/// A titled infobox premise.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Table {
    pub table_id: String,
    pub title: String,
    #[serde(default)]
    pub category: String,
    pub rows: Vec<Row>,
}

impl Table {
    /// Builds a table and rejects it if any invariant is broken.
    pub fn new(
        table_id: impl Into<String>,
        title: impl Into<String>,
        category: impl Into<String>,
        rows: Vec<Row>,
    ) -> Result<Self, InvalidTable> {
        let table = Table {
            table_id: table_id.into(),
            title: title.into(),
            category: category.into(),
            rows,
        };
        match table.violations().into_iter().next() {
            None => Ok(table),
            Some(v) => Err(InvalidTable(v)),
        }
    }

    pub fn row(&self, key: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.key == key)
    }

    pub fn position(&self, key: &str) -> Option<usize> {
        self.rows.iter().position(|r| r.key == key)
    }

    pub fn has_key(&self, key: &str) -> bool {
        self.row(key).is_some()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.key.as_str())
    }

    pub fn violations(&self) -> Vec<Violation> {
        let id = &self.table_id;
        let mut out = Vec::new();
        if self.title.trim().is_empty() {
            out.push(Violation::EmptyTitle { table_id: id.clone() });
        }
        if self.rows.is_empty() {
            out.push(Violation::EmptyTable { table_id: id.clone() });
        }
        let mut seen = HashSet::new();
        for row in &self.rows {
            if row.key.is_empty() {
                out.push(Violation::EmptyKey { table_id: id.clone() });
            } else if row.key.trim() != row.key {
                out.push(Violation::UntrimmedKey {
                    table_id: id.clone(),
                    key: row.key.clone(),
                });
            }
            if !seen.insert(row.key.as_str()) {
                out.push(Violation::DuplicateKey {
                    table_id: id.clone(),
                    key: row.key.clone(),
                });
            }
            if row.values.is_empty() || row.values.iter().any(|v| v.is_empty()) {
                out.push(Violation::EmptyValue {
                    table_id: id.clone(),
                    key: row.key.clone(),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid table: {0}")]
pub struct InvalidTable(pub Violation);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub pair_id: String,
    pub text: String,
    pub gold_label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub table_ref: String,
    pub hypothesis: Hypothesis,
}

impl ExamplePair {
    pub fn pair_id(&self) -> &str {
        &self.hypothesis.pair_id
    }

    pub fn gold(&self) -> Label {
        self.hypothesis.gold_label
    }
}

/// One split: its tables by id and its pairs in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub split_name: String,
    pub tables: BTreeMap<String, Table>,
    pub pairs: Vec<ExamplePair>,
}

impl Dataset {
    pub fn new(split_name: impl Into<String>) -> Self {
        Dataset {
            split_name: split_name.into(),
            ..Default::default()
        }
    }

    pub fn table_for(&self, pair: &ExamplePair) -> Option<&Table> {
        self.tables.get(&pair.table_ref)
    }

    pub fn pair(&self, pair_id: &str) -> Option<&ExamplePair> {
        self.pairs.iter().find(|p| p.pair_id() == pair_id)
    }

    pub fn pair_index(&self) -> BTreeMap<&str, &ExamplePair> {
        self.pairs.iter().map(|p| (p.pair_id(), p)).collect()
    }
}

/// A broken dataset invariant, naming the offending id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule")]
pub enum Violation {
    MissingTable { pair_id: String, table_id: String },
    DuplicatePairId { pair_id: String },
    DuplicateKey { table_id: String, key: String },
    EmptyTable { table_id: String },
    EmptyTitle { table_id: String },
    EmptyKey { table_id: String },
    UntrimmedKey { table_id: String, key: String },
    EmptyValue { table_id: String, key: String },
    TableIdMismatch { map_key: String, table_id: String },
    EmptyHypothesis { pair_id: String },
    MultilineHypothesis { pair_id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingTable { pair_id, table_id } => {
                write!(f, "pair {pair_id}: references missing table {table_id}")
            }
            Violation::DuplicatePairId { pair_id } => write!(f, "pair {pair_id}: duplicate pair id"),
            Violation::DuplicateKey { table_id, key } => {
                write!(f, "table {table_id}: key {key:?} appears more than once")
            }
            Violation::EmptyTable { table_id } => write!(f, "table {table_id}: no rows"),
            Violation::EmptyTitle { table_id } => write!(f, "table {table_id}: empty title"),
            Violation::EmptyKey { table_id } => write!(f, "table {table_id}: empty row key"),
            Violation::UntrimmedKey { table_id, key } => {
                write!(f, "table {table_id}: key {key:?} has surrounding whitespace")
            }
            Violation::EmptyValue { table_id, key } => {
                write!(f, "table {table_id}: row {key:?} has an empty value list or value")
            }
            Violation::TableIdMismatch { map_key, table_id } => {
                write!(f, "table {table_id}: stored under id {map_key}")
            }
            Violation::EmptyHypothesis { pair_id } => write!(f, "pair {pair_id}: empty hypothesis"),
            Violation::MultilineHypothesis { pair_id } => {
                write!(f, "pair {pair_id}: hypothesis spans several lines")
            }
        }
    }
}

/// Checks every dataset, table and hypothesis invariant. Empty means valid.
pub fn validate_dataset(ds: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    for (id, table) in &ds.tables {
        if id != &table.table_id {
            out.push(Violation::TableIdMismatch {
                map_key: id.clone(),
                table_id: table.table_id.clone(),
            });
        }
        out.extend(table.violations());
    }
    let mut seen = BTreeSet::new();
    for pair in &ds.pairs {
        let pid = pair.pair_id();
        if !seen.insert(pid) {
            out.push(Violation::DuplicatePairId {
                pair_id: pid.to_string(),
            });
        }
        if !ds.tables.contains_key(&pair.table_ref) {
            out.push(Violation::MissingTable {
                pair_id: pid.to_string(),
                table_id: pair.table_ref.clone(),
            });
        }
        let text = &pair.hypothesis.text;
        if text.trim().is_empty() {
            out.push(Violation::EmptyHypothesis {
                pair_id: pid.to_string(),
            });
        }
        if text.contains('\n') || text.contains('\r') {
            out.push(Violation::MultilineHypothesis {
                pair_id: pid.to_string(),
            });
        }
    }
    out
}

/// How multi-value rows are joined when a table is flattened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlattenConfig {
    /// Placed between all values but the last two.
    pub separator: String,
    /// Placed before the last value.
    pub last_separator: String,
}

impl Default for FlattenConfig {
    fn default() -> Self {
        FlattenConfig {
            separator: ", ".to_string(),
            last_separator: " and ".to_string(),
        }
    }
}

impl FlattenConfig {
    pub fn join(&self, values: &[String]) -> String {
        match values {
            [] => String::new(),
            [only] => only.clone(),
            [head @ .., last] => {
                let mut s = head.join(&self.separator);
                s.push_str(&self.last_separator);
                s.push_str(last);
                s
            }
        }
    }
}

/// Renders a table as one "The <key> of <title> is <values>." sentence per row.
pub fn flatten_table(table: &Table) -> String {
    flatten_table_with(table, &FlattenConfig::default())
}

pub fn flatten_table_with(table: &Table, cfg: &FlattenConfig) -> String {
    table
        .rows
        .iter()
        .map(|row| format!("The {} of {} is {}.", row.key, table.title, cfg.join(&row.values)))
        .collect::<Vec<_>>()
        .join(" ")
}
