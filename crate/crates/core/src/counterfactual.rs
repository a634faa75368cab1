//! Counterfactual premises: move a pair's relevant rows into another table
//! of the same category and rename the title in the hypothesis, or retitle
//! the source table when no relevant rows are known. Manually built
//! label-flipped sets are imported as-is.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::AggregatedRelevance;
use crate::hypothesis::find_mentions;
use crate::io::ImportError;
use crate::model::{flatten_table_with, Dataset, ExamplePair, FlattenConfig, Label, Table};
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CounterfactualIntent {
    Preserve,
    FlipImported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Transplant,
    SwapTitle,
    Imported,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualPair {
    pub cf_id: String,
    pub split: String,
    pub source_pair: String,
    pub source_table_id: String,
    pub donor_table_id: String,
    pub new_table: Table,
    pub new_hypothesis: String,
    pub premise: String,
    pub method: Method,
    pub intent: CounterfactualIntent,
    pub gold: Label,
    pub expected_label: Label,
}

#[derive(Debug, Error)]
pub enum CounterfactualError {
    #[error("no donor table with a different title in category {0:?}")]
    NoDonor(String),
    #[error("pair {0} has no relevant rows")]
    EmptyRelevantSet(String),
    #[error("pair {0} has Neutral gold")]
    NeutralGold(String),
    #[error("pair {0}: hypothesis never names the title")]
    NoTitleMention(String),
    #[error("pair {0}: new label equals gold")]
    LabelNotFlipped(String),
    #[error("pair {0} not in dataset")]
    MissingPair(String),
    #[error("relevance for {pair} names key {key:?} absent from its table")]
    UnknownRelevantKey { pair: String, key: String },
    #[error(transparent)]
    Import(#[from] ImportError),
}

/// Replaces every case-folded, word-bounded mention of `from` with `to`.
pub fn rewrite_title(text: &str, from: &str, to: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (a, b) in find_mentions(text, from) {
        out.push_str(&text[last..a]);
        out.push_str(to);
        last = b;
    }
    out.push_str(&text[last..]);
    out
}

fn eligible_donors<'d>(source: &Table, donors: &[&'d Table]) -> Vec<&'d Table> {
    let title = source.title.to_lowercase();
    donors
        .iter()
        .copied()
        .filter(|d| d.table_id != source.table_id && d.category == source.category)
        .filter(|d| {
            let t = d.title.to_lowercase();
            t != title && find_mentions(&t, &title).is_empty()
        })
        .collect()
}

fn require_polar(pair: &ExamplePair) -> Result<(), CounterfactualError> {
    if pair.gold() == Label::Neutral {
        Err(CounterfactualError::NeutralGold(pair.pair_id().to_string()))
    } else {
        Ok(())
    }
}

fn cf_table(id: String, title: &str, category: &str, rows: Vec<crate::model::Row>) -> Table {
    Table {
        table_id: id,
        title: title.to_string(),
        category: category.to_string(),
        rows,
    }
}

/// Moves the relevant rows of `source` into a seeded-random donor; donor
/// rows with colliding keys are dropped.
pub fn transplant(
    pair: &ExamplePair,
    source: &Table,
    relevant: &AggregatedRelevance,
    donors: &[&Table],
    seed: u64,
) -> Result<CounterfactualPair, CounterfactualError> {
    require_polar(pair)?;
    if relevant.relevant_keys.is_empty() {
        return Err(CounterfactualError::EmptyRelevantSet(pair.pair_id().to_string()));
    }
    if let Some(key) = relevant.relevant_keys.iter().find(|k| !source.has_key(k)) {
        return Err(CounterfactualError::UnknownRelevantKey {
            pair: pair.pair_id().to_string(),
            key: key.clone(),
        });
    }
    let pool = eligible_donors(source, donors);
    let donor = pool
        .choose(&mut rng_from(seed))
        .ok_or_else(|| CounterfactualError::NoDonor(source.category.clone()))?;
    let moved: Vec<_> = source
        .rows
        .iter()
        .filter(|r| relevant.relevant_keys.contains(&r.key))
        .cloned()
        .collect();
    let mut rows: Vec<_> = donor
        .rows
        .iter()
        .filter(|r| !relevant.relevant_keys.contains(&r.key))
        .cloned()
        .collect();
    rows.extend(moved);
    let new_table = cf_table(format!("cf::{}", pair.pair_id()), &donor.title, &donor.category, rows);
    Ok(CounterfactualPair {
        cf_id: format!("{}::transplant", pair.pair_id()),
        split: String::new(),
        source_pair: pair.pair_id().to_string(),
        source_table_id: source.table_id.clone(),
        donor_table_id: donor.table_id.clone(),
        new_hypothesis: rewrite_title(&pair.hypothesis.text, &source.title, &donor.title),
        premise: String::new(),
        new_table,
        method: Method::Transplant,
        intent: CounterfactualIntent::Preserve,
        gold: pair.gold(),
        expected_label: pair.gold(),
    })
}

/// Keeps the source rows, takes a donor's title, and renames the title in
/// the hypothesis to match.
pub fn swap_title(
    pair: &ExamplePair,
    source: &Table,
    donors: &[&Table],
    seed: u64,
) -> Result<CounterfactualPair, CounterfactualError> {
    require_polar(pair)?;
    if find_mentions(&pair.hypothesis.text, &source.title).is_empty() {
        return Err(CounterfactualError::NoTitleMention(pair.pair_id().to_string()));
    }
    let pool = eligible_donors(source, donors);
    let donor = pool
        .choose(&mut rng_from(seed))
        .ok_or_else(|| CounterfactualError::NoDonor(source.category.clone()))?;
    Ok(CounterfactualPair {
        cf_id: format!("{}::swap-title", pair.pair_id()),
        split: String::new(),
        source_pair: pair.pair_id().to_string(),
        source_table_id: source.table_id.clone(),
        donor_table_id: donor.table_id.clone(),
        new_table: cf_table(
            format!("cf::{}", pair.pair_id()),
            &donor.title,
            &source.category,
            source.rows.clone(),
        ),
        new_hypothesis: rewrite_title(&pair.hypothesis.text, &source.title, &donor.title),
        premise: String::new(),
        method: Method::SwapTitle,
        intent: CounterfactualIntent::Preserve,
        gold: pair.gold(),
        expected_label: pair.gold(),
    })
}

/// One line of a manually edited, label-flipped counterfactual set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlippedRecord {
    pub pair_id: String,
    pub edited_table: Table,
    pub new_label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_hypothesis: Option<String>,
}

pub fn import_flipped_records(
    records: Vec<FlippedRecord>,
    ds: &Dataset,
    flatten: &FlattenConfig,
) -> Result<Vec<CounterfactualPair>, CounterfactualError> {
    records
        .into_iter()
        .map(|rec| {
            let pair = ds
                .pair(&rec.pair_id)
                .ok_or_else(|| CounterfactualError::MissingPair(rec.pair_id.clone()))?;
            if rec.new_label == pair.gold() {
                return Err(CounterfactualError::LabelNotFlipped(rec.pair_id.clone()));
            }
            if let Some(v) = rec.edited_table.violations().into_iter().next() {
                return Err(ImportError::Schema {
                    location: format!("flipped record {}", rec.pair_id),
                    message: v.to_string(),
                }
                .into());
            }
            Ok(CounterfactualPair {
                cf_id: format!("{}::flipped", rec.pair_id),
                split: ds.split_name.clone(),
                source_pair: rec.pair_id.clone(),
                source_table_id: pair.table_ref.clone(),
                donor_table_id: rec.edited_table.table_id.clone(),
                premise: flatten_table_with(&rec.edited_table, flatten),
                new_table: rec.edited_table,
                new_hypothesis: rec.new_hypothesis.unwrap_or_else(|| pair.hypothesis.text.clone()),
                method: Method::Imported,
                intent: CounterfactualIntent::FlipImported,
                gold: pair.gold(),
                expected_label: rec.new_label,
            })
        })
        .collect()
}

pub fn import_flipped(
    path: &Path,
    ds: &Dataset,
    flatten: &FlattenConfig,
) -> Result<Vec<CounterfactualPair>, CounterfactualError> {
    import_flipped_records(crate::io::read_jsonl(path)?, ds, flatten)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedCounterfactual {
    pub pair_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualSet {
    pub pairs: Vec<CounterfactualPair>,
    pub skipped: Vec<SkippedCounterfactual>,
}

/// Label-preserving counterfactuals for every Entail/Contradict pair:
/// transplant when relevant rows are known, title swap otherwise.
pub fn generate_counterfactuals(
    ds: &Dataset,
    relevance: Option<&BTreeMap<String, AggregatedRelevance>>,
    flatten: &FlattenConfig,
    run_seed: u64,
) -> CounterfactualSet {
    let donors: Vec<&Table> = ds.tables.values().collect();
    let mut set = CounterfactualSet::default();
    for pair in ds.pairs.iter().filter(|p| p.gold() != Label::Neutral) {
        let Some(source) = ds.table_for(pair) else { continue };
        let seed = derive_seed(run_seed, &[pair.pair_id(), "counterfactual"]);
        let outcome = match relevance.and_then(|r| r.get(pair.pair_id())) {
            Some(rel) if !rel.relevant_keys.is_empty() => transplant(pair, source, rel, &donors, seed),
            _ => swap_title(pair, source, &donors, seed),
        };
        match outcome {
            Ok(mut cf) => {
                cf.split = ds.split_name.clone();
                cf.premise = flatten_table_with(&cf.new_table, flatten);
                set.pairs.push(cf);
            }
            Err(e) => set.skipped.push(SkippedCounterfactual {
                pair_id: pair.pair_id().to_string(),
                reason: e.to_string(),
            }),
        }
    }
    set
}
