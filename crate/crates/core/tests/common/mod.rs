#![allow(dead_code)]

use std::path::PathBuf;

use proptest::prelude::*;
use tabprobe::{Dataset, ExamplePair, Hypothesis, Label, Row, Table};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn fixture(name: &str) -> Dataset {
    tabprobe::io::load_split(&data_dir().join("fixtures").join(name), name).expect("fixture loads")
}

pub fn mini(split: &str) -> Dataset {
    tabprobe::io::load_split(&data_dir().join("mini").join(split), split).expect("mini corpus loads")
}

pub fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Entail), Just(Label::Neutral), Just(Label::Contradict)]
}

fn word() -> impl Strategy<Value = String> {
    "[a-z]{2,7}"
}

/// Tables with distinct keys, 1..=max_rows rows and 1..=3 values each.
pub fn table(id: &'static str, max_rows: usize) -> impl Strategy<Value = Table> {
    (
        "[A-Z][a-z]{3,8}",
        proptest::collection::btree_set("[A-Z][a-z]{2,9}", 1..=max_rows),
    )
        .prop_flat_map(move |(title, keys)| {
            let n = keys.len();
            (
                Just(title),
                Just(keys.into_iter().collect::<Vec<_>>()),
                proptest::collection::vec(proptest::collection::vec(word(), 1..=3), n),
            )
        })
        .prop_map(move |(title, keys, values)| Table {
            table_id: id.to_string(),
            title,
            category: "thing".to_string(),
            rows: keys.into_iter().zip(values).map(|(k, v)| Row::new(k, v)).collect(),
        })
}

/// A small dataset: several tables of one category, one pair per table.
pub fn dataset() -> impl Strategy<Value = Dataset> {
    proptest::collection::vec((table("t", 6), label()), 2..=5).prop_map(|items| {
        let mut ds = Dataset::new("p");
        for (i, (mut t, gold)) in items.into_iter().enumerate() {
            t.table_id = format!("t{i}");
            t.title = format!("{} {i}", t.title);
            ds.pairs.push(ExamplePair {
                table_ref: t.table_id.clone(),
                hypothesis: Hypothesis {
                    pair_id: format!("p{i}"),
                    text: format!("{} has {} things.", t.title, i + 2),
                    gold_label: gold,
                },
            });
            ds.tables.insert(t.table_id.clone(), t);
        }
        ds
    })
}

pub fn mini_relevance(ds: &Dataset) -> std::collections::BTreeMap<String, tabprobe::annotations::AggregatedRelevance> {
    let path = data_dir().join("mini").join(&ds.split_name).join("annotations.jsonl");
    let annos: Vec<tabprobe::annotations::RelevanceAnnotation> = tabprobe::io::read_jsonl(&path).unwrap();
    tabprobe::annotations::aggregate_dataset(&annos, ds).unwrap()
}
