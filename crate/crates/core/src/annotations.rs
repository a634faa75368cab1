//! Crowd relevance annotations: majority aggregation, agreement with the
//! majority, Fleiss' kappa, distribution statistics and key-usage bias.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dataset, Label, Table};
use crate::stats::{self, Confusion, KappaBucket, KappaError, KappaValue, Prf, Scalar};

/// One annotator's row selection for one pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceAnnotation {
    pub pair_id: String,
    pub annotator_id: String,
    pub selected_keys: BTreeSet<String>,
    #[serde(default)]
    pub oot: bool,
}

/// Yes/no vote counts for one row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Votes {
    pub yes: u32,
    pub no: u32,
}

/// Majority ground truth for one pair. A row is relevant only on a strict
/// majority of yes votes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedRelevance {
    pub pair_id: String,
    pub relevant_keys: BTreeSet<String>,
    pub oot_majority: bool,
    pub per_key_votes: BTreeMap<String, Votes>,
    pub annotators: usize,
}

impl AggregatedRelevance {
    /// Builds an aggregate straight from a relevant-key set, as if one
    /// annotator had selected exactly those keys.
    pub fn from_keys<I, S>(pair_id: &str, table: &Table, keys: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let relevant_keys: BTreeSet<String> = keys.into_iter().map(Into::into).collect();
        let per_key_votes = table
            .keys()
            .map(|k| {
                let yes = u32::from(relevant_keys.contains(k));
                (k.to_string(), Votes { yes, no: 1 - yes })
            })
            .collect();
        AggregatedRelevance {
            pair_id: pair_id.to_string(),
            relevant_keys,
            oot_majority: false,
            per_key_votes,
            annotators: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("pair {0}: no annotations")]
    NoAnnotations(String),
    #[error("pair {pair_id}: annotator {annotator_id} selected unknown key {key:?}")]
    UnknownKey {
        pair_id: String,
        annotator_id: String,
        key: String,
    },
    #[error("annotations for {0} and {1} aggregated together")]
    MixedPairs(String, String),
    #[error(transparent)]
    Kappa(#[from] KappaError),
}

/// Per-row (and OOT) majority vote over the annotations of one pair.
pub fn aggregate_majority(
    annos: &[&RelevanceAnnotation],
    table: &Table,
) -> Result<AggregatedRelevance, AnnotationError> {
    let first = annos
        .first()
        .ok_or_else(|| AnnotationError::NoAnnotations(table.table_id.clone()))?;
    let pair_id = &first.pair_id;
    let mut per_key_votes: BTreeMap<String, Votes> = table.keys().map(|k| (k.to_string(), Votes::default())).collect();
    let mut oot = Votes::default();
    for a in annos {
        if &a.pair_id != pair_id {
            return Err(AnnotationError::MixedPairs(pair_id.clone(), a.pair_id.clone()));
        }
        if let Some(key) = a.selected_keys.iter().find(|k| !per_key_votes.contains_key(*k)) {
            return Err(AnnotationError::UnknownKey {
                pair_id: pair_id.clone(),
                annotator_id: a.annotator_id.clone(),
                key: key.clone(),
            });
        }
        for (key, votes) in per_key_votes.iter_mut() {
            if a.selected_keys.contains(key) {
                votes.yes += 1;
            } else {
                votes.no += 1;
            }
        }
        if a.oot {
            oot.yes += 1;
        } else {
            oot.no += 1;
        }
    }
    let relevant_keys = per_key_votes
        .iter()
        .filter(|(_, v)| v.yes > v.no)
        .map(|(k, _)| k.clone())
        .collect();
    Ok(AggregatedRelevance {
        pair_id: pair_id.clone(),
        relevant_keys,
        oot_majority: oot.yes > oot.no,
        per_key_votes,
        annotators: annos.len(),
    })
}

pub fn group_by_pair(annos: &[RelevanceAnnotation]) -> BTreeMap<&str, Vec<&RelevanceAnnotation>> {
    let mut out: BTreeMap<&str, Vec<&RelevanceAnnotation>> = BTreeMap::new();
    for a in annos {
        out.entry(a.pair_id.as_str()).or_default().push(a);
    }
    out
}

/// Aggregates every annotated pair of `ds`; annotations for pairs outside
/// the dataset are ignored.
pub fn aggregate_dataset(
    annos: &[RelevanceAnnotation],
    ds: &Dataset,
) -> Result<BTreeMap<String, AggregatedRelevance>, AnnotationError> {
    let pairs = ds.pair_index();
    let mut out = BTreeMap::new();
    for (pair_id, group) in group_by_pair(annos) {
        let Some(pair) = pairs.get(pair_id) else { continue };
        let Some(table) = ds.table_for(pair) else { continue };
        out.insert(pair_id.to_string(), aggregate_majority(&group, table)?);
    }
    Ok(out)
}

/// Selection counts of one annotation against its pair's majority.
pub fn confusion_against(anno: &RelevanceAnnotation, agg: &AggregatedRelevance) -> Confusion {
    let tp = anno.selected_keys.intersection(&agg.relevant_keys).count() as u64;
    Confusion {
        tp,
        fp: anno.selected_keys.len() as u64 - tp,
        fn_: agg.relevant_keys.len() as u64 - tp,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorScore<T> {
    pub annotator_id: String,
    pub pairs: usize,
    pub counts: Confusion,
    pub scores: Prf<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport<T> {
    pub annotators: usize,
    pub per_annotator: Vec<AnnotatorScore<T>>,
    pub macro_avg: Prf<T>,
    pub micro_avg: Prf<T>,
    pub micro_counts: Confusion,
}

/// Precision/recall/F1 of each annotator's selections against the majority,
/// with macro (mean over annotators) and micro (pooled counts) averages.
pub fn annotator_agreement<T: Scalar>(
    annos: &[RelevanceAnnotation],
    aggregates: &BTreeMap<String, AggregatedRelevance>,
) -> AgreementReport<T> {
    let mut per: BTreeMap<&str, (usize, Confusion)> = BTreeMap::new();
    for a in annos {
        let Some(agg) = aggregates.get(&a.pair_id) else {
            continue;
        };
        let entry = per.entry(a.annotator_id.as_str()).or_default();
        entry.0 += 1;
        entry.1.add(confusion_against(a, agg));
    }
    let mut micro_counts = Confusion::default();
    let per_annotator: Vec<AnnotatorScore<T>> = per
        .into_iter()
        .map(|(id, (pairs, counts))| {
            micro_counts.add(counts);
            AnnotatorScore {
                annotator_id: id.to_string(),
                pairs,
                counts,
                scores: counts.prf(),
            }
        })
        .collect();
    let scores: Vec<Prf<T>> = per_annotator.iter().map(|a| a.scores).collect();
    AgreementReport {
        annotators: per_annotator.len(),
        macro_avg: Prf::mean_of(&scores),
        micro_avg: micro_counts.prf(),
        micro_counts,
        per_annotator,
    }
}

/// How kappa items are grouped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaPooling {
    /// One kappa per pair over its rows, then averaged.
    #[default]
    PerPair,
    /// Additionally one kappa over every (pair, row) item.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketShare<T> {
    pub bucket: KappaBucket,
    pub range: String,
    pub pairs: usize,
    pub percent: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport<T> {
    pub per_pair: BTreeMap<String, KappaValue<T>>,
    pub mean: T,
    pub std: T,
    pub degenerate_pairs: usize,
    /// Pairs with a single annotator; kappa needs two.
    pub skipped_pairs: Vec<String>,
    pub buckets: Vec<BucketShare<T>>,
    pub pooled: Option<KappaValue<T>>,
}

fn vote_items(agg: &AggregatedRelevance) -> Vec<Vec<u64>> {
    agg.per_key_votes
        .values()
        .map(|v| vec![u64::from(v.yes), u64::from(v.no)])
        .collect()
}

/// Fleiss' kappa over binary relevant/not judgments of each pair's rows.
pub fn fleiss_kappa_report<T: Scalar>(
    aggregates: &BTreeMap<String, AggregatedRelevance>,
    pooling: KappaPooling,
) -> Result<KappaReport<T>, AnnotationError> {
    let mut per_pair = BTreeMap::new();
    let mut skipped_pairs = Vec::new();
    let mut pooled_items = Vec::new();
    for (pair_id, agg) in aggregates {
        if agg.annotators < 2 || agg.per_key_votes.is_empty() {
            skipped_pairs.push(pair_id.clone());
            continue;
        }
        let items = vote_items(agg);
        per_pair.insert(pair_id.clone(), stats::fleiss_kappa::<T>(&items)?);
        if pooling == KappaPooling::Global {
            pooled_items.extend(items);
        }
    }
    let values: Vec<T> = per_pair.values().map(|k| k.kappa).collect();
    let (mean, std) = stats::mean_std(&values);
    let mut counts: BTreeMap<KappaBucket, usize> = BTreeMap::new();
    for v in &values {
        *counts.entry(KappaBucket::of(*v)).or_default() += 1;
    }
    let buckets = KappaBucket::ALL
        .into_iter()
        .map(|b| {
            let pairs = counts.get(&b).copied().unwrap_or(0);
            BucketShare {
                bucket: b,
                range: b.range().to_string(),
                pairs,
                percent: stats::percent(pairs as u64, values.len() as u64),
            }
        })
        .collect();
    let pooled = match pooling {
        KappaPooling::Global if !pooled_items.is_empty() => Some(stats::fleiss_kappa::<T>(&pooled_items)?),
        _ => None,
    };
    Ok(KappaReport {
        degenerate_pairs: per_pair.values().filter(|k| k.degenerate).count(),
        per_pair,
        mean,
        std,
        skipped_pairs,
        buckets,
        pooled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats<T> {
    /// annotations per pair -> number of pairs
    pub annotation_counts: BTreeMap<usize, usize>,
    /// k -> share (%) of pairs where at least k annotators chose the exact same row set
    pub exact_match_at_least: BTreeMap<usize, T>,
    /// label -> (majority relevant-row count -> pairs)
    pub relevant_row_counts: BTreeMap<Label, BTreeMap<usize, usize>>,
    /// label -> share (%) of pairs whose majority marks out-of-table
    pub oot_rate: BTreeMap<Label, T>,
    /// share (%) of Entail and Contradict pairs with majority out-of-table
    pub oot_rate_entail_contradict: T,
}

/// Largest group of annotators that selected the identical row set.
pub fn largest_identical_group(annos: &[&RelevanceAnnotation]) -> usize {
    let mut groups: BTreeMap<&BTreeSet<String>, usize> = BTreeMap::new();
    for a in annos {
        *groups.entry(&a.selected_keys).or_default() += 1;
    }
    groups.values().copied().max().unwrap_or(0)
}

pub fn distribution_stats<T: Scalar>(
    annos: &[RelevanceAnnotation],
    aggregates: &BTreeMap<String, AggregatedRelevance>,
    ds: &Dataset,
) -> DistributionStats<T> {
    let grouped = group_by_pair(annos);
    let mut annotation_counts = BTreeMap::new();
    let mut largest = Vec::new();
    for (pair_id, group) in &grouped {
        if !aggregates.contains_key(*pair_id) {
            continue;
        }
        *annotation_counts.entry(group.len()).or_default() += 1;
        largest.push(largest_identical_group(group));
    }
    let max_k = largest.iter().copied().max().unwrap_or(0);
    let exact_match_at_least = (1..=max_k)
        .map(|k| {
            let n = largest.iter().filter(|&&g| g >= k).count();
            (k, stats::percent(n as u64, largest.len() as u64))
        })
        .collect();

    let mut relevant_row_counts: BTreeMap<Label, BTreeMap<usize, usize>> = BTreeMap::new();
    let mut oot_counts: BTreeMap<Label, (u64, u64)> = BTreeMap::new();
    for pair in &ds.pairs {
        let Some(agg) = aggregates.get(pair.pair_id()) else {
            continue;
        };
        *relevant_row_counts
            .entry(pair.gold())
            .or_default()
            .entry(agg.relevant_keys.len())
            .or_default() += 1;
        let c = oot_counts.entry(pair.gold()).or_default();
        c.0 += u64::from(agg.oot_majority);
        c.1 += 1;
    }
    let oot_rate = oot_counts
        .iter()
        .map(|(l, (oot, n))| (*l, stats::percent(*oot, *n)))
        .collect();
    let (ec_oot, ec_n) = [Label::Entail, Label::Contradict]
        .iter()
        .filter_map(|l| oot_counts.get(l))
        .fold((0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
    DistributionStats {
        annotation_counts,
        exact_match_at_least,
        relevant_row_counts,
        oot_rate,
        oot_rate_entail_contradict: stats::percent(ec_oot, ec_n),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasConfig {
    /// Keys appearing in fewer tables are ignored.
    pub min_table_freq: usize,
    /// Share of ranked keys reported as over- and under-used.
    pub tail_fraction: f64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            min_table_freq: 180,
            tail_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyUsage<T> {
    pub key: String,
    pub relevant_pairs: usize,
    pub containing_pairs: usize,
    pub ratio: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelBias<T> {
    /// Sorted by ratio, highest first; ties by key.
    pub ranking: Vec<KeyUsage<T>>,
    pub overused: Vec<String>,
    pub underused: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyBiasReport<T> {
    pub table_frequency: BTreeMap<String, usize>,
    pub eligible_keys: Vec<String>,
    pub per_label: BTreeMap<Label, LabelBias<T>>,
}

/// For frequent keys, how often a key is majority-relevant among the
/// annotated pairs whose table contains it, per gold label.
pub fn key_usage_bias<T: Scalar>(
    ds: &Dataset,
    aggregates: &BTreeMap<String, AggregatedRelevance>,
    cfg: &BiasConfig,
) -> KeyBiasReport<T> {
    let mut table_frequency: BTreeMap<String, usize> = BTreeMap::new();
    for table in ds.tables.values() {
        for key in table.keys() {
            *table_frequency.entry(key.to_string()).or_default() += 1;
        }
    }
    let eligible: BTreeSet<&str> = table_frequency
        .iter()
        .filter(|(_, &n)| n >= cfg.min_table_freq)
        .map(|(k, _)| k.as_str())
        .collect();

    // label -> key -> (relevant, containing)
    let mut counts: BTreeMap<Label, BTreeMap<&str, (usize, usize)>> = BTreeMap::new();
    for pair in &ds.pairs {
        let (Some(agg), Some(table)) = (aggregates.get(pair.pair_id()), ds.table_for(pair)) else {
            continue;
        };
        let per_key = counts.entry(pair.gold()).or_default();
        for key in table.keys().filter(|k| eligible.contains(k)) {
            let c = per_key.entry(key).or_default();
            c.1 += 1;
            if agg.relevant_keys.contains(key) {
                c.0 += 1;
            }
        }
    }

    let per_label = counts
        .into_iter()
        .map(|(label, per_key)| {
            let mut ranking: Vec<KeyUsage<T>> = per_key
                .into_iter()
                .map(|(key, (rel, cont))| KeyUsage {
                    key: key.to_string(),
                    relevant_pairs: rel,
                    containing_pairs: cont,
                    ratio: stats::ratio(rel as u64, cont as u64).unwrap_or_else(T::zero),
                })
                .collect();
            ranking.sort_by(|a, b| {
                b.ratio
                    .partial_cmp(&a.ratio)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.key.cmp(&b.key))
            });
            let tail = ((ranking.len() as f64) * cfg.tail_fraction).ceil() as usize;
            let tail = tail.min(ranking.len());
            let overused = ranking[..tail].iter().map(|u| u.key.clone()).collect();
            let underused = ranking[ranking.len() - tail..].iter().map(|u| u.key.clone()).collect();
            (
                label,
                LabelBias {
                    ranking,
                    overused,
                    underused,
                },
            )
        })
        .collect();

    KeyBiasReport {
        eligible_keys: eligible.into_iter().map(str::to_string).collect(),
        table_frequency,
        per_label,
    }
}
