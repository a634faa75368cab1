//! Scoring and rendering: transition tallies with prohibited rates,
//! evidence-selection evaluation, counterfactual pairing quadrants,
//! hypothesis-rewrite accuracy, and the JSON/markdown/DOT report bundle.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::AggregatedRelevance;
use crate::harness::{
    self, original_id, Adapter, HarnessError, PredictionCache, PredictionRecord, PredictionRequest, RunOptions,
};
use crate::hypothesis::{HypothesisRewrite, Intent, Transform};
use crate::model::{flatten_table_with, Dataset, FlattenConfig, Label, Table};
use crate::perturb::{delete_row, PerturbationKind, ProbeInstance};
use crate::stats;
use crate::transitions::{all_edges, edge_name, Edge, GraphRegistry, TransitionError, TransitionObservation, Verdict};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no prediction for request {0:?}")]
    MissingPrediction(String),
    #[error("misaligned pairs: {0}")]
    MisalignedPairs(String),
    #[error("pair {0} is not eligible: {1}")]
    NotEligible(String, &'static str),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Predicted labels by request id.
pub type Predictions = HashMap<String, Label>;

pub fn index_records(records: &[PredictionRecord]) -> Predictions {
    records.iter().map(|r| (r.id.clone(), r.label)).collect()
}

fn lookup(preds: &Predictions, id: &str) -> Result<Label, ReportError> {
    preds
        .get(id)
        .copied()
        .ok_or_else(|| ReportError::MissingPrediction(id.to_string()))
}

/// Before/after label counts of one graph on one split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionTally {
    pub graph_id: String,
    pub split: String,
    /// "E->N" style edge names for all nine edges.
    pub counts: BTreeMap<String, u64>,
    pub totals: BTreeMap<Label, u64>,
}

impl TransitionTally {
    pub fn new(graph_id: &str, split: &str) -> Self {
        TransitionTally {
            graph_id: graph_id.to_string(),
            split: split.to_string(),
            counts: all_edges().map(|e| (edge_name(e), 0)).collect(),
            totals: Label::ALL.into_iter().map(|l| (l, 0)).collect(),
        }
    }

    pub fn record(&mut self, before: Label, after: Label) {
        *self.counts.entry(edge_name((before, after))).or_default() += 1;
        *self.totals.entry(before).or_default() += 1;
    }

    pub fn count(&self, edge: Edge) -> u64 {
        self.counts.get(&edge_name(edge)).copied().unwrap_or(0)
    }

    pub fn total(&self, source: Label) -> u64 {
        self.totals.get(&source).copied().unwrap_or(0)
    }

    /// Share of `source` probes that moved along `edge`, in percent.
    pub fn percent(&self, edge: Edge) -> f64 {
        stats::percent(self.count(edge), self.total(edge.0))
    }

    /// Share of `source` probes that took a prohibited edge, in percent.
    pub fn prohibited_rate(&self, source: Label, registry: &GraphRegistry) -> Result<f64, ReportError> {
        let graph = registry.get(&self.graph_id)?;
        let bad: u64 = Label::ALL
            .into_iter()
            .filter(|&after| graph.verdict(source, after) == Verdict::Prohibited)
            .map(|after| self.count((source, after)))
            .sum();
        Ok(stats::percent(bad, self.total(source)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TallyOutput {
    pub tallies: Vec<TransitionTally>,
    pub observations: Vec<TransitionObservation>,
}

/// Tallies before (original) and after (probe) predictions per split and
/// graph.
pub fn tally_transitions(
    probes: &[ProbeInstance],
    preds: &Predictions,
    registry: &GraphRegistry,
) -> Result<TallyOutput, ReportError> {
    let mut tallies: BTreeMap<(String, String), TransitionTally> = BTreeMap::new();
    let mut graphs = BTreeMap::new();
    let mut observations = Vec::with_capacity(probes.len());
    for p in probes {
        let before = lookup(preds, &original_id(&p.pair_id))?;
        let after = lookup(preds, &p.probe_id)?;
        if !graphs.contains_key(&p.graph_id) {
            graphs.insert(p.graph_id.clone(), registry.get(&p.graph_id)?);
        }
        tallies
            .entry((p.graph_id.clone(), p.split.clone()))
            .or_insert_with(|| TransitionTally::new(&p.graph_id, &p.split))
            .record(before, after);
        observations.push(TransitionObservation {
            probe_ref: p.probe_id.clone(),
            before,
            after,
            verdict: graphs[&p.graph_id].verdict(before, after),
        });
    }
    Ok(TallyOutput {
        tallies: tallies.into_values().collect(),
        observations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProhibitedRow {
    /// "Entail", "Neutral", "Contradict" or "Average".
    pub label: String,
    /// One value per split, in the table's split order.
    pub values: Vec<f64>,
    /// Mean over splits; absent on the Average row.
    pub average: Option<f64>,
}

/// Percent of prohibited transitions per source label and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProhibitedTable {
    pub graph_id: String,
    pub splits: Vec<String>,
    pub rows: Vec<ProhibitedRow>,
}

pub fn prohibited_tables(
    tallies: &[TransitionTally],
    registry: &GraphRegistry,
) -> Result<Vec<ProhibitedTable>, ReportError> {
    let mut by_graph: BTreeMap<&str, Vec<&TransitionTally>> = BTreeMap::new();
    for t in tallies {
        by_graph.entry(&t.graph_id).or_default().push(t);
    }
    by_graph
        .into_iter()
        .map(|(graph_id, ts)| {
            let splits: Vec<String> = ts.iter().map(|t| t.split.clone()).collect();
            let mut rows = Vec::new();
            let mut columns = vec![Vec::new(); ts.len()];
            for label in Label::ALL {
                let values = ts
                    .iter()
                    .map(|t| t.prohibited_rate(label, registry))
                    .collect::<Result<Vec<f64>, _>>()?;
                for (c, v) in columns.iter_mut().zip(&values) {
                    c.push(*v);
                }
                rows.push(ProhibitedRow {
                    label: label.name().to_string(),
                    average: Some(stats::mean(&values)),
                    values,
                });
            }
            rows.push(ProhibitedRow {
                label: "Average".into(),
                values: columns.iter().map(|c| stats::mean(c)).collect(),
                average: None,
            });
            Ok(ProhibitedTable {
                graph_id: graph_id.to_string(),
                splits,
                rows,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvidenceCategory {
    Full,
    Partial,
    Miss,
}

impl EvidenceCategory {
    pub const ALL: [EvidenceCategory; 3] = [
        EvidenceCategory::Full,
        EvidenceCategory::Partial,
        EvidenceCategory::Miss,
    ];
}

/// How "uses all relevant rows" is judged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FullMatch {
    /// Human rows are a subset of model rows.
    #[default]
    Superset,
    /// Human rows equal model rows.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEvaluation {
    pub pair_id: String,
    pub model_rows: BTreeSet<String>,
    pub human_rows: BTreeSet<String>,
    pub precision: f64,
    pub recall: f64,
    pub category: EvidenceCategory,
    pub no_attention: bool,
    /// Original prediction matched gold.
    pub correct: bool,
}

pub fn evaluate_evidence(
    pair_id: &str,
    model_rows: BTreeSet<String>,
    human_rows: BTreeSet<String>,
    correct: bool,
    full: FullMatch,
) -> EvidenceEvaluation {
    let hit = model_rows.intersection(&human_rows).count() as u64;
    let no_attention = model_rows.is_empty();
    let precision = stats::ratio(hit, model_rows.len() as u64).unwrap_or(0.0);
    let recall = stats::ratio(hit, human_rows.len() as u64).unwrap_or(0.0);
    let is_full = !human_rows.is_empty()
        && match full {
            FullMatch::Superset => human_rows.is_subset(&model_rows),
            FullMatch::Exact => human_rows == model_rows,
        };
    let category = if hit == 0 {
        EvidenceCategory::Miss
    } else if is_full {
        EvidenceCategory::Full
    } else {
        EvidenceCategory::Partial
    };
    EvidenceEvaluation {
        pair_id: pair_id.to_string(),
        model_rows,
        human_rows,
        precision,
        recall,
        category,
        no_attention,
        correct,
    }
}

fn check_eligible(pair_id: &str, gold: Label, human: &AggregatedRelevance) -> Result<(), ReportError> {
    if gold == Label::Neutral {
        return Err(ReportError::NotEligible(pair_id.to_string(), "Neutral gold"));
    }
    if human.relevant_keys.is_empty() {
        return Err(ReportError::NotEligible(pair_id.to_string(), "no relevant rows"));
    }
    Ok(())
}

fn evidence_request_id(pair_id: &str, key: &str) -> String {
    format!("ev::{pair_id}::{key}")
}

fn evidence_requests(
    pair_id: &str,
    hypothesis: &str,
    table: &Table,
    flatten: &FlattenConfig,
) -> Vec<PredictionRequest> {
    let mut out = vec![PredictionRequest::new(
        original_id(pair_id),
        flatten_table_with(table, flatten),
        hypothesis,
    )];
    for key in table.keys() {
        if let Ok(t) = delete_row(table, key) {
            out.push(PredictionRequest::new(
                evidence_request_id(pair_id, key),
                flatten_table_with(&t, flatten),
                hypothesis,
            ));
        }
    }
    out
}

fn model_rows_from(
    pair_id: &str,
    table: &Table,
    preds: &Predictions,
) -> Result<(Label, BTreeSet<String>), ReportError> {
    let base = lookup(preds, &original_id(pair_id))?;
    let mut rows = BTreeSet::new();
    for key in table.keys() {
        if let Some(label) = preds.get(&evidence_request_id(pair_id, key)) {
            if *label != base {
                rows.insert(key.to_string());
            }
        }
    }
    Ok((base, rows))
}

/// Queries one deletion probe per row and compares the rows whose removal
/// changes the prediction against the human relevant rows.
#[allow(clippy::too_many_arguments)]
pub fn evidence_selection_eval(
    pair: &crate::model::ExamplePair,
    table: &Table,
    human: &AggregatedRelevance,
    adapter: &dyn Adapter,
    cache: &PredictionCache,
    flatten: &FlattenConfig,
    full: FullMatch,
) -> Result<EvidenceEvaluation, ReportError> {
    check_eligible(pair.pair_id(), pair.gold(), human)?;
    let requests = evidence_requests(pair.pair_id(), &pair.hypothesis.text, table, flatten);
    let preds = index_records(&harness::run_batch(&requests, adapter, cache)?);
    let (base, rows) = model_rows_from(pair.pair_id(), table, &preds)?;
    Ok(evaluate_evidence(
        pair.pair_id(),
        rows,
        human.relevant_keys.clone(),
        base == pair.gold(),
        full,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub category: EvidenceCategory,
    pub pairs: usize,
    pub percent: f64,
    /// Accuracy of the original prediction within this category.
    pub accuracy: f64,
    /// Correct predictions in this category as a share of all pairs.
    pub accuracy_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub pairs: usize,
    pub skipped: usize,
    pub precision: f64,
    pub recall: f64,
    pub no_attention_percent: f64,
    pub accuracy: f64,
    pub categories: Vec<CategoryShare>,
    pub evaluations: Vec<EvidenceEvaluation>,
}

pub fn summarize_evidence(evaluations: Vec<EvidenceEvaluation>, skipped: usize) -> EvidenceReport {
    let n = evaluations.len() as u64;
    let p: Vec<f64> = evaluations.iter().map(|e| e.precision).collect();
    let r: Vec<f64> = evaluations.iter().map(|e| e.recall).collect();
    let correct = evaluations.iter().filter(|e| e.correct).count() as u64;
    let categories = EvidenceCategory::ALL
        .into_iter()
        .map(|c| {
            let members: Vec<&EvidenceEvaluation> = evaluations.iter().filter(|e| e.category == c).collect();
            let right = members.iter().filter(|e| e.correct).count() as u64;
            CategoryShare {
                category: c,
                pairs: members.len(),
                percent: stats::percent(members.len() as u64, n),
                accuracy: stats::percent(right, members.len() as u64),
                accuracy_share: stats::percent(right, n),
            }
        })
        .collect();
    EvidenceReport {
        pairs: evaluations.len(),
        skipped,
        precision: stats::mean(&p),
        recall: stats::mean(&r),
        no_attention_percent: stats::percent(evaluations.iter().filter(|e| e.no_attention).count() as u64, n),
        accuracy: stats::percent(correct, n),
        categories,
        evaluations,
    }
}

/// Evidence evaluation for every eligible annotated pair, in one harness run.
pub fn evidence_eval_dataset(
    ds: &Dataset,
    aggregates: &BTreeMap<String, AggregatedRelevance>,
    adapter: &dyn Adapter,
    cache: &PredictionCache,
    flatten: &FlattenConfig,
    full: FullMatch,
    opts: &RunOptions,
) -> Result<EvidenceReport, ReportError> {
    let mut eligible = Vec::new();
    let mut skipped = 0;
    let mut requests = Vec::new();
    for pair in &ds.pairs {
        let (Some(human), Some(table)) = (aggregates.get(pair.pair_id()), ds.table_for(pair)) else {
            continue;
        };
        if check_eligible(pair.pair_id(), pair.gold(), human).is_err() {
            skipped += 1;
            continue;
        }
        requests.extend(evidence_requests(pair.pair_id(), &pair.hypothesis.text, table, flatten));
        eligible.push((pair, table, human));
    }
    let (records, _) = harness::run_batch_with(&requests, adapter, cache, opts)?;
    let preds = index_records(&records);
    let evaluations = eligible
        .into_iter()
        .map(|(pair, table, human)| {
            let (base, rows) = model_rows_from(pair.pair_id(), table, &preds)?;
            Ok(evaluate_evidence(
                pair.pair_id(),
                rows,
                human.relevant_keys.clone(),
                base == pair.gold(),
                full,
            ))
        })
        .collect::<Result<Vec<_>, ReportError>>()?;
    Ok(summarize_evidence(evaluations, skipped))
}

/// Evidence evaluation from already-scored row-deletion probes (one probe
/// per row, as generated by default).
pub fn evidence_from_probes(
    probes: &[ProbeInstance],
    preds: &Predictions,
    golds: &BTreeMap<String, Label>,
    aggregates: &BTreeMap<String, AggregatedRelevance>,
    full: FullMatch,
) -> Result<EvidenceReport, ReportError> {
    let mut per_pair: BTreeMap<&str, Vec<&ProbeInstance>> = BTreeMap::new();
    for p in probes
        .iter()
        .filter(|p| p.steps.len() == 1 && p.descriptor().kind == PerturbationKind::Delete)
    {
        per_pair.entry(&p.pair_id).or_default().push(p);
    }
    let mut evaluations = Vec::new();
    let mut skipped = 0;
    for (pair_id, human) in aggregates {
        let Some(&gold) = golds.get(pair_id) else { continue };
        if check_eligible(pair_id, gold, human).is_err() {
            skipped += 1;
            continue;
        }
        let Some(ps) = per_pair.get(pair_id.as_str()) else {
            // single-row tables have no deletion probes
            let base = lookup(preds, &original_id(pair_id))?;
            evaluations.push(evaluate_evidence(
                pair_id,
                BTreeSet::new(),
                human.relevant_keys.clone(),
                base == gold,
                full,
            ));
            continue;
        };
        let base = lookup(preds, &original_id(pair_id))?;
        let mut rows = BTreeSet::new();
        for p in ps {
            if lookup(preds, &p.probe_id)? != base {
                rows.extend(p.descriptor().target_key.clone());
            }
        }
        evaluations.push(evaluate_evidence(
            pair_id,
            rows,
            human.relevant_keys.clone(),
            base == gold,
            full,
        ));
    }
    Ok(summarize_evidence(evaluations, skipped))
}

/// Original and counterfactual outcomes for one hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedOutcome {
    pub pair_id: String,
    pub original_gold: Label,
    pub original_pred: Label,
    pub counterfactual_expected: Label,
    pub counterfactual_pred: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis_only_pred: Option<Label>,
}

impl PairedOutcome {
    pub fn original_correct(&self) -> bool {
        self.original_pred == self.original_gold
    }

    pub fn counterfactual_correct(&self) -> bool {
        self.counterfactual_pred == self.counterfactual_expected
    }

    pub fn hypothesis_only_correct(&self) -> Option<bool> {
        self.hypothesis_only_pred.map(|l| l == self.original_gold)
    }
}

/// One quadrant (or octant, with the hypothesis-only column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantCell {
    pub original: bool,
    pub counterfactual: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis_only: Option<bool>,
    pub pairs: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantTable {
    pub split: String,
    pub pairs: usize,
    pub cells: Vec<QuadrantCell>,
}

/// Shares of pairs by (original correct, counterfactual correct), further
/// split by hypothesis-only correctness when every pair has it.
pub fn pairing_quadrants(split: &str, outcomes: &[PairedOutcome]) -> QuadrantTable {
    let with_hypo = !outcomes.is_empty() && outcomes.iter().all(|o| o.hypothesis_only_pred.is_some());
    let n = outcomes.len() as u64;
    let mut cells = Vec::new();
    for original in [false, true] {
        for counterfactual in [false, true] {
            let hypo_options: Vec<Option<bool>> = if with_hypo {
                vec![Some(false), Some(true)]
            } else {
                vec![None]
            };
            for hypothesis_only in hypo_options {
                let pairs = outcomes
                    .iter()
                    .filter(|o| o.original_correct() == original && o.counterfactual_correct() == counterfactual)
                    .filter(|o| hypothesis_only.is_none() || o.hypothesis_only_correct() == hypothesis_only)
                    .count();
                cells.push(QuadrantCell {
                    original,
                    counterfactual,
                    hypothesis_only,
                    pairs,
                    percent: stats::percent(pairs as u64, n),
                });
            }
        }
    }
    QuadrantTable {
        split: split.to_string(),
        pairs: outcomes.len(),
        cells,
    }
}

/// Request id of a counterfactual premise.
pub fn counterfactual_id(cf_id: &str) -> String {
    format!("cf::{cf_id}")
}

/// Request id of a hypothesis-only query.
pub fn hypothesis_only_id(pair_id: &str) -> String {
    format!("hyp::{pair_id}")
}

/// Joins original, counterfactual and (optional) hypothesis-only
/// predictions by pair.
pub fn align_counterfactuals(
    cfs: &[crate::counterfactual::CounterfactualPair],
    preds: &Predictions,
    hypothesis_only: Option<&Predictions>,
) -> Result<Vec<PairedOutcome>, ReportError> {
    let mut seen = BTreeSet::new();
    cfs.iter()
        .map(|cf| {
            if !seen.insert(cf.source_pair.as_str()) {
                return Err(ReportError::MisalignedPairs(format!(
                    "pair {} has more than one counterfactual",
                    cf.source_pair
                )));
            }
            let original_pred = lookup(preds, &original_id(&cf.source_pair))?;
            let counterfactual_pred = lookup(preds, &counterfactual_id(&cf.cf_id))?;
            let hypothesis_only_pred = match hypothesis_only {
                Some(h) => {
                    Some(lookup(h, &hypothesis_only_id(&cf.source_pair)).or_else(|_| lookup(h, &cf.source_pair))?)
                }
                None => None,
            };
            Ok(PairedOutcome {
                pair_id: cf.source_pair.clone(),
                original_gold: cf.gold,
                original_pred,
                counterfactual_expected: cf.expected_label,
                counterfactual_pred,
                hypothesis_only_pred,
            })
        })
        .collect()
}

pub fn counterfactual_requests(
    cfs: &[crate::counterfactual::CounterfactualPair],
    ds: &Dataset,
    flatten: &FlattenConfig,
) -> Vec<PredictionRequest> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for cf in cfs {
        if seen.insert(cf.source_pair.clone()) {
            if let Some(pair) = ds.pair(&cf.source_pair) {
                if let Some(table) = ds.table_for(pair) {
                    out.push(PredictionRequest::new(
                        original_id(&cf.source_pair),
                        flatten_table_with(table, flatten),
                        pair.hypothesis.text.clone(),
                    ));
                }
            }
        }
        out.push(PredictionRequest::new(
            counterfactual_id(&cf.cf_id),
            cf.premise.clone(),
            cf.new_hypothesis.clone(),
        ));
    }
    out
}

pub fn rewrite_id(r: &HypothesisRewrite) -> String {
    let transform = serde_json::to_value(r.transform).expect("enum serializes");
    let intent = serde_json::to_value(r.intent).expect("enum serializes");
    format!(
        "rw::{}::{}::{}",
        r.original.pair_id,
        transform.as_str().unwrap_or_default(),
        intent.as_str().unwrap_or_default()
    )
}

/// Original and rewritten hypothesis against the pair's premise.
pub fn rewrite_requests(
    rewrites: &[HypothesisRewrite],
    ds: &Dataset,
    flatten: &FlattenConfig,
) -> Vec<PredictionRequest> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for r in rewrites {
        let Some(pair) = ds.pair(&r.original.pair_id) else {
            continue;
        };
        let Some(table) = ds.table_for(pair) else { continue };
        let premise = flatten_table_with(table, flatten);
        if seen.insert(r.original.pair_id.clone()) {
            out.push(PredictionRequest::new(
                original_id(&r.original.pair_id),
                premise.clone(),
                r.original.text.clone(),
            ));
        }
        out.push(PredictionRequest::new(rewrite_id(r), premise, r.rewritten_text.clone()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteGroup {
    pub transform: Transform,
    pub intent: Intent,
    pub count: usize,
    /// Accuracy on the unmodified hypotheses, percent.
    pub original_accuracy: f64,
    /// Accuracy against the expected label of the rewrites, percent.
    pub rewritten_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteAccuracy {
    pub strict: bool,
    pub excluded_heuristic: usize,
    pub groups: Vec<RewriteGroup>,
}

/// Correctness of one rewrite and of its unmodified hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteOutcome {
    pub transform: Transform,
    pub intent: Intent,
    pub heuristic: bool,
    pub original_correct: bool,
    pub rewritten_correct: bool,
}

pub fn rewrite_outcomes(
    rewrites: &[HypothesisRewrite],
    preds: &Predictions,
) -> Result<Vec<RewriteOutcome>, ReportError> {
    rewrites
        .iter()
        .map(|r| {
            let before = lookup(preds, &original_id(&r.original.pair_id))?;
            let after = lookup(preds, &rewrite_id(r))?;
            Ok(RewriteOutcome {
                transform: r.transform,
                intent: r.intent,
                heuristic: r.heuristic,
                original_correct: before == r.original.gold_label,
                rewritten_correct: after == r.expected_label,
            })
        })
        .collect()
}

/// Accuracy before and after each rewrite family. `strict` drops rewrites
/// whose expected label is heuristic.
pub fn summarize_rewrites(outcomes: &[RewriteOutcome], strict: bool) -> RewriteAccuracy {
    let mut groups: BTreeMap<(Transform, Intent), (u64, u64, u64)> = BTreeMap::new();
    let mut excluded = 0;
    for o in outcomes {
        if strict && o.heuristic {
            excluded += 1;
            continue;
        }
        let g = groups.entry((o.transform, o.intent)).or_default();
        g.0 += 1;
        g.1 += u64::from(o.original_correct);
        g.2 += u64::from(o.rewritten_correct);
    }
    RewriteAccuracy {
        strict,
        excluded_heuristic: excluded,
        groups: groups
            .into_iter()
            .map(|((transform, intent), (n, a, b))| RewriteGroup {
                transform,
                intent,
                count: n as usize,
                original_accuracy: stats::percent(a, n),
                rewritten_accuracy: stats::percent(b, n),
            })
            .collect(),
    }
}

pub fn rewrite_accuracy(
    rewrites: &[HypothesisRewrite],
    preds: &Predictions,
    strict: bool,
) -> Result<RewriteAccuracy, ReportError> {
    Ok(summarize_rewrites(&rewrite_outcomes(rewrites, preds)?, strict))
}

/// Everything `emit_report` renders. The JSON form is authoritative.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub transitions: Vec<TransitionTally>,
    pub prohibited: Vec<ProhibitedTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<EvidenceReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub quadrants: Vec<QuadrantTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrites: Option<RewriteAccuracy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
    Dot,
}

pub fn fmt2(x: f64) -> String {
    format!("{x:.2}")
}

fn tick(b: bool) -> &'static str {
    if b {
        "✓"
    } else {
        "✗"
    }
}

fn md_table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
    out.push_str(&line(header));
    out.push_str(&line(&vec!["---".to_string(); header.len()]));
    for r in rows {
        out.push_str(&line(r));
    }
}

pub fn render_prohibited_md(t: &ProhibitedTable) -> String {
    let mut out = format!("Percentage (%) of prohibited transitions: {}\n\n", t.graph_id);
    let mut header = vec!["Dataset".to_string()];
    header.extend(t.splits.iter().cloned());
    header.push("Average".into());
    let rows: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.label.clone()];
            cells.extend(r.values.iter().map(|v| fmt2(*v)));
            cells.push(r.average.map_or("-".to_string(), fmt2));
            cells
        })
        .collect();
    md_table(&mut out, &header, &rows);
    out
}

pub fn render_tally_md(t: &TransitionTally) -> String {
    let mut out = format!("Transitions (%) for {} on {}\n\n", t.graph_id, t.split);
    let mut header = vec!["From \\ To".to_string()];
    header.extend(Label::ALL.iter().map(|l| l.name().to_string()));
    header.push("n".into());
    let rows: Vec<Vec<String>> = Label::ALL
        .into_iter()
        .map(|a| {
            let mut cells = vec![a.name().to_string()];
            cells.extend(Label::ALL.into_iter().map(|b| fmt2(t.percent((a, b)))));
            cells.push(t.total(a).to_string());
            cells
        })
        .collect();
    md_table(&mut out, &header, &rows);
    out
}

pub fn render_quadrants_md(q: &QuadrantTable) -> String {
    let mut out = format!("Paired predictions on {} ({} pairs)\n\n", q.split, q.pairs);
    let with_hypo = q.cells.iter().any(|c| c.hypothesis_only.is_some());
    let mut header = vec!["Original".to_string(), "Counterfactual".to_string()];
    if with_hypo {
        header.push("Hypo".into());
    }
    header.push(format!("{} (%)", q.split));
    let rows: Vec<Vec<String>> = q
        .cells
        .iter()
        .map(|c| {
            let mut cells = vec![tick(c.original).to_string(), tick(c.counterfactual).to_string()];
            if let Some(h) = c.hypothesis_only {
                cells.push(tick(h).to_string());
            }
            cells.push(fmt2(c.percent));
            cells
        })
        .collect();
    md_table(&mut out, &header, &rows);
    out
}

pub fn render_evidence_md(e: &EvidenceReport) -> String {
    let mut out = format!(
        "Evidence selection over {} pairs: precision {} recall {} accuracy {} no-attention {}%\n\n",
        e.pairs,
        fmt2(e.precision * 100.0),
        fmt2(e.recall * 100.0),
        fmt2(e.accuracy),
        fmt2(e.no_attention_percent)
    );
    let header: Vec<String> = ["Category", "Pairs", "Share (%)", "Accuracy (%)", "Correct share (%)"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = e
        .categories
        .iter()
        .map(|c| {
            vec![
                format!("{:?}", c.category),
                c.pairs.to_string(),
                fmt2(c.percent),
                fmt2(c.accuracy),
                fmt2(c.accuracy_share),
            ]
        })
        .collect();
    md_table(&mut out, &header, &rows);
    out
}

pub fn render_rewrites_md(r: &RewriteAccuracy) -> String {
    let mut out = format!(
        "Hypothesis rewrites (strict: {}, heuristic excluded: {})\n\n",
        r.strict, r.excluded_heuristic
    );
    let header: Vec<String> = ["Transform", "Intent", "n", "Original (%)", "Rewritten (%)"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = r
        .groups
        .iter()
        .map(|g| {
            vec![
                format!("{:?}", g.transform),
                format!("{:?}", g.intent),
                g.count.to_string(),
                fmt2(g.original_accuracy),
                fmt2(g.rewritten_accuracy),
            ]
        })
        .collect();
    md_table(&mut out, &header, &rows);
    out
}

/// Parses a rendered markdown table into rows of cells, header first.
pub fn parse_markdown_table(md: &str) -> Vec<Vec<String>> {
    md.lines()
        .filter(|l| l.starts_with('|'))
        .map(|l| {
            l.trim()
                .trim_matches('|')
                .split('|')
                .map(|c| c.trim().to_string())
                .collect::<Vec<_>>()
        })
        .filter(|cells| !cells.iter().all(|c| c == "---"))
        .collect()
}

/// DOT graph of one class with edge captions "p1/p2/..." (percent per split).
pub fn render_graph_dot(
    graph_id: &str,
    tallies: &[&TransitionTally],
    registry: &GraphRegistry,
) -> Result<String, ReportError> {
    let graph = registry.get(graph_id)?;
    let captions: BTreeMap<Edge, String> = all_edges()
        .map(|e| {
            let parts: Vec<String> = tallies.iter().map(|t| fmt2(t.percent(e))).collect();
            (e, parts.join("/"))
        })
        .collect();
    Ok(graph.to_dot(Some(&captions)))
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes report.json, tables/*.md and graphs/*.dot under `dir`. Returns
/// the files written, in a stable order.
pub fn emit_report(
    report: &Report,
    dir: &Path,
    formats: &[ReportFormat],
    registry: &GraphRegistry,
) -> Result<Vec<PathBuf>, ReportError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    if formats.contains(&ReportFormat::Json) {
        let mut json = serde_json::to_string_pretty(report).expect("report serializes");
        json.push('\n');
        files.push((dir.join("report.json"), json));
    }
    if formats.contains(&ReportFormat::Markdown) {
        let tables = dir.join("tables");
        for t in &report.prohibited {
            files.push((
                tables.join(format!("prohibited_{}.md", safe_name(&t.graph_id))),
                render_prohibited_md(t),
            ));
        }
        for t in &report.transitions {
            files.push((
                tables.join(format!(
                    "transitions_{}_{}.md",
                    safe_name(&t.graph_id),
                    safe_name(&t.split)
                )),
                render_tally_md(t),
            ));
        }
        for q in &report.quadrants {
            files.push((
                tables.join(format!("quadrants_{}.md", safe_name(&q.split))),
                render_quadrants_md(q),
            ));
        }
        if let Some(e) = &report.evidence {
            files.push((tables.join("evidence.md"), render_evidence_md(e)));
        }
        if let Some(r) = &report.rewrites {
            files.push((tables.join("rewrites.md"), render_rewrites_md(r)));
        }
    }
    if formats.contains(&ReportFormat::Dot) {
        let mut by_graph: BTreeMap<&str, Vec<&TransitionTally>> = BTreeMap::new();
        for t in &report.transitions {
            by_graph.entry(&t.graph_id).or_default().push(t);
        }
        for (graph_id, ts) in by_graph {
            files.push((
                dir.join("graphs").join(format!("{}.dot", safe_name(graph_id))),
                render_graph_dot(graph_id, &ts, registry)?,
            ));
        }
    }
    let mut written = Vec::new();
    for (path, body) in files {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, body).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}
