//! Table perturbations: row deletion, insertion, value update, permutation,
//! relevance-conditioned deletion and composite edit plans. Every edit is a
//! pure function of its inputs and a seed, and is recorded in a descriptor
//! that replays without access to donor tables.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::AggregatedRelevance;
use crate::model::{flatten_table_with, Dataset, ExamplePair, FlattenConfig, Label, Row, Table};
use crate::seed::{derive_seed, rng_from};
use crate::transitions::{EditKind, GraphKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    Delete,
    Insert,
    Update,
    Permute,
    DeleteRelevant,
    DeleteIrrelevant,
}

impl PerturbationKind {
    pub fn edit_kind(self) -> Option<EditKind> {
        match self {
            PerturbationKind::Delete => Some(EditKind::Delete),
            PerturbationKind::Insert => Some(EditKind::Insert),
            PerturbationKind::Update => Some(EditKind::Update),
            _ => None,
        }
    }

    pub fn graph_key(self) -> GraphKey {
        match self {
            PerturbationKind::Delete => GraphKey::Delete,
            PerturbationKind::Insert => GraphKey::Insert,
            PerturbationKind::Update => GraphKey::Update,
            PerturbationKind::Permute => GraphKey::Permute,
            PerturbationKind::DeleteRelevant => GraphKey::RelevantDeletion,
            PerturbationKind::DeleteIrrelevant => GraphKey::IrrelevantDeletion,
        }
    }
}

impl From<EditKind> for PerturbationKind {
    fn from(k: EditKind) -> Self {
        match k {
            EditKind::Delete => PerturbationKind::Delete,
            EditKind::Insert => PerturbationKind::Insert,
            EditKind::Update => PerturbationKind::Update,
        }
    }
}

/// Provenance of one edit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationDescriptor {
    pub kind: PerturbationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub donor_table_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub donor_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
    pub seed: u64,
    /// Insert: index the new row landed at.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
    /// Insert: the donor row, copied so replay needs no donor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inserted_row: Option<Row>,
    /// Update: which value of the row was replaced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_index: Option<usize>,
}

impl PerturbationDescriptor {
    fn bare(kind: PerturbationKind, seed: u64) -> Self {
        PerturbationDescriptor {
            kind,
            target_key: None,
            donor_table_id: None,
            donor_value: None,
            permutation: None,
            seed,
            position: None,
            inserted_row: None,
            value_index: None,
        }
    }

    pub fn deletion(kind: PerturbationKind, key: &str, seed: u64) -> Self {
        PerturbationDescriptor {
            target_key: Some(key.to_string()),
            ..Self::bare(kind, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PerturbError {
    #[error("key {0:?} not found")]
    KeyNotFound(String),
    #[error("deleting the only row would empty the table")]
    LastRow,
    #[error("donor {0} offers no key absent from the table")]
    NoFreshKey(String),
    #[error("row {0:?} has a single value")]
    NotMultiValue(String),
    #[error("a single-row table cannot be permuted")]
    SingleRow,
    #[error("no row in the selected relevance pool")]
    EmptyPool,
    #[error("annotation for {annotation} does not refer to table {table}")]
    AnnotationMismatch { annotation: String, table: String },
    #[error("{0:?} cannot be composed")]
    UnsupportedKind(PerturbationKind),
    #[error("empty composite plan")]
    EmptyPlan,
    #[error("no donor table offers a usable row")]
    NoDonor,
    #[error("table {0} has no multi-value row")]
    NoMultiValueRow(String),
    #[error("no multi-value row has a donor value")]
    NoDonorValue,
    #[error("descriptor cannot be replayed: {0}")]
    BadDescriptor(String),
}

fn rebuilt(table: &Table, rows: Vec<Row>) -> Table {
    Table {
        table_id: table.table_id.clone(),
        title: table.title.clone(),
        category: table.category.clone(),
        rows,
    }
}

fn position_of(table: &Table, key: &str) -> Result<usize, PerturbError> {
    table
        .position(key)
        .ok_or_else(|| PerturbError::KeyNotFound(key.to_string()))
}

pub fn delete_row(table: &Table, key: &str) -> Result<Table, PerturbError> {
    let pos = position_of(table, key)?;
    if table.rows.len() < 2 {
        return Err(PerturbError::LastRow);
    }
    let mut rows = table.rows.clone();
    rows.remove(pos);
    Ok(rebuilt(table, rows))
}

/// Inserts `row` at `position` (clamped to the end).
pub fn insert_row_at(table: &Table, row: Row, position: usize) -> Result<Table, PerturbError> {
    if table.has_key(&row.key) {
        return Err(PerturbError::BadDescriptor(format!(
            "key {:?} already present",
            row.key
        )));
    }
    let mut rows = table.rows.clone();
    rows.insert(position.min(rows.len()), row);
    Ok(rebuilt(table, rows))
}

/// Inserts one donor row with a key fresh to `table` at a seeded position.
pub fn insert_row(table: &Table, donor: &Table, seed: u64) -> Result<(Table, PerturbationDescriptor), PerturbError> {
    let fresh: Vec<&Row> = donor.rows.iter().filter(|r| !table.has_key(&r.key)).collect();
    let mut rng = rng_from(seed);
    let row = (*fresh
        .choose(&mut rng)
        .ok_or_else(|| PerturbError::NoFreshKey(donor.table_id.clone()))?)
    .clone();
    let position = rng.random_range(0..=table.rows.len());
    let desc = PerturbationDescriptor {
        target_key: Some(row.key.clone()),
        donor_table_id: Some(donor.table_id.clone()),
        position: Some(position),
        inserted_row: Some(row.clone()),
        ..PerturbationDescriptor::bare(PerturbationKind::Insert, seed)
    };
    Ok((insert_row_at(table, row, position)?, desc))
}

fn replace_value(table: &Table, key: &str, index: usize, value: &str) -> Result<Table, PerturbError> {
    let pos = position_of(table, key)?;
    let mut rows = table.rows.clone();
    let slot = rows[pos]
        .values
        .get_mut(index)
        .ok_or_else(|| PerturbError::BadDescriptor(format!("value index {index} out of range")))?;
    *slot = value.to_string();
    Ok(rebuilt(table, rows))
}

/// Replaces one seeded-random value of a multi-value row with `donor_value`.
pub fn update_value(
    table: &Table,
    key: &str,
    donor_value: &str,
    seed: u64,
) -> Result<(Table, PerturbationDescriptor), PerturbError> {
    let row = table
        .row(key)
        .ok_or_else(|| PerturbError::KeyNotFound(key.to_string()))?;
    if !row.is_multi_value() {
        return Err(PerturbError::NotMultiValue(key.to_string()));
    }
    let index = rng_from(seed).random_range(0..row.values.len());
    let desc = PerturbationDescriptor {
        target_key: Some(key.to_string()),
        donor_value: Some(donor_value.to_string()),
        value_index: Some(index),
        ..PerturbationDescriptor::bare(PerturbationKind::Update, seed)
    };
    Ok((replace_value(table, key, index, donor_value)?, desc))
}

fn apply_permutation(table: &Table, perm: &[usize]) -> Result<Table, PerturbError> {
    let n = table.rows.len();
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
        return Err(PerturbError::BadDescriptor("not a permutation of the rows".into()));
    }
    Ok(rebuilt(table, perm.iter().map(|&i| table.rows[i].clone()).collect()))
}

/// Seeded shuffle; an identity draw is replaced by a rotation by one.
pub fn permute_rows(table: &Table, seed: u64) -> Result<(Table, PerturbationDescriptor), PerturbError> {
    let n = table.rows.len();
    if n < 2 {
        return Err(PerturbError::SingleRow);
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from(seed));
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        log::debug!("identity shuffle for {} (seed {seed}); rotating", table.table_id);
        perm.rotate_left(1);
    }
    let out = apply_permutation(table, &perm)?;
    let desc = PerturbationDescriptor {
        permutation: Some(perm),
        ..PerturbationDescriptor::bare(PerturbationKind::Permute, seed)
    };
    Ok((out, desc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelevanceMode {
    Relevant,
    Irrelevant,
}

/// Deletes one seeded-random row from the relevant or irrelevant pool.
pub fn delete_by_relevance(
    table: &Table,
    annotation: &AggregatedRelevance,
    mode: RelevanceMode,
    seed: u64,
) -> Result<(Table, PerturbationDescriptor), PerturbError> {
    if let Some(key) = annotation.relevant_keys.iter().find(|k| !table.has_key(k)) {
        log::debug!("annotation key {key:?} missing from {}", table.table_id);
        return Err(PerturbError::AnnotationMismatch {
            annotation: annotation.pair_id.clone(),
            table: table.table_id.clone(),
        });
    }
    let pool: Vec<&str> = table
        .keys()
        .filter(|k| annotation.relevant_keys.contains(*k) == (mode == RelevanceMode::Relevant))
        .collect();
    let key = *pool.choose(&mut rng_from(seed)).ok_or(PerturbError::EmptyPool)?;
    let kind = match mode {
        RelevanceMode::Relevant => PerturbationKind::DeleteRelevant,
        RelevanceMode::Irrelevant => PerturbationKind::DeleteIrrelevant,
    };
    Ok((
        delete_row(table, key)?,
        PerturbationDescriptor::deletion(kind, key, seed),
    ))
}

/// Reduces an edit sequence to the set of kinds that keys its graph.
pub fn plan_composite(ops: &[PerturbationKind]) -> Result<BTreeSet<EditKind>, PerturbError> {
    if ops.is_empty() {
        return Err(PerturbError::EmptyPlan);
    }
    ops.iter()
        .map(|k| k.edit_kind().ok_or(PerturbError::UnsupportedKind(*k)))
        .collect()
}

/// Re-applies one recorded edit.
pub fn replay(table: &Table, desc: &PerturbationDescriptor) -> Result<Table, PerturbError> {
    let missing = |field: &str| PerturbError::BadDescriptor(format!("{:?} without {field}", desc.kind));
    match desc.kind {
        PerturbationKind::Delete | PerturbationKind::DeleteRelevant | PerturbationKind::DeleteIrrelevant => {
            delete_row(table, desc.target_key.as_deref().ok_or_else(|| missing("target_key"))?)
        }
        PerturbationKind::Insert => {
            let row = desc.inserted_row.clone().ok_or_else(|| missing("inserted_row"))?;
            insert_row_at(table, row, desc.position.ok_or_else(|| missing("position"))?)
        }
        PerturbationKind::Update => replace_value(
            table,
            desc.target_key.as_deref().ok_or_else(|| missing("target_key"))?,
            desc.value_index.ok_or_else(|| missing("value_index"))?,
            desc.donor_value.as_deref().ok_or_else(|| missing("donor_value"))?,
        ),
        PerturbationKind::Permute => apply_permutation(
            table,
            desc.permutation.as_deref().ok_or_else(|| missing("permutation"))?,
        ),
    }
}

pub fn replay_all(table: &Table, steps: &[PerturbationDescriptor]) -> Result<Table, PerturbError> {
    steps.iter().try_fold(table.clone(), |t, d| replay(&t, d))
}

/// One unit of probing work: an original pair, the edits applied to its
/// table, the result and the graph that scores the label change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeInstance {
    pub probe_id: String,
    pub split: String,
    pub pair_id: String,
    pub hypothesis: String,
    pub gold: Label,
    pub original_table: Table,
    pub original_premise: String,
    /// Edits in application order; one entry except for composites.
    pub steps: Vec<PerturbationDescriptor>,
    pub perturbed_table: Table,
    pub premise: String,
    pub graph_id: String,
}

impl ProbeInstance {
    pub fn descriptor(&self) -> &PerturbationDescriptor {
        &self.steps[0]
    }

    /// Re-applies the steps and compares against the stored table.
    pub fn replays(&self) -> Result<bool, PerturbError> {
        Ok(replay_all(&self.original_table, &self.steps)? == self.perturbed_table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Deletion probes per pair; `None` deletes each row once.
    pub deletes_per_pair: Option<usize>,
    pub inserts_per_pair: usize,
    pub updates_per_pair: usize,
    pub permutes_per_pair: usize,
    pub relevance_deletes_per_pair: usize,
    pub composites_per_pair: usize,
    /// Edit order for composite probes.
    pub composite_plan: Vec<PerturbationKind>,
    /// Draw donors from every category instead of the pair's own.
    pub widen_donors: bool,
    pub flatten: FlattenConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            deletes_per_pair: None,
            inserts_per_pair: 1,
            updates_per_pair: 1,
            permutes_per_pair: 1,
            relevance_deletes_per_pair: 1,
            composites_per_pair: 1,
            composite_plan: vec![PerturbationKind::Delete, PerturbationKind::Insert],
            widen_donors: false,
            flatten: FlattenConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedProbe {
    pub pair_id: String,
    pub kind: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub probes: Vec<ProbeInstance>,
    pub skipped: Vec<SkippedProbe>,
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("{0} probes need relevance annotations")]
    MissingRelevance(String),
    #[error(transparent)]
    Plan(#[from] PerturbError),
    #[error("worker pool: {0}")]
    Pool(String),
}

struct Generator<'a> {
    ds: &'a Dataset,
    cfg: &'a ProbeConfig,
    run_seed: u64,
    relevance: Option<&'a BTreeMap<String, AggregatedRelevance>>,
    /// Tables by category, ordered by table id.
    by_category: BTreeMap<&'a str, Vec<&'a Table>>,
}

type Outcome = Result<ProbeInstance, SkippedProbe>;

impl<'a> Generator<'a> {
    fn donors(&self, table: &Table) -> Vec<&'a Table> {
        let pool: Vec<&'a Table> = if self.cfg.widen_donors {
            self.ds.tables.values().collect()
        } else {
            self.by_category
                .get(table.category.as_str())
                .cloned()
                .unwrap_or_default()
        };
        pool.into_iter().filter(|t| t.table_id != table.table_id).collect()
    }

    fn insert_step(&self, table: &Table, seed: u64) -> Result<(Table, PerturbationDescriptor), PerturbError> {
        let donors: Vec<&Table> = self
            .donors(table)
            .into_iter()
            .filter(|d| d.rows.iter().any(|r| !table.has_key(&r.key)))
            .collect();
        let donor = donors.choose(&mut rng_from(seed)).ok_or(PerturbError::NoDonor)?;
        insert_row(table, donor, derive_seed(seed, &["row"]))
    }

    fn update_step(&self, table: &Table, seed: u64) -> Result<(Table, PerturbationDescriptor), PerturbError> {
        let donors = self.donors(table);
        let mut options: Vec<(&str, Vec<&str>)> = Vec::new();
        for row in table.rows.iter().filter(|r| r.is_multi_value()) {
            let values: BTreeSet<&str> = donors
                .iter()
                .filter_map(|d| d.row(&row.key))
                .flat_map(|r| r.values.iter().map(String::as_str))
                .collect();
            if !values.is_empty() {
                options.push((&row.key, values.into_iter().collect()));
            }
        }
        if options.is_empty() {
            return Err(if table.rows.iter().any(Row::is_multi_value) {
                PerturbError::NoDonorValue
            } else {
                PerturbError::NoMultiValueRow(table.table_id.clone())
            });
        }
        let mut rng = rng_from(seed);
        let (key, values) = options.choose(&mut rng).unwrap();
        let value = values.choose(&mut rng).unwrap();
        update_value(table, key, value, derive_seed(seed, &["value"]))
    }

    fn step(
        &self,
        kind: PerturbationKind,
        table: &Table,
        pair_id: &str,
        seed: u64,
    ) -> Result<(Table, PerturbationDescriptor), PerturbError> {
        match kind {
            PerturbationKind::Delete => {
                let keys: Vec<&str> = table.keys().collect();
                let key = keys.choose(&mut rng_from(seed)).ok_or(PerturbError::LastRow)?;
                Ok((
                    delete_row(table, key)?,
                    PerturbationDescriptor::deletion(kind, key, seed),
                ))
            }
            PerturbationKind::Insert => self.insert_step(table, seed),
            PerturbationKind::Update => self.update_step(table, seed),
            PerturbationKind::Permute => permute_rows(table, seed),
            PerturbationKind::DeleteRelevant | PerturbationKind::DeleteIrrelevant => {
                let agg = self
                    .relevance
                    .and_then(|r| r.get(pair_id))
                    .ok_or(PerturbError::EmptyPool)?;
                let mode = if kind == PerturbationKind::DeleteRelevant {
                    RelevanceMode::Relevant
                } else {
                    RelevanceMode::Irrelevant
                };
                delete_by_relevance(table, agg, mode, seed)
            }
        }
    }

    fn finish(
        &self,
        pair: &ExamplePair,
        table: &Table,
        probe_id: String,
        steps: Vec<PerturbationDescriptor>,
        perturbed: Table,
        graph: &GraphKey,
    ) -> ProbeInstance {
        ProbeInstance {
            probe_id,
            split: self.ds.split_name.clone(),
            pair_id: pair.pair_id().to_string(),
            hypothesis: pair.hypothesis.text.clone(),
            gold: pair.gold(),
            original_table: table.clone(),
            original_premise: flatten_table_with(table, &self.cfg.flatten),
            premise: flatten_table_with(&perturbed, &self.cfg.flatten),
            perturbed_table: perturbed,
            steps,
            graph_id: graph.to_string(),
        }
    }

    fn for_pair(&self, pair: &ExamplePair, graph: &GraphKey) -> Vec<Outcome> {
        let Some(table) = self.ds.table_for(pair) else {
            return Vec::new();
        };
        let pair_id = pair.pair_id();
        let name = graph.to_string();
        let skip = |reason: PerturbError| SkippedProbe {
            pair_id: pair_id.to_string(),
            kind: name.clone(),
            reason: reason.to_string(),
        };
        let seed_for = |j: usize| derive_seed(self.run_seed, &[pair_id, &name, &j.to_string()]);
        let probe_id = |j: usize| format!("{pair_id}::{name}::{j}");

        if let GraphKey::Delete = graph {
            if self.cfg.deletes_per_pair.is_none() {
                return table
                    .keys()
                    .enumerate()
                    .map(|(j, key)| {
                        let desc = PerturbationDescriptor::deletion(PerturbationKind::Delete, key, seed_for(j));
                        let perturbed = delete_row(table, key).map_err(&skip)?;
                        Ok(self.finish(pair, table, probe_id(j), vec![desc], perturbed, graph))
                    })
                    .collect();
            }
        }

        let (count, plan): (usize, Vec<PerturbationKind>) = match graph {
            GraphKey::Delete => (self.cfg.deletes_per_pair.unwrap_or(0), vec![PerturbationKind::Delete]),
            GraphKey::Insert => (self.cfg.inserts_per_pair, vec![PerturbationKind::Insert]),
            GraphKey::Update => (self.cfg.updates_per_pair, vec![PerturbationKind::Update]),
            GraphKey::Permute => (self.cfg.permutes_per_pair, vec![PerturbationKind::Permute]),
            GraphKey::RelevantDeletion => (
                self.cfg.relevance_deletes_per_pair,
                vec![PerturbationKind::DeleteRelevant],
            ),
            GraphKey::IrrelevantDeletion => (
                self.cfg.relevance_deletes_per_pair,
                vec![PerturbationKind::DeleteIrrelevant],
            ),
            GraphKey::Composite(_) => (self.cfg.composites_per_pair, self.cfg.composite_plan.clone()),
        };
        if matches!(graph, GraphKey::RelevantDeletion | GraphKey::IrrelevantDeletion)
            && !self.relevance.is_some_and(|r| r.contains_key(pair_id))
        {
            return Vec::new();
        }
        (0..count)
            .map(|j| {
                let seed = seed_for(j);
                let mut current = table.clone();
                let mut steps = Vec::with_capacity(plan.len());
                for (s, kind) in plan.iter().enumerate() {
                    let step_seed = if plan.len() == 1 {
                        seed
                    } else {
                        derive_seed(seed, &[&s.to_string()])
                    };
                    let (next, desc) = self.step(*kind, &current, pair_id, step_seed).map_err(&skip)?;
                    current = next;
                    steps.push(desc);
                }
                Ok(self.finish(pair, table, probe_id(j), steps, current, graph))
            })
            .collect()
    }
}

/// Builds every probe of one graph class for a dataset. Output order follows
/// the dataset's pair order and does not depend on `workers`.
pub fn generate_probes(
    ds: &Dataset,
    graph: &GraphKey,
    cfg: &ProbeConfig,
    run_seed: u64,
    relevance: Option<&BTreeMap<String, AggregatedRelevance>>,
    workers: usize,
) -> Result<ProbeSet, GenerateError> {
    if matches!(graph, GraphKey::RelevantDeletion | GraphKey::IrrelevantDeletion) && relevance.is_none() {
        return Err(GenerateError::MissingRelevance(graph.to_string()));
    }
    if let GraphKey::Composite(kinds) = graph {
        let planned = plan_composite(&cfg.composite_plan)?;
        if &planned != kinds {
            return Err(GenerateError::Plan(PerturbError::BadDescriptor(format!(
                "composite plan covers {} but {graph} was requested",
                GraphKey::composite(planned)
            ))));
        }
    }
    let mut by_category: BTreeMap<&str, Vec<&Table>> = BTreeMap::new();
    for t in ds.tables.values() {
        by_category.entry(t.category.as_str()).or_default().push(t);
    }
    let gen = Generator {
        ds,
        cfg,
        run_seed,
        relevance,
        by_category,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| GenerateError::Pool(e.to_string()))?;
    let outcomes: Vec<Vec<Outcome>> = pool.install(|| ds.pairs.par_iter().map(|p| gen.for_pair(p, graph)).collect());
    let mut set = ProbeSet::default();
    for outcome in outcomes.into_iter().flatten() {
        match outcome {
            Ok(p) => set.probes.push(p),
            Err(s) => set.skipped.push(s),
        }
    }
    Ok(set)
}
