//! Allowed/prohibited label-transition graphs for each perturbation class,
//! their composition, and classification of observed transitions.
//!
//! Graphs are plain data: a registry maps a graph id to the set of allowed
//! (before, after) edges, and every other edge is prohibited.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Label;

use Label::{Contradict as C, Entail as E, Neutral as N};

pub type Edge = (Label, Label);

/// Every ordered label pair, row-major in `Label::ALL` order.
pub fn all_edges() -> impl Iterator<Item = Edge> {
    Label::ALL
        .into_iter()
        .flat_map(|a| Label::ALL.into_iter().map(move |b| (a, b)))
}

pub fn edge_name((a, b): Edge) -> String {
    format!("{}->{}", a.code(), b.code())
}

pub fn parse_edge(s: &str) -> Option<Edge> {
    let (a, b) = s.split_once("->")?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

/// Table edits that may be composed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Delete,
    Insert,
    Update,
}

impl EditKind {
    pub fn name(self) -> &'static str {
        match self {
            EditKind::Delete => "delete",
            EditKind::Insert => "insert",
            EditKind::Update => "update",
        }
    }
}

/// Identifies the graph governing a probe.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GraphKey {
    Delete,
    Insert,
    Update,
    Permute,
    RelevantDeletion,
    IrrelevantDeletion,
    Composite(BTreeSet<EditKind>),
}

impl GraphKey {
    pub fn single(kind: EditKind) -> GraphKey {
        match kind {
            EditKind::Delete => GraphKey::Delete,
            EditKind::Insert => GraphKey::Insert,
            EditKind::Update => GraphKey::Update,
        }
    }

    /// Singleton composites collapse to the plain graph key.
    pub fn composite(kinds: BTreeSet<EditKind>) -> GraphKey {
        if kinds.len() == 1 {
            GraphKey::single(*kinds.iter().next().unwrap())
        } else {
            GraphKey::Composite(kinds)
        }
    }
}

impl fmt::Display for GraphKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphKey::Delete => f.write_str("delete"),
            GraphKey::Insert => f.write_str("insert"),
            GraphKey::Update => f.write_str("update"),
            GraphKey::Permute => f.write_str("permute"),
            GraphKey::RelevantDeletion => f.write_str("relevant-deletion"),
            GraphKey::IrrelevantDeletion => f.write_str("irrelevant-deletion"),
            GraphKey::Composite(kinds) => {
                let names: Vec<_> = kinds.iter().map(|k| k.name()).collect();
                write!(f, "composite:{}", names.join("+"))
            }
        }
    }
}

impl FromStr for GraphKey {
    type Err = TransitionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = match s {
            "delete" => GraphKey::Delete,
            "insert" => GraphKey::Insert,
            "update" => GraphKey::Update,
            "permute" => GraphKey::Permute,
            "relevant-deletion" => GraphKey::RelevantDeletion,
            "irrelevant-deletion" => GraphKey::IrrelevantDeletion,
            _ => {
                let rest = s
                    .strip_prefix("composite:")
                    .ok_or_else(|| TransitionError::UnknownKind(s.to_string()))?;
                let mut kinds = BTreeSet::new();
                for part in rest.split('+') {
                    kinds.insert(match part {
                        "delete" => EditKind::Delete,
                        "insert" => EditKind::Insert,
                        "update" => EditKind::Update,
                        _ => return Err(TransitionError::UnknownKind(s.to_string())),
                    });
                }
                if kinds.is_empty() {
                    return Err(TransitionError::UnknownKind(s.to_string()));
                }
                GraphKey::composite(kinds)
            }
        };
        Ok(key)
    }
}

impl Serialize for GraphKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GraphKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error("unknown transition graph {0:?}")]
    UnknownKind(String),
    #[error("cannot compose an empty set of edits")]
    EmptyComposite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Allowed,
    Prohibited,
}

/// Partition of the nine ordered label pairs into allowed and prohibited.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionGraph {
    pub graph_id: String,
    pub allowed: BTreeSet<Edge>,
    pub prohibited: BTreeSet<Edge>,
}

impl TransitionGraph {
    /// Everything not listed as allowed is prohibited, so the partition
    /// invariant holds by construction.
    pub fn from_allowed(graph_id: impl Into<String>, allowed: impl IntoIterator<Item = Edge>) -> Self {
        let allowed: BTreeSet<Edge> = allowed.into_iter().collect();
        let prohibited = all_edges().filter(|e| !allowed.contains(e)).collect();
        TransitionGraph {
            graph_id: graph_id.into(),
            allowed,
            prohibited,
        }
    }

    pub fn verdict(&self, before: Label, after: Label) -> Verdict {
        if self.prohibited.contains(&(before, after)) {
            Verdict::Prohibited
        } else {
            Verdict::Allowed
        }
    }

    pub fn is_partition(&self) -> bool {
        self.allowed.is_disjoint(&self.prohibited)
            && self.allowed.len() + self.prohibited.len() == 9
            && all_edges().all(|e| self.allowed.contains(&e) || self.prohibited.contains(&e))
    }

    pub fn allowed_from(&self, before: Label) -> impl Iterator<Item = Label> + '_ {
        Label::ALL
            .into_iter()
            .filter(move |after| self.allowed.contains(&(before, *after)))
    }

    /// Edge-union: an edge is allowed if any member graph allows it.
    pub fn union(&self, other: &TransitionGraph, graph_id: impl Into<String>) -> TransitionGraph {
        TransitionGraph::from_allowed(graph_id, self.allowed.union(&other.allowed).copied())
    }

    /// Graphviz rendering; prohibited edges are drawn red. `labels` adds an
    /// edge caption and restricts drawing to the captioned edges when given.
    pub fn to_dot(&self, labels: Option<&BTreeMap<Edge, String>>) -> String {
        let mut out = String::new();
        out.push_str(&format!("digraph \"{}\" {{\n", self.graph_id));
        for l in Label::ALL {
            out.push_str(&format!("  {} [label=\"{}\"];\n", l.code(), l.name()));
        }
        for edge in all_edges() {
            let caption = labels.and_then(|m| m.get(&edge));
            let prohibited = self.prohibited.contains(&edge);
            if labels.is_some() && caption.is_none() {
                continue;
            }
            if labels.is_none() && prohibited {
                // prohibited edges only appear when observed
                continue;
            }
            let mut attrs = Vec::new();
            if let Some(c) = caption {
                attrs.push(format!("label=\"{c}\""));
            }
            if prohibited {
                attrs.push("color=red".to_string());
            }
            let attrs = if attrs.is_empty() {
                String::new()
            } else {
                format!(" [{}]", attrs.join(", "))
            };
            out.push_str(&format!("  {} -> {}{};\n", edge.0.code(), edge.1.code(), attrs));
        }
        out.push_str("}\n");
        out
    }
}

/// Allowed edges per base perturbation class.
const BASE_GRAPHS: &[(&str, &[Edge])] = &[
    ("delete", &[(E, E), (E, N), (N, N), (C, C), (C, N)]),
    ("insert", &[(E, E), (N, N), (N, E), (N, C), (C, C)]),
    ("update", &[(E, E), (E, C), (N, N), (N, C), (C, C)]),
    ("permute", &[(E, E), (N, N), (C, C)]),
    ("relevant-deletion", &[(E, N), (C, N), (N, N)]),
    ("irrelevant-deletion", &[(E, E), (N, N), (C, C)]),
];

/// Graph lookup table. Composite keys are resolved by edge-union of their
/// members, so only base classes need registering.
#[derive(Debug, Clone)]
pub struct GraphRegistry {
    graphs: BTreeMap<String, TransitionGraph>,
}

impl Default for GraphRegistry {
    fn default() -> Self {
        let graphs = BASE_GRAPHS
            .iter()
            .map(|(id, allowed)| {
                (
                    id.to_string(),
                    TransitionGraph::from_allowed(*id, allowed.iter().copied()),
                )
            })
            .collect();
        GraphRegistry { graphs }
    }
}

impl GraphRegistry {
    /// Adds or replaces a graph under its own id.
    pub fn register(&mut self, graph: TransitionGraph) {
        self.graphs.insert(graph.graph_id.clone(), graph);
    }

    pub fn get(&self, graph_id: &str) -> Result<TransitionGraph, TransitionError> {
        if let Some(g) = self.graphs.get(graph_id) {
            return Ok(g.clone());
        }
        match graph_id.parse::<GraphKey>()? {
            GraphKey::Composite(kinds) => self.compose(&kinds),
            other => self
                .graphs
                .get(&other.to_string())
                .cloned()
                .ok_or_else(|| TransitionError::UnknownKind(graph_id.to_string())),
        }
    }

    pub fn compose(&self, kinds: &BTreeSet<EditKind>) -> Result<TransitionGraph, TransitionError> {
        let mut members = kinds.iter();
        let first = members.next().ok_or(TransitionError::EmptyComposite)?;
        let mut graph = self.get(first.name())?;
        for kind in members {
            graph = graph.union(&self.get(kind.name())?, "");
        }
        graph.graph_id = GraphKey::composite(kinds.clone()).to_string();
        Ok(graph)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.graphs.keys().map(String::as_str)
    }
}

fn default_registry() -> &'static GraphRegistry {
    static REGISTRY: std::sync::OnceLock<GraphRegistry> = std::sync::OnceLock::new();
    REGISTRY.get_or_init(GraphRegistry::default)
}

pub fn canonical_graph(key: &GraphKey) -> Result<TransitionGraph, TransitionError> {
    default_registry().get(&key.to_string())
}

pub fn classify_transition(key: &GraphKey, before: Label, after: Label) -> Result<Verdict, TransitionError> {
    Ok(canonical_graph(key)?.verdict(before, after))
}

pub fn compose_graphs(kinds: &BTreeSet<EditKind>) -> Result<TransitionGraph, TransitionError> {
    default_registry().compose(kinds)
}

/// Relational composition (first `a`, then `b`): an edge x->z is allowed when
/// some y has x->y allowed in `a` and y->z allowed in `b`. Diagnostic only;
/// composite probes are scored with the edge-union graph.
pub fn relational_compose(a: &TransitionGraph, b: &TransitionGraph) -> TransitionGraph {
    let allowed = all_edges().filter(|&(x, z)| {
        Label::ALL
            .into_iter()
            .any(|y| a.allowed.contains(&(x, y)) && b.allowed.contains(&(y, z)))
    });
    TransitionGraph::from_allowed(format!("{};{}", a.graph_id, b.graph_id), allowed)
}

/// One scored probe outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionObservation {
    pub probe_ref: String,
    pub before: Label,
    pub after: Label,
    pub verdict: Verdict,
}
