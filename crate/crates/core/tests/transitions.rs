use std::collections::BTreeSet;

use proptest::prelude::*;
use tabprobe::transitions::{
    all_edges, canonical_graph, classify_transition, compose_graphs, edge_name, parse_edge, relational_compose,
    EditKind, GraphRegistry, TransitionGraph,
};
use tabprobe::{GraphKey, Label, Verdict};

use Label::{Contradict as C, Entail as E, Neutral as N};

fn allowed(key: &GraphKey) -> BTreeSet<(Label, Label)> {
    canonical_graph(key).unwrap().allowed
}

fn set(edges: &[(Label, Label)]) -> BTreeSet<(Label, Label)> {
    edges.iter().copied().collect()
}

#[test]
fn canonical_edge_sets() {
    assert_eq!(
        allowed(&GraphKey::Delete),
        set(&[(E, E), (E, N), (N, N), (C, C), (C, N)])
    );
    assert_eq!(
        allowed(&GraphKey::Insert),
        set(&[(E, E), (N, N), (N, E), (N, C), (C, C)])
    );
    assert_eq!(
        allowed(&GraphKey::Update),
        set(&[(E, E), (E, C), (N, N), (N, C), (C, C)])
    );
    assert_eq!(allowed(&GraphKey::Permute), set(&[(E, E), (N, N), (C, C)]));
    assert_eq!(allowed(&GraphKey::IrrelevantDeletion), set(&[(E, E), (N, N), (C, C)]));
    assert_eq!(allowed(&GraphKey::RelevantDeletion), set(&[(E, N), (C, N), (N, N)]));
}

#[test]
fn every_canonical_graph_partitions_the_nine_edges() {
    let reg = GraphRegistry::default();
    for id in reg.ids() {
        let g = reg.get(id).unwrap();
        assert!(g.is_partition(), "{id}");
        assert_eq!(g.allowed.len() + g.prohibited.len(), 9);
    }
}

#[test]
fn delete_insert_composite_prohibits_only_the_polar_swaps() {
    let g = compose_graphs(&[EditKind::Delete, EditKind::Insert].into()).unwrap();
    assert_eq!(g.prohibited, set(&[(E, C), (C, E)]));
    for after in Label::ALL {
        assert_eq!(g.verdict(N, after), Verdict::Allowed);
    }
}

#[test]
fn delete_insert_update_composite_prohibits_contradict_to_entail() {
    let g = compose_graphs(&[EditKind::Delete, EditKind::Insert, EditKind::Update].into()).unwrap();
    assert_eq!(g.prohibited, set(&[(C, E)]));
}

#[test]
fn graph_keys_round_trip_through_strings() {
    for key in [
        GraphKey::Delete,
        GraphKey::Insert,
        GraphKey::Update,
        GraphKey::Permute,
        GraphKey::RelevantDeletion,
        GraphKey::IrrelevantDeletion,
        GraphKey::composite([EditKind::Delete, EditKind::Insert].into()),
    ] {
        let s = key.to_string();
        assert_eq!(s.parse::<GraphKey>().unwrap(), key, "{s}");
        assert!(canonical_graph(&key).is_ok());
    }
    assert_eq!(
        GraphKey::composite([EditKind::Delete].into()),
        GraphKey::Delete,
        "singleton composite collapses"
    );
    assert!("teleport".parse::<GraphKey>().is_err());
    assert!(compose_graphs(&BTreeSet::new()).is_err());
}

#[test]
fn edge_names_parse_back() {
    for e in all_edges() {
        assert_eq!(parse_edge(&edge_name(e)), Some(e));
    }
    assert_eq!(parse_edge("E-N"), None);
}

#[test]
fn dot_marks_prohibited_edges_red() {
    let g = canonical_graph(&GraphKey::Delete).unwrap();
    let bare = g.to_dot(None);
    assert!(bare.starts_with("digraph"));
    assert!(bare.contains("E -> N") && !bare.contains("E -> C"));
    let captions = all_edges().map(|e| (e, "1.00".to_string())).collect();
    let dot = g.to_dot(Some(&captions));
    assert!(dot.lines().any(|l| l.contains("E -> C") && l.contains("red")));
    assert!(!dot.lines().any(|l| l.contains("E -> N") && l.contains("red")));
    assert_eq!(dot.matches("->").count(), 9);
}

#[test]
fn custom_graphs_register_and_classify() {
    let mut reg = GraphRegistry::default();
    reg.register(TransitionGraph::from_allowed("frozen", [(E, E)]));
    let g = reg.get("frozen").unwrap();
    assert!(g.is_partition());
    assert_eq!(g.verdict(N, N), Verdict::Prohibited);
    assert_eq!(
        classify_transition(&GraphKey::Delete, E, C).unwrap(),
        Verdict::Prohibited
    );
}

fn edit_kind() -> impl Strategy<Value = EditKind> {
    prop_oneof![Just(EditKind::Delete), Just(EditKind::Insert), Just(EditKind::Update)]
}

fn edge_set() -> impl Strategy<Value = BTreeSet<(Label, Label)>> {
    proptest::collection::btree_set((0usize..3, 0usize..3), 0..=9).prop_map(|s| {
        s.into_iter()
            .map(|(a, b)| (Label::from_index(a).unwrap(), Label::from_index(b).unwrap()))
            .collect()
    })
}

proptest! {
    #[test]
    fn composites_partition_and_contain_each_member(kinds in proptest::collection::btree_set(edit_kind(), 1..=3)) {
        let g = compose_graphs(&kinds).unwrap();
        prop_assert!(g.is_partition());
        for k in &kinds {
            let member = canonical_graph(&GraphKey::single(*k)).unwrap();
            prop_assert!(member.allowed.is_subset(&g.allowed));
        }
        // union is order-free: same as folding in any order
        let reversed = kinds.iter().rev().fold(None::<TransitionGraph>, |acc, k| {
            let g = canonical_graph(&GraphKey::single(*k)).unwrap();
            Some(match acc { Some(a) => a.union(&g, "x"), None => g })
        }).unwrap();
        prop_assert_eq!(reversed.allowed, g.allowed);
    }

    #[test]
    fn from_allowed_is_always_a_partition(edges in edge_set()) {
        let g = TransitionGraph::from_allowed("g", edges.clone());
        prop_assert!(g.is_partition());
        for (a, b) in all_edges() {
            let v = g.verdict(a, b);
            prop_assert_eq!(v == Verdict::Allowed, edges.contains(&(a, b)));
        }
        for a in Label::ALL {
            let from: BTreeSet<Label> = g.allowed_from(a).collect();
            let expect: BTreeSet<Label> = edges.iter().filter(|e| e.0 == a).map(|e| e.1).collect();
            prop_assert_eq!(from, expect);
        }
    }

    #[test]
    fn relational_composition_matches_path_semantics(a in edge_set(), b in edge_set()) {
        let ga = TransitionGraph::from_allowed("a", a.clone());
        let gb = TransitionGraph::from_allowed("b", b.clone());
        let c = relational_compose(&ga, &gb);
        prop_assert!(c.is_partition());
        for (x, z) in all_edges() {
            let reachable = Label::ALL.iter().any(|y| a.contains(&(x, *y)) && b.contains(&(*y, z)));
            prop_assert_eq!(c.allowed.contains(&(x, z)), reachable);
        }
    }
}
