mod common;

use std::collections::{BTreeMap, BTreeSet};

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabprobe::annotations::{
    aggregate_dataset, aggregate_majority, annotator_agreement, distribution_stats, fleiss_kappa_report,
    key_usage_bias, AggregatedRelevance, AnnotationError, BiasConfig, KappaPooling, RelevanceAnnotation, Votes,
};
use tabprobe::stats::{fleiss_kappa, KappaBucket, KappaError};
use tabprobe::{AgreementReport, DistributionStats, KappaReport, KeyBiasReport, Row, Table};

/// Kappa from raw rater assignments: observed agreement by enumerating
/// ordered rater pairs, chance from pooled category proportions.
fn kappa_oracle(ratings: &[Vec<usize>], k: usize) -> f64 {
    let mut observed = 0.0;
    let mut totals = vec![0usize; k];
    let mut all = 0usize;
    for item in ratings {
        let (mut agree, mut pairs) = (0usize, 0usize);
        for (r, a) in item.iter().enumerate() {
            for (s, b) in item.iter().enumerate() {
                if r != s {
                    pairs += 1;
                    agree += usize::from(a == b);
                }
            }
            totals[*a] += 1;
            all += 1;
        }
        observed += agree as f64 / pairs as f64;
    }
    observed /= ratings.len() as f64;
    let chance: f64 = totals.iter().map(|&t| (t as f64 / all as f64).powi(2)).sum();
    (observed - chance) / (1.0 - chance)
}

fn counts(ratings: &[Vec<usize>], k: usize) -> Vec<Vec<u64>> {
    ratings
        .iter()
        .map(|item| {
            (0..k)
                .map(|j| item.iter().filter(|&&c| c == j).count() as u64)
                .collect()
        })
        .collect()
}

#[test]
fn kappa_matches_the_oracle_on_random_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240501);
    let mut checked = 0;
    while checked < 20 {
        let k = rng.random_range(2..=4);
        let items = rng.random_range(2..=15);
        let ratings: Vec<Vec<usize>> = (0..items)
            .map(|_| {
                let raters = rng.random_range(2..=7);
                let bias = rng.random_range(0..k);
                (0..raters)
                    .map(|_| {
                        if rng.random_bool(0.6) {
                            bias
                        } else {
                            rng.random_range(0..k)
                        }
                    })
                    .collect()
            })
            .collect();
        let got = fleiss_kappa::<f64>(&counts(&ratings, k)).unwrap();
        if got.degenerate {
            continue;
        }
        assert_abs_diff_eq!(got.kappa, kappa_oracle(&ratings, k), epsilon = 1e-9);
        checked += 1;
    }
}

#[test]
fn kappa_reference_table() {
    let table: Vec<Vec<u64>> = vec![
        vec![0, 0, 0, 0, 14],
        vec![0, 2, 6, 4, 2],
        vec![0, 0, 3, 5, 6],
        vec![0, 3, 9, 2, 0],
        vec![2, 2, 8, 1, 1],
        vec![7, 7, 0, 0, 0],
        vec![3, 2, 6, 3, 0],
        vec![2, 5, 3, 2, 2],
        vec![6, 5, 2, 1, 0],
        vec![0, 2, 2, 3, 7],
    ];
    let k = fleiss_kappa::<f64>(&table).unwrap();
    assert_abs_diff_eq!(k.kappa, 4211.0 / 20059.0, epsilon = 1e-12);
    assert_eq!(KappaBucket::of(k.kappa), KappaBucket::Fair);
}

#[test]
fn kappa_edge_cases() {
    let unanimous = vec![vec![5, 0], vec![0, 5], vec![5, 0]];
    let k = fleiss_kappa::<f64>(&unanimous).unwrap();
    assert_eq!(k.kappa, 1.0);
    assert!(!k.degenerate);
    let one_category = vec![vec![4, 0], vec![4, 0]];
    let k = fleiss_kappa::<f64>(&one_category).unwrap();
    assert!(k.degenerate);
    assert_eq!(k.kappa, 1.0);
    assert_eq!(fleiss_kappa::<f64>(&[]).unwrap_err(), KappaError::NoItems);
    assert_eq!(
        fleiss_kappa::<f64>(&[vec![1, 0]]).unwrap_err(),
        KappaError::InsufficientRaters(0)
    );
    assert_eq!(
        fleiss_kappa::<f64>(&[vec![1, 1], vec![1, 1, 0]]).unwrap_err(),
        KappaError::RaggedCategories(1)
    );
    let f32k = fleiss_kappa::<f32>(&[vec![3, 1], vec![1, 3]]).unwrap();
    assert_abs_diff_eq!(
        f64::from(f32k.kappa),
        fleiss_kappa::<f64>(&[vec![3, 1], vec![1, 3]]).unwrap().kappa,
        epsilon = 1e-6
    );
}

#[test]
fn kappa_buckets() {
    let cases = [
        (-0.3, KappaBucket::Poor),
        (0.0, KappaBucket::Poor),
        (0.05, KappaBucket::Slight),
        (0.2, KappaBucket::Slight),
        (0.35, KappaBucket::Fair),
        (0.5, KappaBucket::Moderate),
        (0.78, KappaBucket::Substantial),
        (0.8, KappaBucket::Substantial),
        (0.81, KappaBucket::Perfect),
        (1.0, KappaBucket::Perfect),
    ];
    for (k, b) in cases {
        assert_eq!(KappaBucket::of(k), b, "{k}");
    }
}

fn table() -> Table {
    Table::new(
        "T0",
        "Breakfast in America",
        "album",
        vec![
            Row::new("Released", ["29 March 1979"]),
            Row::new("Genre", ["pop", "art rock"]),
            Row::new("Length", ["46:06"]),
            Row::new("Label", ["A&M"]),
        ],
    )
    .unwrap()
}

fn anno(pair: &str, who: &str, keys: &[&str], oot: bool) -> RelevanceAnnotation {
    RelevanceAnnotation {
        pair_id: pair.into(),
        annotator_id: who.into(),
        selected_keys: keys.iter().map(|k| k.to_string()).collect(),
        oot,
    }
}

#[test]
fn majority_vote_needs_a_strict_majority() {
    let t = table();
    let annos = [
        anno("p", "a", &["Genre", "Length"], false),
        anno("p", "b", &["Genre"], true),
        anno("p", "c", &["Genre", "Length"], true),
        anno("p", "d", &["Released"], false),
    ];
    let refs: Vec<_> = annos.iter().collect();
    let agg = aggregate_majority(&refs, &t).unwrap();
    assert_eq!(agg.relevant_keys, BTreeSet::from(["Genre".to_string()]));
    assert_eq!(agg.per_key_votes["Length"], Votes { yes: 2, no: 2 });
    assert!(!agg.oot_majority);
    assert_eq!(agg.annotators, 4);

    let stray = [anno("p", "a", &["Tracks"], false)];
    assert!(matches!(
        aggregate_majority(&stray.iter().collect::<Vec<_>>(), &t),
        Err(AnnotationError::UnknownKey { key, .. }) if key == "Tracks"
    ));
    let mixed = [anno("p", "a", &[], false), anno("q", "b", &[], false)];
    assert!(matches!(
        aggregate_majority(&mixed.iter().collect::<Vec<_>>(), &t),
        Err(AnnotationError::MixedPairs(..))
    ));
    assert!(matches!(
        aggregate_majority(&[], &t),
        Err(AnnotationError::NoAnnotations(_))
    ));
}

#[test]
fn agreement_against_majority() {
    let t = table();
    let annos = vec![
        anno("p", "a", &["Genre"], false),
        anno("p", "b", &["Genre", "Label"], false),
        anno("p", "c", &["Genre"], false),
    ];
    let agg = aggregate_majority(&annos.iter().collect::<Vec<_>>(), &t).unwrap();
    let aggs = BTreeMap::from([("p".to_string(), agg)]);
    let report: AgreementReport = annotator_agreement(&annos, &aggs);
    assert_eq!(report.annotators, 3);
    let b = report.per_annotator.iter().find(|a| a.annotator_id == "b").unwrap();
    assert_abs_diff_eq!(b.scores.precision, 0.5);
    assert_abs_diff_eq!(b.scores.recall, 1.0);
    assert_abs_diff_eq!(b.scores.f1, 2.0 / 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(report.macro_avg.precision, (1.0 + 0.5 + 1.0) / 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(report.micro_avg.precision, 3.0 / 4.0, epsilon = 1e-12);
    assert_eq!(report.micro_counts.fp, 1);
}

#[test]
fn kappa_report_over_unanimous_pairs() {
    let t = table();
    let mut aggs = BTreeMap::new();
    for (pair, keys) in [("p", &["Genre"][..]), ("q", &["Genre", "Length"][..])] {
        let annos: Vec<_> = (0..5).map(|i| anno(pair, &format!("a{i}"), keys, false)).collect();
        aggs.insert(
            pair.to_string(),
            aggregate_majority(&annos.iter().collect::<Vec<_>>(), &t).unwrap(),
        );
    }
    aggs.insert("solo".into(), AggregatedRelevance::from_keys("solo", &t, ["Genre"]));
    let report: KappaReport = fleiss_kappa_report(&aggs, KappaPooling::Global).unwrap();
    assert_eq!(report.mean, 1.0);
    assert_eq!(report.std, 0.0);
    assert_eq!(report.skipped_pairs, ["solo"]);
    assert_eq!(report.pooled.unwrap().kappa, 1.0);
    let perfect = report
        .buckets
        .iter()
        .find(|b| b.bucket == KappaBucket::Perfect)
        .unwrap();
    assert_eq!((perfect.pairs, perfect.percent), (2, 100.0));
}

#[test]
fn mini_corpus_statistics() {
    for split in ["a1", "a2", "a3"] {
        let ds = common::mini(split);
        let annos: Vec<RelevanceAnnotation> =
            tabprobe::io::read_jsonl(&common::data_dir().join("mini").join(split).join("annotations.jsonl")).unwrap();
        let aggs = aggregate_dataset(&annos, &ds).unwrap();
        let report: KappaReport = fleiss_kappa_report(&aggs, KappaPooling::PerPair).unwrap();
        let total: f64 = report.buckets.iter().map(|b| b.percent).sum();
        assert_abs_diff_eq!(total, 100.0, epsilon = 1e-9);
        assert_eq!(
            report.buckets.iter().map(|b| b.pairs).sum::<usize>(),
            report.per_pair.len()
        );
        assert!(report.mean > 0.0 && report.mean < 1.0);

        let dist: DistributionStats = distribution_stats(&annos, &aggs, &ds);
        assert_eq!(dist.annotation_counts.values().sum::<usize>(), aggs.len());
        assert_eq!(dist.exact_match_at_least[&1], 100.0);
        let mut prev = 100.0;
        for v in dist.exact_match_at_least.values() {
            assert!(*v <= prev);
            prev = *v;
        }

        let bias: KeyBiasReport = key_usage_bias(
            &ds,
            &aggs,
            &BiasConfig {
                min_table_freq: 20,
                tail_fraction: 0.1,
            },
        );
        for (label, lb) in &bias.per_label {
            assert!(!lb.ranking.is_empty(), "{label:?}");
            for w in lb.ranking.windows(2) {
                assert!(w[0].ratio >= w[1].ratio);
            }
            assert_eq!(lb.overused.len(), lb.underused.len());
            for u in &lb.ranking {
                assert!(bias.table_frequency[&u.key] >= 20);
                assert!(u.relevant_pairs <= u.containing_pairs);
            }
        }
    }
}

#[test]
fn fixture_annotations_aggregate() {
    let ds = common::fixture("breakfast");
    let annos: Vec<RelevanceAnnotation> =
        tabprobe::io::read_jsonl(&common::data_dir().join("fixtures/breakfast/annotations.jsonl")).unwrap();
    let aggs = aggregate_dataset(&annos, &ds).unwrap();
    assert_eq!(aggs.len(), ds.pairs.len());
    assert!(aggs["H1"].relevant_keys.contains("Genre"));
    assert!(aggs["H1"].relevant_keys.contains("Length"));
}

proptest! {
    #[test]
    fn kappa_is_bounded_and_label_symmetric(items in proptest::collection::vec((0u64..6, 0u64..6), 1..12)) {
        let items: Vec<Vec<u64>> = items.into_iter().map(|(a, b)| vec![a + 1, b + 1]).collect();
        let k = fleiss_kappa::<f64>(&items).unwrap();
        prop_assert!(k.kappa <= 1.0 + 1e-12);
        prop_assert!(k.kappa >= -1.0 - 1e-12);
        let swapped: Vec<Vec<u64>> = items.iter().map(|v| vec![v[1], v[0]]).collect();
        prop_assert!((fleiss_kappa::<f64>(&swapped).unwrap().kappa - k.kappa).abs() < 1e-12);
    }

    #[test]
    fn majority_keys_have_strictly_more_yes_votes(masks in proptest::collection::vec(0u8..16, 1..8)) {
        let t = table();
        let keys: Vec<&str> = t.keys().collect();
        let annos: Vec<RelevanceAnnotation> = masks.iter().enumerate().map(|(i, m)| {
            let sel: Vec<&str> = keys.iter().enumerate().filter(|(j, _)| m >> j & 1 == 1).map(|(_, k)| *k).collect();
            anno("p", &format!("a{i}"), &sel, false)
        }).collect();
        let agg = aggregate_majority(&annos.iter().collect::<Vec<_>>(), &t).unwrap();
        for (k, v) in &agg.per_key_votes {
            prop_assert_eq!((v.yes + v.no) as usize, masks.len());
            prop_assert_eq!(agg.relevant_keys.contains(k), v.yes > v.no);
        }
    }
}
