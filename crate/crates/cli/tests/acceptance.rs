//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line
//! with its wall time; the test fails if any criterion does.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabprobe::annotations::{
    aggregate_dataset, fleiss_kappa_report, AggregatedRelevance, KappaPooling, RelevanceAnnotation,
};
use tabprobe::harness::{
    mock_predict, oracle_script, probe_requests, run_batch, PredictionCache, UniformRandomAdapter,
};
use tabprobe::hypothesis::{
    detect_spans, insert_modifier_with_key, perturb_numeric, shift_temporal, substitute_entity, toggle_negation,
    EntityPool, Intent, Lexicon,
};
use tabprobe::io::{load_split, read_jsonl};
use tabprobe::model::{flatten_table, FlattenConfig};
use tabprobe::perturb::{delete_row, generate_probes, ProbeConfig, ProbeInstance};
use tabprobe::reporting::{
    evidence_eval_dataset, fmt2, index_records, parse_markdown_table, tally_transitions, EvidenceCategory, FullMatch,
    Report, TransitionTally,
};
use tabprobe::stats::{fleiss_kappa, KappaBucket};
use tabprobe::transitions::{all_edges, compose_graphs, EditKind, GraphRegistry};
use tabprobe::{Dataset, GraphKey, Hypothesis, KappaReport, Label, Verdict};

use Label::{Contradict as C, Entail as E, Neutral as N};

type Outcome = Result<String, String>;
type Check = Box<dyn Fn() -> Outcome>;

fn data() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

const SPLITS: [&str; 3] = ["a1", "a2", "a3"];

fn mini(split: &str) -> Dataset {
    load_split(&data().join("mini").join(split), split).unwrap()
}

fn fixture(name: &str) -> Dataset {
    load_split(&data().join("fixtures").join(name), name).unwrap()
}

fn relevance(ds: &Dataset) -> BTreeMap<String, AggregatedRelevance> {
    let path = data().join("mini").join(&ds.split_name).join("annotations.jsonl");
    let annos: Vec<RelevanceAnnotation> = read_jsonl(&path).unwrap();
    aggregate_dataset(&annos, ds).unwrap()
}

fn all_graphs() -> Vec<GraphKey> {
    vec![
        GraphKey::Delete,
        GraphKey::Insert,
        GraphKey::Update,
        GraphKey::Permute,
        GraphKey::RelevantDeletion,
        GraphKey::IrrelevantDeletion,
        GraphKey::composite([EditKind::Delete, EditKind::Insert].into()),
    ]
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn transition_algebra() -> Outcome {
    let reg = GraphRegistry::default();
    for id in reg.ids() {
        let g = reg.get(id).map_err(|e| e.to_string())?;
        ensure(g.is_partition() && g.allowed.len() + g.prohibited.len() == 9, || {
            format!("{id} is not a partition")
        })?;
    }
    for kinds in [
        vec![EditKind::Delete, EditKind::Insert],
        vec![EditKind::Delete, EditKind::Update],
        vec![EditKind::Insert, EditKind::Update],
        vec![EditKind::Delete, EditKind::Insert, EditKind::Update],
    ] {
        let g = compose_graphs(&kinds.iter().copied().collect()).map_err(|e| e.to_string())?;
        ensure(g.is_partition(), || format!("{kinds:?} composite is not a partition"))?;
    }
    let di = compose_graphs(&[EditKind::Delete, EditKind::Insert].into()).unwrap();
    let want: BTreeSet<_> = [(E, C), (C, E)].into();
    ensure(di.prohibited == want, || format!("D+I prohibits {:?}", di.prohibited))?;
    let from_neutral = Label::ALL
        .iter()
        .filter(|&&b| di.verdict(N, b) == Verdict::Prohibited)
        .count();
    ensure(from_neutral == 0, || {
        format!("{from_neutral} prohibited edges out of Neutral")
    })?;
    Ok(format!(
        "{} graphs partition; D+I prohibits E->C, C->E",
        reg.ids().count()
    ))
}

fn oracle_zero_violation() -> Outcome {
    let reg = GraphRegistry::default();
    let (mut probes, mut violations) = (0usize, 0usize);
    for split in SPLITS {
        let ds = mini(split);
        let rel = relevance(&ds);
        for graph in all_graphs() {
            let set =
                generate_probes(&ds, &graph, &ProbeConfig::default(), 7, Some(&rel), 4).map_err(|e| e.to_string())?;
            let script = oracle_script(&set.probes, &reg, "oracle");
            let records = run_batch(&probe_requests(&set.probes), &script, &PredictionCache::in_memory())
                .map_err(|e| e.to_string())?;
            let tally = tally_transitions(&set.probes, &index_records(&records), &reg).map_err(|e| e.to_string())?;
            probes += set.probes.len();
            violations += tally
                .observations
                .iter()
                .filter(|o| o.verdict == Verdict::Prohibited)
                .count();
        }
    }
    ensure(probes >= 5000, || format!("only {probes} probes"))?;
    ensure(violations == 0, || {
        format!("{violations} prohibited transitions over {probes} probes")
    })?;
    Ok(format!("0 prohibited over {probes} probes"))
}

fn random_calibration() -> Outcome {
    let reg = GraphRegistry::default();
    let graph = reg.get("delete").unwrap();
    let adapter = UniformRandomAdapter::new(11);
    let mut pooled = TransitionTally::new("delete", "mini");
    for split in SPLITS {
        let ds = mini(split);
        let set =
            generate_probes(&ds, &GraphKey::Delete, &ProbeConfig::default(), 7, None, 4).map_err(|e| e.to_string())?;
        let records = run_batch(&probe_requests(&set.probes), &adapter, &PredictionCache::in_memory())
            .map_err(|e| e.to_string())?;
        let tally = tally_transitions(&set.probes, &index_records(&records), &reg).map_err(|e| e.to_string())?;
        for o in tally.observations {
            pooled.record(o.before, o.after);
        }
    }
    let mut summary = Vec::new();
    for source in Label::ALL {
        let n = pooled.total(source);
        ensure(n >= 2000, || format!("{n} probes from {source:?}"))?;
        let expected = 100.0 * graph.prohibited.iter().filter(|e| e.0 == source).count() as f64 / 3.0;
        let got = pooled.prohibited_rate(source, &reg).unwrap();
        ensure((got - expected).abs() <= 5.0, || {
            format!("{source:?}: {got:.2}% vs {expected:.2}%")
        })?;
        summary.push(format!("{}={got:.1}%/{expected:.1}% (n={n})", source.name()));
    }
    Ok(summary.join(" "))
}

fn gen_probes(out: &Path, workers: &str) -> Result<(), String> {
    let res = Command::new(env!("CARGO_BIN_EXE_tabprobe"))
        .args(["gen-probes", "--data"])
        .arg(data().join("mini"))
        .args(["--seed", "7", "--workers", workers, "--out"])
        .arg(out)
        .env_remove(tabprobe_cli::CACHE_ENV)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(res.status.success(), || {
        String::from_utf8_lossy(&res.stderr).into_owned()
    })
}

fn manifests(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for split in SPLITS {
        for e in std::fs::read_dir(dir.join(split)).unwrap() {
            let p = e.unwrap().path();
            out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
        }
    }
    out
}

fn replay_determinism(root: &Path) -> Outcome {
    let runs = [("w1", "1"), ("w8", "8"), ("w1-again", "1")];
    for (name, workers) in runs {
        gen_probes(&root.join(name), workers)?;
    }
    let first = manifests(&root.join("w1"));
    ensure(first == manifests(&root.join("w8")), || "workers 1 and 8 differ".into())?;
    ensure(first == manifests(&root.join("w1-again")), || {
        "repeated run differs".into()
    })?;
    let mut replayed = 0;
    for (path, bytes) in &first {
        let name = path.file_name().unwrap().to_str().unwrap();
        if !name.starts_with("probes-") {
            continue;
        }
        for line in std::str::from_utf8(bytes).unwrap().lines() {
            let p: ProbeInstance = serde_json::from_str(line).map_err(|e| e.to_string())?;
            ensure(p.replays().unwrap_or(false), || {
                format!("{} does not replay", p.probe_id)
            })?;
            replayed += 1;
        }
    }
    Ok(format!(
        "{} files identical; {replayed} descriptors replay",
        first.len()
    ))
}

fn bridesmaids() -> Outcome {
    let ds = fixture("bridesmaids");
    let h = &ds.pairs[0].hypothesis;
    let spans =
        detect_spans(&h.text, Some("Bridesmaids"), ds.tables.get("bridesmaids"), None).map_err(|e| e.to_string())?;
    let lex = Lexicon::default();
    let flip = perturb_numeric(h, &spans, Intent::Flip, &lex, 4).map_err(|e| e.to_string())?;
    let keep = perturb_numeric(h, &spans, Intent::Preserve, &lex, 4).map_err(|e| e.to_string())?;
    ensure(
        flip.rewritten_text.contains("over 1.5 hrs") && flip.expected_label == E,
        || format!("flip: {flip:?}"),
    )?;
    ensure(
        keep.rewritten_text.contains("over 4.5 hrs") && keep.expected_label == C,
        || format!("preserve: {keep:?}"),
    )?;

    // (up target, down target) per adposition
    let table: [(&str, Label, Label); 6] = [
        ("over", C, E),
        ("under", E, C),
        ("more than", C, E),
        ("less than", E, C),
        ("before", E, C),
        ("after", C, E),
    ];
    for (surface, up, down) in table {
        let text = format!("The show ran {surface} 40 minutes.");
        let spans = detect_spans(&text, None, None, None).map_err(|e| e.to_string())?;
        for gold in [E, C] {
            let h = Hypothesis {
                pair_id: "x".into(),
                text: text.clone(),
                gold_label: gold,
            };
            for intent in [Intent::Flip, Intent::Preserve] {
                let r = perturb_numeric(&h, &spans, intent, &lex, 4).map_err(|e| format!("{surface}: {e}"))?;
                let want = if intent == Intent::Flip {
                    gold.opposite().unwrap()
                } else {
                    gold
                };
                let after: f64 = r
                    .edit
                    .after
                    .parse()
                    .map_err(|_| format!("{surface}: {}", r.edit.after))?;
                let (value, target) = if after > 40.0 { (60.0, up) } else { (20.0, down) };
                ensure(r.expected_label == want && target == want && after == value, || {
                    format!(
                        "{surface} {gold:?} {intent:?}: {} -> {:?}",
                        r.rewritten_text, r.expected_label
                    )
                })?;
            }
        }
    }
    Ok("1.5 hrs (E), 4.5 hrs (C); 6 adpositions".into())
}

fn breakfast_rewrites() -> Outcome {
    let ds = fixture("breakfast");
    let table = &ds.tables["breakfast-in-america"];
    let h1 = &ds.pair("H1").unwrap().hypothesis;
    let h2 = &ds.pair("H2").unwrap().hypothesis;
    let s1 = detect_spans(&h1.text, Some(&table.title), Some(table), None).map_err(|e| e.to_string())?;
    let s2 = detect_spans(&h2.text, Some(&table.title), Some(table), None).map_err(|e| e.to_string())?;
    let pool: EntityPool = [("number".to_string(), ["56".to_string()].into())].into();
    let cases = [
        (
            insert_modifier_with_key(h1, &s1, table, "Producer"),
            "Breakfast in America, whose Producer is Peter Henderson, is a pop album with a length of 46 minutes.",
            E,
        ),
        (
            substitute_entity(h1, &s1, &pool, Some(table), 0),
            "Breakfast in America is a pop album with a length of 56 minutes.",
            C,
        ),
        (
            toggle_negation(h2, &s2),
            "Breakfast in America was not released towards the end of 1979.",
            E,
        ),
        (
            shift_temporal(h2, &s2, 10),
            "Breakfast in America was released towards the end of 1989.",
            C,
        ),
    ];
    for (got, text, label) in cases {
        let r = got.map_err(|e| format!("{text}: {e}"))?;
        ensure(r.rewritten_text == text && r.expected_label == label, || {
            format!(
                "{:?} {:?}, wanted {text:?} {label:?}",
                r.rewritten_text, r.expected_label
            )
        })?;
    }
    Ok("4 rewrites".into())
}

/// Chance from pooled category shares; observed agreement by counting
/// agreeing ordered rater pairs.
fn kappa_oracle(ratings: &[Vec<usize>], k: usize) -> f64 {
    let mut totals = vec![0usize; k];
    let mut observed = 0.0;
    for item in ratings {
        let agree = item
            .iter()
            .flat_map(|a| item.iter().map(move |b| a == b))
            .filter(|&x| x)
            .count()
            - item.len();
        observed += agree as f64 / (item.len() * (item.len() - 1)) as f64;
        for &c in item {
            totals[c] += 1;
        }
    }
    observed /= ratings.len() as f64;
    let all: usize = totals.iter().sum();
    let chance: f64 = totals.iter().map(|&t| (t as f64 / all as f64).powi(2)).sum();
    (observed - chance) / (1.0 - chance)
}

fn fleiss() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 20 {
        let k = rng.random_range(2..=4);
        let raters = rng.random_range(2..=8);
        let ratings: Vec<Vec<usize>> = (0..rng.random_range(2..=20))
            .map(|_| (0..raters).map(|_| rng.random_range(0..k)).collect())
            .collect();
        let counts: Vec<Vec<u64>> = ratings
            .iter()
            .map(|item| {
                (0..k)
                    .map(|c| item.iter().filter(|&&x| x == c).count() as u64)
                    .collect()
            })
            .collect();
        let got = fleiss_kappa::<f64>(&counts).map_err(|e| e.to_string())?;
        if got.degenerate {
            continue;
        }
        let diff = (got.kappa - kappa_oracle(&ratings, k)).abs();
        ensure(diff <= 1e-9, || format!("fixture {checked}: off by {diff:e}"))?;
        worst = worst.max(diff);
        checked += 1;
    }
    let unanimous = fleiss_kappa::<f64>(&[vec![4, 0, 0], vec![0, 4, 0], vec![0, 0, 4]]).unwrap();
    ensure(unanimous.kappa == 1.0, || {
        format!("unanimous kappa {}", unanimous.kappa)
    })?;
    ensure(KappaBucket::of(0.78) == KappaBucket::Substantial, || {
        format!("{:?}", KappaBucket::of(0.78))
    })?;
    for split in SPLITS {
        let report: KappaReport = fleiss_kappa_report(&relevance(&mini(split)), KappaPooling::PerPair).unwrap();
        let total: f64 = report.buckets.iter().map(|b| b.percent).sum();
        ensure((total - 100.0).abs() <= 1e-9, || {
            format!("{split} buckets sum to {total}")
        })?;
    }
    Ok(format!(
        "20 fixtures within {worst:.1e}; unanimity 1; buckets sum to 100"
    ))
}

fn evidence() -> Outcome {
    let mut pairs = 0;
    for split in SPLITS {
        let ds = mini(split);
        let rel = relevance(&ds);
        let report = evidence_eval_dataset(
            &ds,
            &rel,
            &tabprobe::harness::MockAdapter::default(),
            &PredictionCache::in_memory(),
            &FlattenConfig::default(),
            FullMatch::Superset,
            &Default::default(),
        )
        .map_err(|e| e.to_string())?;
        let mut recount: HashMap<EvidenceCategory, usize> = HashMap::new();
        let mut sums = (0.0, 0.0);
        for e in &report.evaluations {
            let pair = ds.pair(&e.pair_id).unwrap();
            let table = ds.table_for(pair).unwrap();
            let hyp = &pair.hypothesis.text;
            let base = mock_predict(&flatten_table(table), hyp);
            let rows: BTreeSet<String> = table
                .keys()
                .filter(|k| delete_row(table, k).is_ok_and(|t| mock_predict(&flatten_table(&t), hyp) != base))
                .map(str::to_string)
                .collect();
            ensure(e.model_rows == rows, || {
                format!("{}: {:?} vs {rows:?}", e.pair_id, e.model_rows)
            })?;
            ensure(e.correct == (base == pair.gold()), || {
                format!("{}: correctness", e.pair_id)
            })?;
            let human = &rel[&e.pair_id].relevant_keys;
            let cat = if human.is_disjoint(&rows) {
                EvidenceCategory::Miss
            } else if human.is_subset(&rows) {
                EvidenceCategory::Full
            } else {
                EvidenceCategory::Partial
            };
            *recount.entry(cat).or_default() += 1;
            let hit = human.intersection(&rows).count() as f64;
            let precision = if rows.is_empty() { 0.0 } else { hit / rows.len() as f64 };
            let recall = hit / human.len() as f64;
            ensure(
                (e.precision - precision).abs() < 1e-12 && (e.recall - recall).abs() < 1e-12,
                || {
                    format!(
                        "{}: P/R {}/{} vs {precision}/{recall}",
                        e.pair_id, e.precision, e.recall
                    )
                },
            )?;
            sums.0 += precision;
            sums.1 += recall;
        }
        let n = report.evaluations.len() as f64;
        for c in &report.categories {
            let want = recount.get(&c.category).copied().unwrap_or(0);
            ensure(c.pairs == want, || {
                format!("{split} {:?}: {} vs {want}", c.category, c.pairs)
            })?;
            let share = 100.0 * want as f64 / n;
            ensure((c.percent - share).abs() < 1e-9, || {
                format!("{split} {:?} share {}", c.category, c.percent)
            })?;
        }
        ensure((report.precision - sums.0 / n).abs() < 1e-9, || {
            format!("{split} precision {}", report.precision)
        })?;
        ensure((report.recall - sums.1 / n).abs() < 1e-9, || {
            format!("{split} recall {}", report.recall)
        })?;
        pairs += report.evaluations.len();
    }
    Ok(format!("{pairs} pairs match the recount"))
}

fn tabprobe_ok(args: &[&str], root: &Path) -> Result<(), String> {
    let res = Command::new(env!("CARGO_BIN_EXE_tabprobe"))
        .args(args)
        .arg("--data")
        .arg(data().join("mini"))
        .arg("--out")
        .arg(root)
        .env_remove(tabprobe_cli::CACHE_ENV)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(res.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&res.stderr))
    })
}

/// File name component for a graph id or split.
fn stem(s: &str) -> String {
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

fn cell(s: &str) -> Result<f64, String> {
    s.parse().map_err(|_| format!("bad cell {s:?}"))
}

fn row_stochastic_reports(root: &Path) -> Outcome {
    tabprobe_ok(&["run", "--adapter", "mock", "--hypothesis-only"], root)?;
    tabprobe_ok(&["score"], root)?;
    tabprobe_ok(&["report"], root)?;
    let text = std::fs::read_to_string(root.join("report.json")).map_err(|e| e.to_string())?;
    let report: Report = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let back: Report = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    ensure(back == report, || "report.json does not round-trip".into())?;
    ensure(!report.transitions.is_empty() && !report.quadrants.is_empty(), || {
        "empty report".into()
    })?;

    let tables = root.join("report/tables");
    for t in &report.transitions {
        let md =
            std::fs::read_to_string(tables.join(format!("transitions_{}_{}.md", stem(&t.graph_id), stem(&t.split))))
                .map_err(|e| format!("{}/{}: {e}", t.graph_id, t.split))?;
        let rows = parse_markdown_table(&md);
        for (a, row) in Label::ALL.into_iter().zip(&rows[1..]) {
            if t.total(a) == 0 {
                continue;
            }
            let sum: f64 = Label::ALL.into_iter().map(|b| t.percent((a, b))).sum();
            ensure((sum - 100.0).abs() <= 0.01, || {
                format!("{} {} {a:?} sums to {sum}", t.graph_id, t.split)
            })?;
            for (b, c) in Label::ALL.into_iter().zip(&row[1..4]) {
                ensure(c == &fmt2(t.percent((a, b))), || {
                    format!("{} {} markdown cell {c}", t.graph_id, t.split)
                })?;
            }
            ensure(cell(&row[4])? == t.total(a) as f64, || "markdown totals".into())?;
        }
        let counted: u64 = all_edges().map(|e| t.count(e)).sum();
        ensure(counted == Label::ALL.iter().map(|&a| t.total(a)).sum::<u64>(), || {
            "edge counts disagree with totals".into()
        })?;
    }
    for q in &report.quadrants {
        let sum: f64 = q.cells.iter().map(|c| c.percent).sum();
        ensure((sum - 100.0).abs() <= 0.01, || {
            format!("quadrants {} sum to {sum}", q.split)
        })?;
        let md = std::fs::read_to_string(tables.join(format!("quadrants_{}.md", stem(&q.split))))
            .map_err(|e| e.to_string())?;
        let rows = parse_markdown_table(&md);
        let md_sum: f64 = rows[1..]
            .iter()
            .map(|r| cell(r.last().unwrap()))
            .sum::<Result<f64, _>>()?;
        ensure((md_sum - 100.0).abs() <= 0.01 * q.cells.len() as f64, || {
            format!("markdown quadrants sum to {md_sum}")
        })?;
    }
    for p in &report.prohibited {
        let md = std::fs::read_to_string(tables.join(format!("prohibited_{}.md", stem(&p.graph_id))))
            .map_err(|e| e.to_string())?;
        let rows = parse_markdown_table(&md);
        for (row, r) in rows[1..].iter().zip(&p.rows) {
            for (c, v) in row[1..].iter().zip(&r.values) {
                ensure(c == &fmt2(*v), || format!("prohibited_{} {c} vs {v}", p.graph_id))?;
            }
        }
    }
    Ok(format!(
        "{} tallies, {} quadrant tables",
        report.transitions.len(),
        report.quadrants.len()
    ))
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let criteria: Vec<(&str, u64, Check)> = vec![
        ("transition-algebra", 1, Box::new(transition_algebra)),
        ("oracle-zero-violation", 30, Box::new(oracle_zero_violation)),
        ("random-calibration", 60, Box::new(random_calibration)),
        (
            "replay-determinism",
            60,
            Box::new({
                let root = root.clone();
                move || replay_determinism(&root)
            }),
        ),
        ("bridesmaids-adpositions", 5, Box::new(bridesmaids)),
        ("breakfast-rewrites", 5, Box::new(breakfast_rewrites)),
        ("fleiss-kappa", 5, Box::new(fleiss)),
        ("evidence-recount", 60, Box::new(evidence)),
        (
            "row-stochastic-reports",
            120,
            Box::new({
                let root = root.join("w1");
                move || row_stochastic_reports(&root)
            }),
        ),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if took <= Duration::from_secs(budget) {
                Ok(msg)
            } else {
                Err(format!("took {took:.2?}, budget {budget}s"))
            }
        });
        let line = match &outcome {
            Ok(msg) => format!("PASS {name} ({took:.2?}): {msg}"),
            Err(msg) => format!("FAIL {name} ({took:.2?}): {msg}"),
        };
        writeln!(err, "{line}").unwrap();
        if outcome.is_err() {
            failed.push(line);
        }
    }
    assert!(failed.is_empty(), "{failed:#?}");
}
