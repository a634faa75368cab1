//! Pipelines behind the `tabprobe` binary.
//!
//! Layout of an output directory:
//!
//! ```text
//! <out>/<split>/probes-<graph>.jsonl      probe manifests
//! <out>/<split>/skipped-<graph>.jsonl
//! <out>/<split>/rewrites.jsonl            hypothesis rewrites
//! <out>/<split>/counterfactuals.jsonl
//! <out>/<split>/predictions.jsonl         model outputs for all of the above
//! <out>/<split>/predictions-hypothesis-only.jsonl
//! <out>/<split>/agreement.json
//! <out>/report.json, <out>/report/{tables,graphs}/
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tabprobe::annotations::{
    aggregate_dataset, annotator_agreement, distribution_stats, fleiss_kappa_report, key_usage_bias,
    AggregatedRelevance, AnnotationError, BiasConfig, KappaPooling, RelevanceAnnotation,
};
use tabprobe::counterfactual::{generate_counterfactuals, CounterfactualPair};
use tabprobe::harness::{
    self, hypothesis_only_requests, probe_requests, AdapterSpec, HarnessError, PredictionCache, PredictionRecord,
    PredictionRequest, RunOptions,
};
use tabprobe::hypothesis::{
    entity_pool_from_dataset, generate_rewrites, load_span_file, HypothesisRewrite, RewriteConfig,
};
use tabprobe::io::{self, ImportError};
use tabprobe::model::validate_dataset;
use tabprobe::perturb::{generate_probes, ProbeConfig, ProbeInstance};
use tabprobe::reporting::{
    align_counterfactuals, counterfactual_requests, emit_report, evidence_from_probes, index_records,
    pairing_quadrants, prohibited_tables, rewrite_outcomes, rewrite_requests, summarize_evidence, summarize_rewrites,
    tally_transitions, FullMatch, Report, ReportError, ReportFormat,
};
use tabprobe::transitions::{GraphKey, GraphRegistry};
use tabprobe::{AgreementReport, Dataset, DistributionStats, KappaReport, KeyBiasReport, Label};

pub const CACHE_ENV: &str = "TABPROBE_CACHE_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Import(#[from] ImportError),
    #[error("probe generation: {0}")]
    Generate(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("{0} validation problem(s)")]
    Invalid(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Stable diagnostic code.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "TP100",
            CliError::Config { .. } => "TP101",
            CliError::Import(_) => "TP200",
            CliError::Generate(_) => "TP210",
            CliError::Harness(HarnessError::ProtocolViolation(_)) => "TP300",
            CliError::Harness(HarnessError::AdapterUnavailable(_)) => "TP301",
            CliError::Harness(HarnessError::MalformedResponse(_)) => "TP302",
            CliError::Harness(HarnessError::Cache { .. }) => "TP303",
            CliError::Report(_) => "TP400",
            CliError::Annotation(_) => "TP500",
            CliError::Invalid(_) => "TP600",
            CliError::Io { .. } => "TP700",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 2,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Harness(HarnessError::ProtocolViolation(_)) => "ProtocolViolation",
            CliError::Harness(HarnessError::AdapterUnavailable(_)) => "AdapterUnavailable",
            CliError::Harness(HarnessError::MalformedResponse(_)) => "MalformedResponse",
            CliError::Harness(HarnessError::Cache { .. }) => "CacheError",
            CliError::Usage(_) => "UsageError",
            CliError::Config { .. } => "ConfigError",
            CliError::Import(_) => "ImportError",
            CliError::Generate(_) => "GenerateError",
            CliError::Report(_) => "ReportError",
            CliError::Annotation(_) => "AnnotationError",
            CliError::Invalid(_) => "ValidationError",
            CliError::Io { .. } => "IoError",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Declarative run configuration; command-line flags override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Directory holding one canonical split per subdirectory.
    pub data: Option<PathBuf>,
    pub splits: Vec<String>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub adapter: Option<AdapterSpec>,
    pub batch_size: Option<usize>,
    /// Drop heuristic rewrites when scoring.
    pub strict: bool,
    /// Require human rows to equal model rows for a full evidence match.
    pub exact_evidence: bool,
    pub kappa_pooling: KappaPooling,
    pub probes: ProbeConfig,
    pub rewrites: RewriteConfig,
    pub bias: BiasConfig,
    /// Optional per-split span annotations, `<split>` replaced by the name.
    pub spans: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(d) = &cfg.data {
            if !d.is_dir() {
                return Err(CliError::Config {
                    path: path.to_path_buf(),
                    message: format!("data directory {} does not exist", d.display()),
                });
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "tabprobe", version, about = "Perturbation probing for tabular NLI models")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset root with one directory per split.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Split name; repeat or comma-separate for several.
    #[arg(long, global = true, value_delimiter = ',')]
    pub split: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// mock, random:<seed>, file:<path>, http(s)://..., exec:<command>
    #[arg(long, global = true)]
    pub adapter: Option<String>,
    #[arg(long, global = true)]
    pub model_id: Option<String>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub hypothesis_only: bool,
    /// Exclude heuristic-tagged rewrites from scoring.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a raw split (table directory + pairs file) into canonical form.
    Import {
        #[arg(long)]
        tables: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Relevance annotations to copy alongside.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Write probe, rewrite and counterfactual manifests.
    GenProbes {
        /// Graph kind, `rewrites`, `counterfactual` or `all`; repeatable.
        #[arg(long, value_delimiter = ',')]
        kind: Vec<String>,
    },
    /// Send every manifest of each split through the adapter.
    Run,
    /// Tally transitions, evidence and quadrants into report.json.
    Score,
    /// Render report.json as markdown tables and DOT graphs.
    Report,
    /// Annotation agreement statistics.
    Agree,
    /// Check datasets and manifests.
    Validate,
}

/// Effective settings after merging config and flags.
#[derive(Debug, Clone)]
pub struct Settings {
    pub cfg: RunConfig,
    pub data: Option<PathBuf>,
    pub splits: Vec<String>,
    pub seed: Option<u64>,
    pub adapter: Option<AdapterSpec>,
    pub workers: usize,
    pub out: PathBuf,
    pub hypothesis_only: bool,
    pub strict: bool,
}

impl Settings {
    pub fn resolve(common: &Common) -> Result<Settings, CliError> {
        let cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let adapter = match &common.adapter {
            Some(s) => Some(AdapterSpec::parse_short(s, common.model_id.as_deref()).map_err(CliError::Usage)?),
            None => cfg.adapter.clone(),
        };
        let data = common.data.clone().or_else(|| cfg.data.clone());
        if let Some(d) = &data {
            if !d.is_dir() {
                return Err(CliError::Usage(format!(
                    "data directory {} does not exist",
                    d.display()
                )));
            }
        }
        let mut splits = if common.split.is_empty() {
            cfg.splits.clone()
        } else {
            common.split.clone()
        };
        if splits.is_empty() {
            if let Some(d) = &data {
                let mut found: Vec<String> = fs::read_dir(d)
                    .map_err(io_err(d))?
                    .filter_map(|e| e.ok())
                    .filter(|e| e.path().join("pairs.jsonl").is_file())
                    .map(|e| e.file_name().to_string_lossy().into_owned())
                    .collect();
                found.sort();
                splits = found;
            }
        }
        Ok(Settings {
            data,
            splits,
            seed: common.seed.or(cfg.seed),
            adapter,
            workers: common.workers.or(cfg.workers).unwrap_or(1).max(1),
            out: common
                .out
                .clone()
                .or_else(|| cfg.out.clone())
                .unwrap_or_else(|| PathBuf::from("tabprobe-out")),
            hypothesis_only: common.hypothesis_only,
            strict: common.strict || cfg.strict,
            cfg,
        })
    }

    fn need_data(&self) -> Result<&Path, CliError> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::Usage("no dataset: pass --data or set `data` in the config".into()))
    }

    fn need_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Usage("no seed: pass --seed or set `seed` in the config".into()))
    }

    fn need_splits(&self) -> Result<&[String], CliError> {
        if self.splits.is_empty() {
            Err(CliError::Usage("no splits: pass --split".into()))
        } else {
            Ok(&self.splits)
        }
    }

    pub fn split_dir(&self, split: &str) -> PathBuf {
        self.out.join(split)
    }

    fn load(&self, split: &str) -> Result<Dataset, CliError> {
        Ok(io::load_split(&self.need_data()?.join(split), split)?)
    }

    fn annotations(&self, split: &str) -> Result<Option<Vec<RelevanceAnnotation>>, CliError> {
        let path = self.need_data()?.join(split).join("annotations.jsonl");
        if path.is_file() {
            Ok(Some(io::read_jsonl(&path)?))
        } else {
            Ok(None)
        }
    }

    fn relevance(&self, split: &str, ds: &Dataset) -> Result<Option<BTreeMap<String, AggregatedRelevance>>, CliError> {
        match self.annotations(split)? {
            Some(annos) => Ok(Some(aggregate_dataset(&annos, ds)?)),
            None => Ok(None),
        }
    }

    pub fn cache_path(&self) -> PathBuf {
        std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.out.join("cache"))
            .join("predictions.jsonl")
    }

    fn run_options(&self) -> RunOptions {
        RunOptions {
            batch_size: self.cfg.batch_size.unwrap_or(RunOptions::default().batch_size),
            window: self.workers,
        }
    }
}

/// File name component for a graph id.
pub fn graph_file_stem(graph: &str) -> String {
    graph
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '-' })
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    io::write_jsonl(path, records).map_err(io_err(path))
}

fn probe_manifests(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("probes-") && n.ends_with(".jsonl"))
        })
        .collect();
    out.sort();
    Ok(out)
}

fn load_probes(dir: &Path) -> Result<Vec<ProbeInstance>, CliError> {
    let mut out = Vec::new();
    for path in probe_manifests(dir)? {
        out.extend(io::read_jsonl::<ProbeInstance>(&path)?);
    }
    Ok(out)
}

fn read_optional<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    if path.is_file() {
        Ok(io::read_jsonl(path)?)
    } else {
        Ok(Vec::new())
    }
}

const TABLE_KINDS: [&str; 5] = ["delete", "insert", "update", "permute", "composite:delete+insert"];

fn gen_probes(s: &Settings, kinds: &[String]) -> Result<(), CliError> {
    let seed = s.need_seed()?;
    let kinds: Vec<String> = if kinds.is_empty() || kinds.iter().any(|k| k == "all") {
        TABLE_KINDS
            .iter()
            .map(|k| k.to_string())
            .chain(["relevant-deletion", "irrelevant-deletion", "rewrites", "counterfactual"].map(String::from))
            .collect()
    } else {
        kinds.to_vec()
    };
    for split in s.need_splits()? {
        let ds = s.load(split)?;
        let relevance = s.relevance(split, &ds)?;
        let dir = s.split_dir(split);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for kind in &kinds {
            match kind.as_str() {
                "rewrites" => {
                    let spans = match &s.cfg.spans {
                        Some(pattern) => load_span_file(Path::new(&pattern.replace("<split>", split)))?,
                        None => BTreeMap::new(),
                    };
                    let pool = entity_pool_from_dataset(&ds);
                    let set = generate_rewrites(&ds, &s.cfg.rewrites, &pool, &spans, seed)
                        .map_err(|e| CliError::Generate(e.to_string()))?;
                    write_jsonl(&dir.join("rewrites.jsonl"), &set.rewrites)?;
                    write_jsonl(&dir.join("skipped-rewrites.jsonl"), &set.skipped)?;
                    log::info!("{split}: {} rewrites", set.rewrites.len());
                }
                "counterfactual" => {
                    let set = generate_counterfactuals(&ds, relevance.as_ref(), &s.cfg.probes.flatten, seed);
                    write_jsonl(&dir.join("counterfactuals.jsonl"), &set.pairs)?;
                    write_jsonl(&dir.join("skipped-counterfactuals.jsonl"), &set.skipped)?;
                    log::info!("{split}: {} counterfactuals", set.pairs.len());
                }
                other => {
                    let key: GraphKey = other.parse().map_err(|e: tabprobe::transitions::TransitionError| {
                        CliError::Usage(format!("--kind {other}: {e}"))
                    })?;
                    let needs_relevance = matches!(key, GraphKey::RelevantDeletion | GraphKey::IrrelevantDeletion);
                    if needs_relevance && relevance.is_none() {
                        log::warn!("{split}: no annotations, skipping {key}");
                        continue;
                    }
                    let set = generate_probes(&ds, &key, &s.cfg.probes, seed, relevance.as_ref(), s.workers)
                        .map_err(|e| CliError::Generate(e.to_string()))?;
                    let stem = graph_file_stem(&key.to_string());
                    write_jsonl(&dir.join(format!("probes-{stem}.jsonl")), &set.probes)?;
                    write_jsonl(&dir.join(format!("skipped-{stem}.jsonl")), &set.skipped)?;
                    log::info!("{split}: {} {key} probes", set.probes.len());
                }
            }
        }
    }
    Ok(())
}

fn dedup_ids(requests: Vec<PredictionRequest>) -> Vec<PredictionRequest> {
    let mut seen = std::collections::HashSet::new();
    requests.into_iter().filter(|r| seen.insert(r.id.clone())).collect()
}

fn run(s: &Settings) -> Result<(), CliError> {
    let spec = s
        .adapter
        .as_ref()
        .ok_or_else(|| CliError::Usage("no adapter: pass --adapter or set [adapter] in the config".into()))?;
    let adapter = spec.build()?;
    let cache_path = s.cache_path();
    let cache = PredictionCache::open(&cache_path)?;
    let opts = s.run_options();
    for split in s.need_splits()? {
        let dir = s.split_dir(split);
        let ds = s.load(split)?;
        let probes = load_probes(&dir)?;
        let rewrites: Vec<HypothesisRewrite> = read_optional(&dir.join("rewrites.jsonl"))?;
        let cfs: Vec<CounterfactualPair> = read_optional(&dir.join("counterfactuals.jsonl"))?;
        let mut requests = probe_requests(&probes);
        requests.extend(rewrite_requests(&rewrites, &ds, &s.cfg.probes.flatten));
        requests.extend(counterfactual_requests(&cfs, &ds, &s.cfg.probes.flatten));
        let requests = dedup_ids(requests);
        if requests.is_empty() {
            log::warn!("{split}: no manifests under {}", dir.display());
        }
        let (records, stats) = harness::run_batch_with(&requests, adapter.as_ref(), &cache, &opts)?;
        write_jsonl(&dir.join("predictions.jsonl"), &records)?;
        log::info!(
            "{split}: {} requests, {} cache hits, {} adapter batches",
            stats.requests,
            stats.cache_hits,
            stats.adapter_batches
        );
        if s.hypothesis_only {
            let (records, _) =
                harness::run_batch_with(&hypothesis_only_requests(&ds.pairs), adapter.as_ref(), &cache, &opts)?;
            write_jsonl(&dir.join("predictions-hypothesis-only.jsonl"), &records)?;
        }
    }
    Ok(())
}

fn score(s: &Settings) -> Result<Report, CliError> {
    let registry = GraphRegistry::default();
    let mut report = Report::default();
    let mut evaluations = Vec::new();
    let mut evidence_skipped = 0;
    let mut rewrite_results = Vec::new();
    for split in s.need_splits()? {
        let dir = s.split_dir(split);
        let ds = s.load(split)?;
        let records: Vec<PredictionRecord> = io::read_jsonl(&dir.join("predictions.jsonl"))?;
        let preds = index_records(&records);
        let probes = load_probes(&dir)?;
        let tallies = tally_transitions(&probes, &preds, &registry)?;
        report.transitions.extend(tallies.tallies);

        if let Some(rel) = s.relevance(split, &ds)? {
            let golds: BTreeMap<String, Label> = ds.pairs.iter().map(|p| (p.pair_id().to_string(), p.gold())).collect();
            let full = if s.cfg.exact_evidence {
                FullMatch::Exact
            } else {
                FullMatch::Superset
            };
            let delete_probes: Vec<ProbeInstance> = probes.iter().filter(|p| p.graph_id == "delete").cloned().collect();
            if !delete_probes.is_empty() {
                let ev = evidence_from_probes(&delete_probes, &preds, &golds, &rel, full)?;
                evaluations.extend(ev.evaluations);
                evidence_skipped += ev.skipped;
            }
        }

        let cfs: Vec<CounterfactualPair> = read_optional(&dir.join("counterfactuals.jsonl"))?;
        if !cfs.is_empty() {
            let hypo_path = dir.join("predictions-hypothesis-only.jsonl");
            let hypo = if hypo_path.is_file() {
                Some(index_records(&io::read_jsonl::<PredictionRecord>(&hypo_path)?))
            } else {
                None
            };
            let outcomes = align_counterfactuals(&cfs, &preds, hypo.as_ref())?;
            report.quadrants.push(pairing_quadrants(split, &outcomes));
        }

        let rewrites: Vec<HypothesisRewrite> = read_optional(&dir.join("rewrites.jsonl"))?;
        rewrite_results.extend(rewrite_outcomes(&rewrites, &preds)?);
    }
    report.prohibited = prohibited_tables(&report.transitions, &registry)?;
    if !evaluations.is_empty() {
        report.evidence = Some(summarize_evidence(evaluations, evidence_skipped));
    }
    if !rewrite_results.is_empty() {
        report.rewrites = Some(summarize_rewrites(&rewrite_results, s.strict));
    }
    let path = s.out.join("report.json");
    fs::create_dir_all(&s.out).map_err(io_err(&s.out))?;
    emit_report(&report, &s.out, &[ReportFormat::Json], &registry)?;
    log::info!("wrote {}", path.display());
    Ok(report)
}

fn render(s: &Settings) -> Result<Vec<PathBuf>, CliError> {
    let path = s.out.join("report.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let report: Report = serde_json::from_str(&text).map_err(|e| {
        CliError::Import(ImportError::Schema {
            location: path.display().to_string(),
            message: e.to_string(),
        })
    })?;
    Ok(emit_report(
        &report,
        &s.out.join("report"),
        &[ReportFormat::Json, ReportFormat::Markdown, ReportFormat::Dot],
        &GraphRegistry::default(),
    )?)
}

/// Everything `agree` writes for one split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub split: String,
    pub agreement: AgreementReport,
    pub kappa: KappaReport,
    pub distribution: DistributionStats,
    pub key_bias: KeyBiasReport,
}

fn agree(s: &Settings) -> Result<Vec<AgreementSummary>, CliError> {
    let mut out = Vec::new();
    for split in s.need_splits()? {
        let ds = s.load(split)?;
        let Some(annos) = s.annotations(split)? else {
            return Err(CliError::Usage(format!("split {split} has no annotations.jsonl")));
        };
        let aggregates = aggregate_dataset(&annos, &ds)?;
        let summary = AgreementSummary {
            split: split.clone(),
            agreement: annotator_agreement(&annos, &aggregates),
            kappa: fleiss_kappa_report(&aggregates, s.cfg.kappa_pooling)?,
            distribution: distribution_stats(&annos, &aggregates, &ds),
            key_bias: key_usage_bias(&ds, &aggregates, &s.cfg.bias),
        };
        let dir = s.split_dir(split);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join("agreement.json");
        let body = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        fs::write(&path, body).map_err(io_err(&path))?;
        println!(
            "{split}: kappa mean {:.2} (std {:.2}) over {} pairs; macro F1 {:.2}",
            summary.kappa.mean,
            summary.kappa.std,
            summary.kappa.per_pair.len(),
            summary.agreement.macro_avg.f1
        );
        out.push(summary);
    }
    Ok(out)
}

fn validate(s: &Settings) -> Result<(), CliError> {
    let mut problems = 0;
    for split in s.need_splits()? {
        let ds = s.load(split)?;
        for v in validate_dataset(&ds) {
            eprintln!("{split}: {v}");
            problems += 1;
        }
        let dir = s.split_dir(split);
        let mut ids = std::collections::HashSet::new();
        for p in load_probes(&dir)? {
            if !ids.insert(p.probe_id.clone()) {
                eprintln!("{split}: duplicate probe id {}", p.probe_id);
                problems += 1;
            }
            match p.replays() {
                Ok(true) => {}
                Ok(false) => {
                    eprintln!("{split}: probe {} does not replay to its stored table", p.probe_id);
                    problems += 1;
                }
                Err(e) => {
                    eprintln!("{split}: probe {}: {e}", p.probe_id);
                    problems += 1;
                }
            }
            if ds.pair(&p.pair_id).is_none() {
                eprintln!("{split}: probe {} names unknown pair {}", p.probe_id, p.pair_id);
                problems += 1;
            }
        }
    }
    if problems > 0 {
        Err(CliError::Invalid(problems))
    } else {
        println!("ok");
        Ok(())
    }
}

fn import(s: &Settings, tables: &Path, pairs: &Path, annotations: Option<&Path>) -> Result<(), CliError> {
    let split = match s.splits.as_slice() {
        [one] => one.clone(),
        _ => return Err(CliError::Usage("import needs exactly one --split".into())),
    };
    let ds = io::import_infotabs(tables, pairs, &split)?;
    let dir = s.out.join(&split);
    io::export_dataset(&ds, &dir)?;
    if let Some(a) = annotations {
        let annos: Vec<RelevanceAnnotation> = io::read_jsonl(a)?;
        write_jsonl(&dir.join("annotations.jsonl"), &annos)?;
    }
    println!(
        "{split}: {} tables, {} pairs -> {}",
        ds.tables.len(),
        ds.pairs.len(),
        dir.display()
    );
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let s = Settings::resolve(&cli.common)?;
    match &cli.command {
        Command::Import {
            tables,
            pairs,
            annotations,
        } => import(&s, tables, pairs, annotations.as_deref()),
        Command::GenProbes { kind } => gen_probes(&s, kind),
        Command::Run => run(&s),
        Command::Score => score(&s).map(|_| ()),
        Command::Report => render(&s).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
        Command::Agree => agree(&s).map(|_| ()),
        Command::Validate => validate(&s),
    }
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code: 0 success, 1 data error, 2 usage error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}] {}: {e}", e.code(), e.kind());
            e.exit_code()
        }
    }
}
