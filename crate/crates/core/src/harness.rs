//! Batch prediction against a black-box model. Requests and responses use a
//! JSONL wire protocol; predictions are cached on disk by content hash.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{ExamplePair, Label};
use crate::perturb::ProbeInstance;
use crate::transitions::GraphRegistry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRequest {
    pub id: String,
    pub premise: String,
    pub hypothesis: String,
}

impl PredictionRequest {
    pub fn new(id: impl Into<String>, premise: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        PredictionRequest {
            id: id.into(),
            premise: premise.into(),
            hypothesis: hypothesis.into(),
        }
    }
}

pub type Scores = BTreeMap<Label, f64>;

/// One response line as sent by an adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl WireResponse {
    pub fn answer(id: &str, label: Label) -> Self {
        WireResponse {
            id: id.to_string(),
            label: Some(label.code().to_string()),
            scores: Some(
                one_hot(label)
                    .into_iter()
                    .map(|(l, p)| (l.code().to_string(), p))
                    .collect(),
            ),
            error: None,
        }
    }
}

pub fn one_hot(label: Label) -> Scores {
    Label::ALL
        .into_iter()
        .map(|l| (l, if l == label { 1.0 } else { 0.0 }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Scores>,
    pub model_id: String,
    pub content_hash: String,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Hex SHA-256 over the length-prefixed premise, hypothesis and model id.
pub fn content_hash(premise: &str, hypothesis: &str, model_id: &str) -> String {
    let mut hasher = Sha256::new();
    for part in [premise, hypothesis, model_id] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// A model reachable through the wire protocol.
pub trait Adapter: Send + Sync {
    fn model_id(&self) -> &str;

    /// Answers one batch. Validation happens in the harness.
    fn predict(&self, batch: &[PredictionRequest]) -> Result<Vec<WireResponse>, HarnessError>;

    /// Whether several batches may be in flight at once.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Spawns `command` per batch, writes request lines and a blank line, closes
/// stdin and reads response lines until end of output.
#[derive(Debug, Clone)]
pub struct ExecAdapter {
    pub command: Vec<String>,
    pub model_id: String,
}

impl Adapter for ExecAdapter {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn concurrent(&self) -> bool {
        false
    }

    fn predict(&self, batch: &[PredictionRequest]) -> Result<Vec<WireResponse>, HarnessError> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| HarnessError::AdapterUnavailable("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| HarnessError::AdapterUnavailable(format!("{program}: {e}")))?;
        let mut payload = String::new();
        for r in batch {
            payload.push_str(&serde_json::to_string(r).expect("request serializes"));
            payload.push('\n');
        }
        payload.push('\n');
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(payload.as_bytes()));
        let mut out = String::new();
        child
            .stdout
            .take()
            .expect("piped stdout")
            .read_to_string(&mut out)
            .map_err(|e| HarnessError::AdapterUnavailable(e.to_string()))?;
        let status = child
            .wait()
            .map_err(|e| HarnessError::AdapterUnavailable(e.to_string()))?;
        writer
            .join()
            .map_err(|_| HarnessError::AdapterUnavailable("writer thread panicked".into()))?
            .map_err(|e| HarnessError::AdapterUnavailable(format!("writing requests: {e}")))?;
        if !status.success() {
            return Err(HarnessError::AdapterUnavailable(format!(
                "{program} exited with {status}"
            )));
        }
        parse_response_lines(&out)
    }
}

pub fn parse_response_lines(text: &str) -> Result<Vec<WireResponse>, HarnessError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| HarnessError::MalformedResponse(format!("{e}: {l}"))))
        .collect()
}

/// POSTs the batch as a JSON array and expects an array back.
#[derive(Debug)]
pub struct HttpAdapter {
    pub endpoint: String,
    pub model_id: String,
    agent: ureq::Agent,
}

impl HttpAdapter {
    pub fn new(endpoint: &str, model_id: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        HttpAdapter {
            endpoint: endpoint.to_string(),
            model_id: model_id.to_string(),
            agent,
        }
    }
}

impl Adapter for HttpAdapter {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn predict(&self, batch: &[PredictionRequest]) -> Result<Vec<WireResponse>, HarnessError> {
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(batch)
            .map_err(|e| HarnessError::AdapterUnavailable(format!("{}: {e}", self.endpoint)))?;
        response
            .body_mut()
            .read_json::<Vec<WireResponse>>()
            .map_err(|e| HarnessError::MalformedResponse(e.to_string()))
    }
}

/// Pre-computed predictions; ids it does not know are left unanswered.
#[derive(Debug, Clone, Default)]
pub struct TableAdapter {
    pub labels: HashMap<String, Label>,
    pub model_id: String,
}

impl TableAdapter {
    /// Reads `id<TAB>label` lines.
    pub fn from_tsv(path: &Path, model_id: &str) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::AdapterUnavailable(format!("{}: {e}", path.display())))?;
        let mut labels = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || HarnessError::MalformedResponse(format!("{}:{}: {line:?}", path.display(), i + 1));
            let (id, label) = line.split_once('\t').ok_or_else(bad)?;
            let label = strict_label(label.trim()).ok_or_else(bad)?;
            if labels.insert(id.to_string(), label).is_some() {
                return Err(HarnessError::MalformedResponse(format!(
                    "{}: id {id} listed twice",
                    path.display()
                )));
            }
        }
        Ok(TableAdapter {
            labels,
            model_id: model_id.to_string(),
        })
    }
}

impl Adapter for TableAdapter {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn predict(&self, batch: &[PredictionRequest]) -> Result<Vec<WireResponse>, HarnessError> {
        Ok(batch
            .iter()
            .filter_map(|r| self.labels.get(&r.id).map(|l| WireResponse::answer(&r.id, *l)))
            .collect())
    }
}

fn negation_marker() -> &'static Regex {
    static R: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    R.get_or_init(|| Regex::new(r"(?i)\b(?:not|never|no)\b|n't\b").expect("static regex"))
}

fn digit_runs() -> &'static Regex {
    static R: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    R.get_or_init(|| Regex::new(r"\d+").expect("static regex"))
}

/// Deterministic rule-based model: negation gives Contradict; no numbers or
/// no premise gives Neutral; every hypothesis digit run found in the
/// premise gives Entail; otherwise Contradict.
pub fn mock_predict(premise: &str, hypothesis: &str) -> Label {
    if negation_marker().is_match(hypothesis) {
        return Label::Contradict;
    }
    let wanted: Vec<&str> = digit_runs().find_iter(hypothesis).map(|m| m.as_str()).collect();
    if wanted.is_empty() || premise.is_empty() {
        return Label::Neutral;
    }
    let present: HashSet<&str> = digit_runs().find_iter(premise).map(|m| m.as_str()).collect();
    if wanted.iter().all(|w| present.contains(w)) {
        Label::Entail
    } else {
        Label::Contradict
    }
}

#[derive(Debug, Default)]
pub struct MockAdapter {
    pub calls: AtomicUsize,
}

impl Adapter for MockAdapter {
    fn model_id(&self) -> &str {
        "mock"
    }

    fn predict(&self, batch: &[PredictionRequest]) -> Result<Vec<WireResponse>, HarnessError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(batch
            .iter()
            .map(|r| WireResponse::answer(&r.id, mock_predict(&r.premise, &r.hypothesis)))
            .collect())
    }
}

/// Labels drawn uniformly from a hash of (seed, premise, hypothesis).
#[derive(Debug)]
pub struct UniformRandomAdapter {
    pub seed: u64,
    model_id: String,
}

impl UniformRandomAdapter {
    pub fn new(seed: u64) -> Self {
        UniformRandomAdapter {
            seed,
            model_id: format!("uniform-random:{seed}"),
        }
    }

    pub fn label_for(&self, premise: &str, hypothesis: &str) -> Label {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        for part in [premise, hypothesis] {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part.as_bytes());
        }
        let digest = hasher.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        Label::from_index((u64::from_le_bytes(head) % 3) as usize).expect("index below 3")
    }
}

impl Adapter for UniformRandomAdapter {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn predict(&self, batch: &[PredictionRequest]) -> Result<Vec<WireResponse>, HarnessError> {
        Ok(batch
            .iter()
            .map(|r| WireResponse::answer(&r.id, self.label_for(&r.premise, &r.hypothesis)))
            .collect())
    }
}

/// Answers from a fixed id to label map, like [`TableAdapter`] built in
/// memory.
pub type ScriptedAdapter = TableAdapter;

/// A script that predicts gold on originals and, for each probe, a label
/// its graph allows after gold (gold itself when the premise is unchanged).
/// The choice among allowed labels is a hash of the request content.
pub fn oracle_script(probes: &[ProbeInstance], registry: &GraphRegistry, model_id: &str) -> ScriptedAdapter {
    let mut labels = HashMap::new();
    for p in probes {
        labels.insert(original_id(&p.pair_id), p.gold);
        let after = if p.premise == p.original_premise {
            p.gold
        } else {
            let graph = registry.get(&p.graph_id).expect("probe graph registered");
            let allowed: Vec<Label> = graph.allowed_from(p.gold).collect();
            let h = content_hash(&p.premise, &p.hypothesis, model_id);
            let pick = usize::from_str_radix(&h[..8], 16).expect("hex digest") % allowed.len();
            allowed[pick]
        };
        labels.insert(p.probe_id.clone(), after);
    }
    TableAdapter {
        labels,
        model_id: model_id.to_string(),
    }
}

/// How to reach a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum AdapterSpec {
    Exec {
        command: Vec<String>,
        model_id: String,
    },
    Http {
        endpoint: String,
        model_id: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
    File {
        path: PathBuf,
        model_id: String,
    },
    Mock,
    UniformRandom {
        seed: u64,
    },
}

fn default_timeout_secs() -> u64 {
    60
}

impl AdapterSpec {
    /// Parses the short forms `mock`, `random:<seed>`, `file:<path>`,
    /// `http:<url>` and `exec:<command line>`.
    pub fn parse_short(s: &str, model_id: Option<&str>) -> Result<AdapterSpec, String> {
        let (mode, rest) = s.split_once(':').unwrap_or((s, ""));
        let model = |default: &str| model_id.unwrap_or(default).to_string();
        match mode {
            "mock" => Ok(AdapterSpec::Mock),
            "random" | "uniform-random" => rest
                .parse()
                .map(|seed| AdapterSpec::UniformRandom { seed })
                .map_err(|_| format!("bad seed in {s:?}")),
            "file" if !rest.is_empty() => Ok(AdapterSpec::File {
                path: PathBuf::from(rest),
                model_id: model(rest),
            }),
            "http" | "https" if !rest.is_empty() => Ok(AdapterSpec::Http {
                endpoint: s.to_string(),
                model_id: model(s),
                timeout_secs: default_timeout_secs(),
            }),
            "exec" if !rest.trim().is_empty() => Ok(AdapterSpec::Exec {
                command: rest.split_whitespace().map(str::to_string).collect(),
                model_id: model(rest.trim()),
            }),
            _ => Err(format!("unrecognised adapter {s:?}")),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Adapter>, HarnessError> {
        Ok(match self {
            AdapterSpec::Exec { command, model_id } => Box::new(ExecAdapter {
                command: command.clone(),
                model_id: model_id.clone(),
            }),
            AdapterSpec::Http {
                endpoint,
                model_id,
                timeout_secs,
            } => Box::new(HttpAdapter::new(endpoint, model_id, Duration::from_secs(*timeout_secs))),
            AdapterSpec::File { path, model_id } => Box::new(TableAdapter::from_tsv(path, model_id)?),
            AdapterSpec::Mock => Box::new(MockAdapter::default()),
            AdapterSpec::UniformRandom { seed } => Box::new(UniformRandomAdapter::new(*seed)),
        })
    }
}

/// One cached prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub content_hash: String,
    pub model_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Scores>,
}

/// Append-only JSONL log keyed by content hash, compacted when opened.
#[derive(Debug, Default)]
pub struct PredictionCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<()>,
}

impl PredictionCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self, HarnessError> {
        let cache_err = |source| HarnessError::Cache {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(cache_err)?;
        }
        let mut order = Vec::new();
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(cache_err)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(cache_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(e) => {
                        if !entries.contains_key(&e.content_hash) {
                            order.push(e.content_hash.clone());
                            entries.insert(e.content_hash.clone(), e);
                        }
                    }
                    Err(err) => log::warn!("{}:{}: skipping unreadable cache line: {err}", path.display(), i + 1),
                }
            }
            let tmp = path.with_extension("compact.tmp");
            let mut buf = String::new();
            for h in &order {
                buf.push_str(&serde_json::to_string(&entries[h]).expect("entry serializes"));
                buf.push('\n');
            }
            fs::write(&tmp, buf).map_err(cache_err)?;
            fs::rename(&tmp, path).map_err(cache_err)?;
        }
        Ok(PredictionCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, hash: &str) -> Option<CacheEntry> {
        self.entries.read().expect("cache lock").get(hash).cloned()
    }

    /// Appends all entries in one write, then publishes them.
    pub fn insert_all(&self, new: Vec<CacheEntry>) -> Result<(), HarnessError> {
        if new.is_empty() {
            return Ok(());
        }
        let _guard = self.writer.lock().expect("cache writer lock");
        if let Some(path) = &self.path {
            let mut buf = String::new();
            for e in &new {
                buf.push_str(&serde_json::to_string(e).expect("entry serializes"));
                buf.push('\n');
            }
            let cache_err = |source| HarnessError::Cache {
                path: path.clone(),
                source,
            };
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(cache_err)?;
            file.write_all(buf.as_bytes()).map_err(cache_err)?;
            file.flush().map_err(cache_err)?;
        }
        let mut entries = self.entries.write().expect("cache lock");
        for e in new {
            entries.entry(e.content_hash.clone()).or_insert(e);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub batch_size: usize,
    /// Batches in flight at once for adapters that allow it.
    pub window: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            batch_size: 64,
            window: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub requests: usize,
    pub cache_hits: usize,
    pub adapter_batches: usize,
}

fn strict_label(s: &str) -> Option<Label> {
    Label::ALL.into_iter().find(|l| l.code() == s)
}

fn validate_batch(
    batch: &[PredictionRequest],
    responses: Vec<WireResponse>,
) -> Result<Vec<(Label, Option<Scores>)>, HarnessError> {
    let index: HashMap<&str, usize> = batch.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let mut answers: Vec<Option<(Label, Option<Scores>)>> = vec![None; batch.len()];
    for resp in responses {
        let &i = index
            .get(resp.id.as_str())
            .ok_or_else(|| HarnessError::ProtocolViolation(format!("response for unrequested id {:?}", resp.id)))?;
        if let Some(err) = resp.error {
            return Err(HarnessError::MalformedResponse(format!(
                "adapter error for {:?}: {err}",
                resp.id
            )));
        }
        let raw = resp
            .label
            .ok_or_else(|| HarnessError::MalformedResponse(format!("no label for {:?}", resp.id)))?;
        let label = strict_label(&raw)
            .ok_or_else(|| HarnessError::MalformedResponse(format!("label {raw:?} for {:?}", resp.id)))?;
        let scores = resp.scores.map(|s| validate_scores(&resp.id, s)).transpose()?;
        if answers[i].replace((label, scores)).is_some() {
            return Err(HarnessError::ProtocolViolation(format!(
                "id {:?} answered twice",
                resp.id
            )));
        }
    }
    answers
        .into_iter()
        .zip(batch)
        .map(|(a, r)| a.ok_or_else(|| HarnessError::ProtocolViolation(format!("no answer for id {:?}", r.id))))
        .collect()
}

fn validate_scores(id: &str, raw: BTreeMap<String, f64>) -> Result<Scores, HarnessError> {
    let mut scores = Scores::new();
    for (k, v) in raw {
        let label =
            strict_label(&k).ok_or_else(|| HarnessError::MalformedResponse(format!("score key {k:?} for {id:?}")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(HarnessError::MalformedResponse(format!("score {v} for {id:?}")));
        }
        scores.insert(label, v);
    }
    let total: f64 = scores.values().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(HarnessError::MalformedResponse(format!(
            "scores for {id:?} sum to {total}"
        )));
    }
    Ok(scores)
}

pub fn run_batch(
    requests: &[PredictionRequest],
    adapter: &dyn Adapter,
    cache: &PredictionCache,
) -> Result<Vec<PredictionRecord>, HarnessError> {
    run_batch_with(requests, adapter, cache, &RunOptions::default()).map(|(r, _)| r)
}

/// Answers every request, consulting the cache first. Misses are sent in
/// batches of distinct content; nothing is cached unless every batch
/// succeeds and validates.
pub fn run_batch_with(
    requests: &[PredictionRequest],
    adapter: &dyn Adapter,
    cache: &PredictionCache,
    opts: &RunOptions,
) -> Result<(Vec<PredictionRecord>, RunStats), HarnessError> {
    let model_id = adapter.model_id().to_string();
    let mut seen = HashSet::new();
    for r in requests {
        if !seen.insert(r.id.as_str()) {
            return Err(HarnessError::ProtocolViolation(format!(
                "duplicate request id {:?}",
                r.id
            )));
        }
    }
    let hashes: Vec<String> = requests
        .iter()
        .map(|r| content_hash(&r.premise, &r.hypothesis, &model_id))
        .collect();
    let mut stats = RunStats {
        requests: requests.len(),
        ..RunStats::default()
    };
    let mut misses: Vec<PredictionRequest> = Vec::new();
    let mut miss_hashes: Vec<&str> = Vec::new();
    let mut queued = HashSet::new();
    for (r, h) in requests.iter().zip(&hashes) {
        if cache.get(h).is_some() {
            stats.cache_hits += 1;
        } else if queued.insert(h.as_str()) {
            misses.push(r.clone());
            miss_hashes.push(h);
        }
    }
    let chunks: Vec<(&[PredictionRequest], &[&str])> = misses
        .chunks(opts.batch_size.max(1))
        .zip(miss_hashes.chunks(opts.batch_size.max(1)))
        .collect();
    stats.adapter_batches = chunks.len();
    let answer = |(batch, hs): &(&[PredictionRequest], &[&str])| -> Result<Vec<CacheEntry>, HarnessError> {
        let answers = validate_batch(batch, adapter.predict(batch)?)?;
        Ok(answers
            .into_iter()
            .zip(hs.iter())
            .map(|((label, scores), h)| CacheEntry {
                content_hash: h.to_string(),
                model_id: model_id.clone(),
                label,
                scores,
            })
            .collect())
    };
    let results: Vec<Result<Vec<CacheEntry>, HarnessError>> =
        if adapter.concurrent() && opts.window > 1 && chunks.len() > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(opts.window)
                .build()
                .map_err(|e| HarnessError::AdapterUnavailable(e.to_string()))?;
            pool.install(|| chunks.par_iter().map(answer).collect())
        } else {
            chunks.iter().map(answer).collect()
        };
    let mut fresh = Vec::with_capacity(misses.len());
    for r in results {
        fresh.extend(r?);
    }
    let fresh_map: HashMap<String, CacheEntry> = fresh.iter().map(|e| (e.content_hash.clone(), e.clone())).collect();
    cache.insert_all(fresh)?;
    let records = requests
        .iter()
        .zip(hashes)
        .map(|(r, h)| {
            let entry = fresh_map
                .get(&h)
                .cloned()
                .or_else(|| cache.get(&h))
                .expect("every hash answered or cached");
            PredictionRecord {
                id: r.id.clone(),
                label: entry.label,
                scores: entry.scores,
                model_id: model_id.clone(),
                content_hash: h,
            }
        })
        .collect();
    Ok((records, stats))
}

pub fn hypothesis_only_requests(pairs: &[ExamplePair]) -> Vec<PredictionRequest> {
    pairs
        .iter()
        .map(|p| PredictionRequest::new(p.pair_id(), "", p.hypothesis.text.clone()))
        .collect()
}

/// Request id for an unperturbed pair.
pub fn original_id(pair_id: &str) -> String {
    format!("orig::{pair_id}")
}

/// One request per distinct original pair plus one per probe.
pub fn probe_requests(probes: &[ProbeInstance]) -> Vec<PredictionRequest> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for p in probes {
        if seen.insert(p.pair_id.as_str()) {
            out.push(PredictionRequest::new(
                original_id(&p.pair_id),
                &p.original_premise,
                &p.hypothesis,
            ));
        }
    }
    out.extend(
        probes
            .iter()
            .map(|p| PredictionRequest::new(&p.probe_id, &p.premise, &p.hypothesis)),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reqs() -> Vec<PredictionRequest> {
        vec![
            PredictionRequest::new("a", "The Length of X is 46:06.", "X is 46 minutes long."),
            PredictionRequest::new("b", "The Length of X is 46:06.", "X is 56 minutes long."),
            PredictionRequest::new("c", "", "X is an album."),
        ]
    }

    #[test]
    fn mock_rules() {
        let labels: Vec<Label> = reqs().iter().map(|r| mock_predict(&r.premise, &r.hypothesis)).collect();
        assert_eq!(labels, [Label::Entail, Label::Contradict, Label::Neutral]);
        assert_eq!(mock_predict("", "X is not 3."), Label::Contradict);
    }

    #[test]
    fn second_run_is_all_hits() {
        let cache = PredictionCache::in_memory();
        let mock = MockAdapter::default();
        let (first, s1) = run_batch_with(&reqs(), &mock, &cache, &RunOptions::default()).unwrap();
        let (second, s2) = run_batch_with(&reqs(), &mock, &cache, &RunOptions::default()).unwrap();
        assert_eq!(first, second);
        assert_eq!((s1.cache_hits, s2.cache_hits), (0, 3));
        assert_eq!(mock.calls.load(Ordering::Relaxed), 1);
    }

    #[test]
    fn unknown_id_is_a_violation() {
        struct Rogue;
        impl Adapter for Rogue {
            fn model_id(&self) -> &str {
                "rogue"
            }
            fn predict(&self, _: &[PredictionRequest]) -> Result<Vec<WireResponse>, HarnessError> {
                Ok(vec![WireResponse::answer("zzz", Label::Entail)])
            }
        }
        let cache = PredictionCache::in_memory();
        let err = run_batch(&reqs(), &Rogue, &cache).unwrap_err();
        assert!(matches!(err, HarnessError::ProtocolViolation(_)));
        assert!(cache.is_empty());
    }

    #[test]
    fn scores_must_sum_to_one() {
        let raw = BTreeMap::from([("E".to_string(), 0.5), ("N".to_string(), 0.2)]);
        assert!(validate_scores("x", raw).is_err());
    }

    #[test]
    fn short_adapter_forms() {
        assert_eq!(AdapterSpec::parse_short("mock", None).unwrap(), AdapterSpec::Mock);
        assert_eq!(
            AdapterSpec::parse_short("random:7", None).unwrap(),
            AdapterSpec::UniformRandom { seed: 7 }
        );
        assert!(AdapterSpec::parse_short("carrier-pigeon", None).is_err());
    }
}
