//! Orchestration: configuration, the evaluation loop, result persistence,
//! and report emission.
//!
//! Each test case flows through candidate construction, prompt assembly (or a
//! baseline), completion via the cache, parsing, and sanitization. One JSONL
//! record is appended per case as soon as it finishes; at the end of a run the
//! file is rewritten sorted by trajectory id so equal configurations produce
//! identical files (latency and token fields aside for live backends).
//! Rerunning with the same output path skips already-recorded cases.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{recommend_dist, recommend_popu};
use crate::candidates::{build_candidate_set, sample_candidates, OrderingStrategy};
use crate::dataset::{
    build_stats, chronological_split, load_dataset, make_test_case, summarize, Catalog, DataError,
    DatasetSplit, IngestSummary, LoadedDataset, SplitRatios, TestCase, TrainStats,
};
use crate::llm::{
    cached_complete, mock_backend, ChatBackend, ChatRequest, HttpBackend, LlmError, MockBackend,
    MockPolicy, DEFAULT_BASE_URL, DEFAULT_MODEL,
};
use crate::metrics::{aggregate, EvalOutcome, EvalReport, MetricsError};
use crate::prompting::{build_prompt, PromptBundle, RequirementFlags};
use crate::response::{parse_recommendation, sanitize, ParseStatus};
use crate::seed::subseed;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("I/O failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: malformed result record: {reason}")]
    MalformedResultRecord { path: PathBuf, line: usize, reason: String },
    #[error("no API credential: set LLM_API_KEY or choose a mock backend")]
    MissingCredential,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// The recommendation method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Prompt a chat model with history, candidates, and requirements.
    Llmmove,
    /// Most-visited candidates first.
    Popu,
    /// Nearest candidates first.
    Dist,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Llmmove => "llmmove",
            Method::Popu => "popu",
            Method::Dist => "dist",
        };
        f.write_str(s)
    }
}

/// Which completion backend serves `llmmove` prompts.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    /// OpenAI-compatible HTTP endpoint; credential from `LLM_API_KEY`.
    Live,
    /// Deterministic mock ranking by the distances printed in the prompt.
    MockNearest,
    /// Deterministic mock ranking by train-split popularity.
    MockPopular,
    /// Mock returning prose without JSON, for robustness runs.
    MockGarbage,
    /// Mock replaying scripted texts from a JSONL file.
    MockFixture(PathBuf),
}

impl std::fmt::Display for BackendChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendChoice::Live => f.write_str("live"),
            BackendChoice::MockNearest => f.write_str("mock-nearest"),
            BackendChoice::MockPopular => f.write_str("mock-popular"),
            BackendChoice::MockGarbage => f.write_str("mock-garbage"),
            BackendChoice::MockFixture(path) => write!(f, "mock-fixture:{}", path.display()),
        }
    }
}

impl std::str::FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(BackendChoice::Live),
            "mock-nearest" => Ok(BackendChoice::MockNearest),
            "mock-popular" => Ok(BackendChoice::MockPopular),
            "mock-garbage" => Ok(BackendChoice::MockGarbage),
            other => match other.strip_prefix("mock-fixture:") {
                Some(path) if !path.is_empty() => Ok(BackendChoice::MockFixture(PathBuf::from(path))),
                _ => Err(format!(
                    "unknown backend {other:?}; expected live, mock-nearest, mock-popular, \
                     mock-garbage, or mock-fixture:<path>"
                )),
            },
        }
    }
}

impl Serialize for BackendChoice {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BackendChoice {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything one evaluation run depends on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub ratios: SplitRatios,
    pub seed: u64,
    pub n_candidates: usize,
    pub ordering: OrderingStrategy,
    pub method: Method,
    pub backend: BackendChoice,
    pub flags: RequirementFlags,
    pub m_long_term: usize,
    pub top_k: usize,
    pub model: String,
    pub base_url: Option<String>,
    pub temperature: f64,
    pub max_test_cases: Option<usize>,
    pub concurrency: usize,
    pub cache_dir: Option<PathBuf>,
    pub strict: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::new(),
            out: PathBuf::new(),
            ratios: SplitRatios::default(),
            seed: 0,
            n_candidates: 100,
            ordering: OrderingStrategy::DistAsc,
            method: Method::Llmmove,
            backend: BackendChoice::Live,
            flags: RequirementFlags::ALL,
            m_long_term: 40,
            top_k: 10,
            model: DEFAULT_MODEL.to_string(),
            base_url: None,
            temperature: 0.0,
            max_test_cases: None,
            concurrency: 4,
            cache_dir: None,
            strict: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.ratios.validate().map_err(HarnessError::Config)?;
        if self.concurrency == 0 {
            return Err(HarnessError::Config("concurrency must be at least 1".into()));
        }
        if self.top_k == 0 {
            return Err(HarnessError::Config("top-k must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(HarnessError::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }

    /// The deterministic subset of the configuration echoed into reports.
    /// Output paths, cache location, and concurrency are excluded: they do
    /// not influence results.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "dataset": self.dataset.display().to_string(),
            "ratios": self.ratios,
            "seed": self.seed,
            "n_candidates": self.n_candidates,
            "ordering": self.ordering,
            "method": self.method,
            "backend": self.backend,
            "flags": self.flags,
            "m_long_term": self.m_long_term,
            "top_k": self.top_k,
            "model": self.model,
            "temperature": self.temperature,
            "max_test_cases": self.max_test_cases,
        })
    }
}

/// One JSONL line in the results file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CaseRecord {
    pub trajectory_id: String,
    pub user_id: String,
    pub ground_truth: String,
    pub method: Method,
    pub flags: RequirementFlags,
    pub ordering: OrderingStrategy,
    pub seed: u64,
    pub recommended_ids: Vec<String>,
    pub rank: Option<u32>,
    pub parse_status: ParseStatus,
    pub reason: String,
    pub model: String,
    pub temperature: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

impl CaseRecord {
    pub fn outcome(&self) -> EvalOutcome {
        EvalOutcome {
            trajectory_id: self.trajectory_id.clone(),
            rank: self.rank,
            parse_status: self.parse_status,
            latency_ms: self.latency_ms,
            prompt_tokens: self.prompt_tokens,
            completion_tokens: self.completion_tokens,
            method: self.method.to_string(),
            flags: self.flags,
            ordering: self.ordering,
        }
    }
}

/// Loaded dataset artifacts shared by every case of a run.
pub struct Prepared {
    pub loaded: LoadedDataset,
    pub split: DatasetSplit,
    pub stats: TrainStats,
    pub cases: Vec<TestCase>,
}

/// Loads the dataset, splits it, builds train statistics, and materializes
/// the evaluation cases in chronological order (subsampled when configured).
pub fn prepare(config: &RunConfig) -> Result<Prepared, HarnessError> {
    config.validate()?;
    let loaded = load_dataset(&config.dataset, config.strict)?;
    let split = chronological_split(&loaded.checkins, config.ratios)?;
    let stats = build_stats(&split.train, &loaded.catalog);

    let mut cases: Vec<TestCase> = split
        .eligible_test_trajectories()
        .map(|t| make_test_case(t, &loaded.catalog))
        .collect::<Result<_, _>>()?;

    if let Some(max) = config.max_test_cases {
        if max < cases.len() {
            // A seeded uniform subsample, not a prefix, so subsampled metrics
            // are unbiased; indices are re-sorted to keep chronological order.
            let mut rng = ChaCha20Rng::seed_from_u64(subseed(config.seed, "", "subsample"));
            let mut keep = rand::seq::index::sample(&mut rng, cases.len(), max).into_vec();
            keep.sort_unstable();
            cases = keep.into_iter().map(|i| cases[i].clone()).collect();
        }
    }

    Ok(Prepared { loaded, split, stats, cases })
}

fn make_backend(config: &RunConfig, stats: &TrainStats) -> Result<Arc<dyn ChatBackend>, HarnessError> {
    match &config.backend {
        BackendChoice::Live => {
            let api_key = std::env::var("LLM_API_KEY").map_err(|_| HarnessError::MissingCredential)?;
            let base_url = config
                .base_url
                .clone()
                .or_else(|| std::env::var("LLM_BASE_URL").ok())
                .unwrap_or_else(|| DEFAULT_BASE_URL.to_string());
            Ok(Arc::new(HttpBackend::new(base_url, api_key)))
        }
        BackendChoice::MockNearest => Ok(Arc::new(mock_backend(MockPolicy::NearestK))),
        BackendChoice::MockPopular => {
            Ok(Arc::new(mock_backend(MockPolicy::PopularK(stats.poi_visits().clone()))))
        }
        BackendChoice::MockGarbage => Ok(Arc::new(mock_backend(MockPolicy::Garbage))),
        BackendChoice::MockFixture(path) => {
            let backend = MockBackend::fixture_from_path(path)
                .map_err(|source| HarnessError::Io { path: path.clone(), source })?;
            Ok(Arc::new(backend))
        }
    }
}

fn process_case(
    case: &TestCase,
    catalog: &Catalog,
    stats: &TrainStats,
    config: &RunConfig,
    backend: Option<&Arc<dyn ChatBackend>>,
) -> Result<CaseRecord, HarnessError> {
    let sampled = sample_candidates(case, catalog, config.n_candidates, config.seed);
    let set = build_candidate_set(case, &sampled, catalog, stats, config.ordering, config.seed)?;

    let (ids, reason, parse_status, prompt_tokens, completion_tokens, latency_ms) = match config.method {
        Method::Dist => (recommend_dist(&set, config.top_k), String::new(), ParseStatus::Clean, 0, 0, 0),
        Method::Popu => (recommend_popu(&set, config.top_k), String::new(), ParseStatus::Clean, 0, 0, 0),
        Method::Llmmove => {
            let backend = backend.expect("llmmove requires a backend");
            let bundle = build_prompt(
                case,
                &set,
                stats.history(&case.user_id),
                catalog,
                config.flags,
                config.m_long_term,
                config.top_k,
            )?;
            let request = ChatRequest::from_prompt(&bundle, &config.model, config.temperature);
            let result = match &config.cache_dir {
                Some(dir) => cached_complete(backend.as_ref(), dir, &request),
                None => backend.complete(&request),
            };
            match result {
                Ok(response) => {
                    let (raw_ids, reason, status) = parse_recommendation(&response.text);
                    let ids = sanitize(&raw_ids, &set, config.top_k);
                    (ids, reason, status, response.prompt_tokens, response.completion_tokens, response.latency_ms)
                }
                // Credential and cache problems poison every remaining case;
                // anything else is a per-case failure that scores zero.
                Err(err @ (LlmError::Auth { .. } | LlmError::CacheIo { .. })) => return Err(err.into()),
                Err(err) => {
                    log::warn!("case {}: completion failed: {err}", case.trajectory_id);
                    (Vec::new(), String::new(), ParseStatus::Failed, 0, 0, 0)
                }
            }
        }
    };

    let rank = crate::metrics::rank_of_ground_truth(&ids, &case.ground_truth_poi);
    Ok(CaseRecord {
        trajectory_id: case.trajectory_id.clone(),
        user_id: case.user_id.clone(),
        ground_truth: case.ground_truth_poi.clone(),
        method: config.method,
        flags: config.flags,
        ordering: config.ordering,
        seed: config.seed,
        recommended_ids: ids,
        rank,
        parse_status,
        reason,
        model: config.model.clone(),
        temperature: config.temperature,
        prompt_tokens,
        completion_tokens,
        latency_ms,
    })
}

/// Records already present in an output file, parsed leniently: lines that do
/// not parse (for example a torn final line after an interrupt) are dropped
/// so their cases re-run.
fn read_existing_records(path: &Path) -> Vec<CaseRecord> {
    let Ok(file) = fs::File::open(path) else {
        return Vec::new();
    };
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CaseRecord>(&line) {
            Ok(record) => records.push(record),
            Err(err) => log::warn!("ignoring unparseable record in {}: {err}", path.display()),
        }
    }
    records
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Runs the configured evaluation, building the backend from the config.
pub fn run(config: &RunConfig) -> Result<EvalReport, HarnessError> {
    config.validate()?;
    let prepared = prepare(config)?;
    let backend = match config.method {
        Method::Llmmove => Some(make_backend(config, &prepared.stats)?),
        Method::Popu | Method::Dist => None,
    };
    run_prepared(config, &prepared, backend)
}

/// Runs with an injected backend; used by tests and embedders.
pub fn run_with_backend(
    config: &RunConfig,
    backend: Arc<dyn ChatBackend>,
) -> Result<EvalReport, HarnessError> {
    let prepared = prepare(config)?;
    run_prepared(config, &prepared, Some(backend))
}

fn run_prepared(
    config: &RunConfig,
    prepared: &Prepared,
    backend: Option<Arc<dyn ChatBackend>>,
) -> Result<EvalReport, HarnessError> {
    let existing = read_existing_records(&config.out);
    let done: HashSet<&str> = existing.iter().map(|r| r.trajectory_id.as_str()).collect();
    let todo: Vec<&TestCase> =
        prepared.cases.iter().filter(|c| !done.contains(c.trajectory_id.as_str())).collect();

    if let Some(parent) = config.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(&config.out))?;
    }
    let mut appender = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&config.out)
        .map_err(io_err(&config.out))?;

    let mut records = existing;
    let next_index = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let worker_count = config.concurrency.min(todo.len()).max(1);
    let mut first_error: Option<HarnessError> = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<Result<CaseRecord, HarnessError>>();
        for _ in 0..worker_count {
            let tx = tx.clone();
            let todo = &todo;
            let next_index = &next_index;
            let abort = &abort;
            let backend = backend.clone();
            let prepared = &prepared;
            scope.spawn(move || loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next_index.fetch_add(1, Ordering::Relaxed);
                let Some(case) = todo.get(i) else { break };
                let result =
                    process_case(case, &prepared.loaded.catalog, &prepared.stats, config, backend.as_ref());
                if result.is_err() {
                    abort.store(true, Ordering::Relaxed);
                }
                if tx.send(result).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        for result in rx {
            match result {
                Ok(record) => {
                    let line = serde_json::to_string(&record).expect("record serializes");
                    if let Err(source) = appender.write_all(line.as_bytes()).and_then(|()| {
                        appender.write_all(b"\n")?;
                        appender.flush()
                    }) {
                        abort.store(true, Ordering::Relaxed);
                        first_error.get_or_insert(HarnessError::Io { path: config.out.clone(), source });
                        continue;
                    }
                    records.push(record);
                }
                Err(err) => {
                    first_error.get_or_insert(err);
                }
            }
        }
    });

    if let Some(err) = first_error {
        return Err(err);
    }

    // Deterministic final layout: one record per case, sorted by trajectory
    // id, rewritten atomically.
    records.sort_by(|a, b| a.trajectory_id.cmp(&b.trajectory_id));
    records.dedup_by(|a, b| a.trajectory_id == b.trajectory_id);
    rewrite_jsonl(&config.out, &records)?;

    let outcomes: Vec<EvalOutcome> = records.iter().map(CaseRecord::outcome).collect();
    let mut report = aggregate(&outcomes)?;
    report.config = config.echo();

    let report_path = report_path_for(&config.out);
    let pretty = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&report_path, pretty.as_bytes()).map_err(io_err(&report_path))?;

    Ok(report)
}

/// The report lives next to the JSONL output.
pub fn report_path_for(out: &Path) -> PathBuf {
    out.with_extension("report.json")
}

fn rewrite_jsonl(path: &Path, records: &[CaseRecord]) -> Result<(), HarnessError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = dir.join(format!(".rewrite-{}.tmp", std::process::id()));
    let mut buffer = Vec::new();
    for record in records {
        serde_json::to_writer(&mut buffer, record).expect("record serializes");
        buffer.push(b'\n');
    }
    fs::write(&tmp, &buffer).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

/// Recomputes the aggregate report from a persisted JSONL file.
pub fn report(path: &Path) -> Result<EvalReport, HarnessError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut outcomes = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CaseRecord = serde_json::from_str(&line).map_err(|e| HarnessError::MalformedResultRecord {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        outcomes.push(record.outcome());
    }
    Ok(aggregate(&outcomes)?)
}

/// Renders every prepared case's prompt into `out_dir`, one file per case.
pub fn dump_prompts(config: &RunConfig, out_dir: &Path) -> Result<usize, HarnessError> {
    let prepared = prepare(config)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = 0;
    for case in &prepared.cases {
        let bundle = render_case_prompt(config, &prepared, case)?;
        let path = out_dir.join(format!("{}.prompt.txt", case.trajectory_id));
        let contents = format!("=== system ===\n{}\n=== user ===\n{}", bundle.system_text, bundle.user_text);
        fs::write(&path, contents).map_err(io_err(&path))?;
        written += 1;
    }
    Ok(written)
}

/// Builds the prompt for one prepared case exactly as `run` would.
pub fn render_case_prompt(
    config: &RunConfig,
    prepared: &Prepared,
    case: &TestCase,
) -> Result<PromptBundle, HarnessError> {
    let sampled = sample_candidates(case, &prepared.loaded.catalog, config.n_candidates, config.seed);
    let set = build_candidate_set(
        case,
        &sampled,
        &prepared.loaded.catalog,
        &prepared.stats,
        config.ordering,
        config.seed,
    )?;
    Ok(build_prompt(
        case,
        &set,
        prepared.stats.history(&case.user_id),
        &prepared.loaded.catalog,
        config.flags,
        config.m_long_term,
        config.top_k,
    )?)
}

/// Loads, splits, and summarizes a dataset for the `ingest` subcommand.
pub fn ingest(path: &Path, strict: bool, ratios: SplitRatios) -> Result<IngestSummary, HarnessError> {
    let loaded = load_dataset(path, strict)?;
    let split = chronological_split(&loaded.checkins, ratios)?;
    Ok(summarize(&loaded, &split))
}
