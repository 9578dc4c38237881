use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use nextpoi::candidates::OrderingStrategy;
use nextpoi::dataset::SplitRatios;
use nextpoi::harness::{self, BackendChoice, Method, RunConfig};
use nextpoi::prompting::RequirementFlags;

#[derive(Parser)]
#[command(name = "nextpoi", version, about = "Benchmark harness for zero-shot next-POI recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a check-in file and print dataset statistics.
    Ingest {
        /// Path to the tab-separated check-in file.
        dataset: PathBuf,
        /// Abort on the first malformed record instead of skipping it.
        #[arg(long)]
        strict: bool,
        /// Print the summary as JSON instead of aligned text.
        #[arg(long)]
        json: bool,
    },
    /// Evaluate a method over the test cases and write JSONL + report.
    Run(RunArgs),
    /// Recompute the aggregate report from a results JSONL file.
    Report {
        /// Path to a results JSONL file produced by `run`.
        results: PathBuf,
    },
    /// Prompt inspection utilities.
    Prompts {
        #[command(subcommand)]
        command: PromptsCommand,
    },
    /// Response-cache utilities.
    Cache {
        #[command(subcommand)]
        command: CacheCommand,
    },
}

#[derive(Subcommand)]
enum PromptsCommand {
    /// Render every test-case prompt to a file for inspection.
    Dump {
        #[command(flatten)]
        args: RunArgs,
        /// Directory receiving one `<trajectory-id>.prompt.txt` per case.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum CacheCommand {
    /// Count entries and bytes under a cache directory.
    Stats {
        #[arg(long, value_name = "DIR")]
        cache_dir: PathBuf,
    },
}

/// Flags shared by `run` and `prompts dump`. Every flag overrides the config
/// file; the config file overrides built-in defaults.
#[derive(Args)]
struct RunArgs {
    /// TOML file with any of the run options as `key = value` pairs.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Path to the tab-separated check-in file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Results JSONL path (the report lands next to it).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed for sampling, shuffling, and subsampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of sampled candidates added to the ground truth.
    #[arg(long)]
    n_candidates: Option<usize>,
    /// Candidate presentation order.
    #[arg(long, value_enum)]
    ordering: Option<OrderingStrategy>,
    /// Recommendation method to evaluate.
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Completion backend: live, mock-nearest, mock-popular, mock-garbage,
    /// or mock-fixture:<path>.
    #[arg(long, value_parser = parse_backend)]
    backend: Option<BackendChoice>,
    /// Drop the long-term preference requirement.
    #[arg(long)]
    no_lp: bool,
    /// Drop the recent preference requirement.
    #[arg(long)]
    no_rp: bool,
    /// Drop the distance requirement (and candidate distances).
    #[arg(long)]
    no_geo: bool,
    /// Drop the sequential transition requirement.
    #[arg(long)]
    no_seq: bool,
    /// Long-term history length shown in prompts.
    #[arg(long)]
    m_long_term: Option<usize>,
    /// Number of recommendations requested and scored.
    #[arg(long)]
    top_k: Option<usize>,
    /// Model identifier sent to the backend.
    #[arg(long)]
    model: Option<String>,
    /// Chat-completions base URL (falls back to LLM_BASE_URL).
    #[arg(long)]
    base_url: Option<String>,
    /// Sampling temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Evaluate a seeded uniform subsample of this many test cases.
    #[arg(long)]
    max_test_cases: Option<usize>,
    /// Concurrent in-flight cases.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Response cache directory; omit to disable caching.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Abort ingestion on the first malformed record.
    #[arg(long)]
    strict: bool,
}

fn parse_backend(raw: &str) -> Result<BackendChoice, String> {
    raw.parse()
}

/// Optional view of `RunConfig` used for the TOML config file.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    ratios: Option<SplitRatios>,
    seed: Option<u64>,
    n_candidates: Option<usize>,
    ordering: Option<OrderingStrategy>,
    method: Option<Method>,
    backend: Option<BackendChoice>,
    flags: Option<RequirementFlags>,
    m_long_term: Option<usize>,
    top_k: Option<usize>,
    model: Option<String>,
    base_url: Option<String>,
    temperature: Option<f64>,
    max_test_cases: Option<usize>,
    concurrency: Option<usize>,
    cache_dir: Option<PathBuf>,
    strict: Option<bool>,
}

impl RunArgs {
    fn into_config(self) -> anyhow::Result<RunConfig> {
        let mut config = RunConfig::default();

        if let Some(path) = &self.config {
            let raw = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            let file: FileConfig = toml::from_str(&raw)
                .with_context(|| format!("parsing config file {}", path.display()))?;
            apply_file_config(&mut config, file);
        }

        if let Some(dataset) = self.dataset {
            config.dataset = dataset;
        }
        if let Some(out) = self.out {
            config.out = out;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(n) = self.n_candidates {
            config.n_candidates = n;
        }
        if let Some(ordering) = self.ordering {
            config.ordering = ordering;
        }
        if let Some(method) = self.method {
            config.method = method;
        }
        if let Some(backend) = self.backend {
            config.backend = backend;
        }
        if self.no_lp {
            config.flags.lp = false;
        }
        if self.no_rp {
            config.flags.rp = false;
        }
        if self.no_geo {
            config.flags.geo = false;
        }
        if self.no_seq {
            config.flags.seq = false;
        }
        if let Some(m) = self.m_long_term {
            config.m_long_term = m;
        }
        if let Some(k) = self.top_k {
            config.top_k = k;
        }
        if let Some(model) = self.model {
            config.model = model;
        }
        if let Some(base_url) = self.base_url {
            config.base_url = Some(base_url);
        }
        if let Some(temperature) = self.temperature {
            config.temperature = temperature;
        }
        if let Some(max) = self.max_test_cases {
            config.max_test_cases = Some(max);
        }
        if let Some(concurrency) = self.concurrency {
            config.concurrency = concurrency;
        }
        if let Some(cache_dir) = self.cache_dir {
            config.cache_dir = Some(cache_dir);
        }
        if self.strict {
            config.strict = true;
        }

        if config.dataset.as_os_str().is_empty() {
            anyhow::bail!("--dataset is required (flag or config file)");
        }
        Ok(config)
    }
}

fn apply_file_config(config: &mut RunConfig, file: FileConfig) {
    macro_rules! take {
        ($($field:ident),*) => {
            $(if let Some(value) = file.$field { config.$field = value; })*
        };
    }
    take!(dataset, out, ratios, seed, n_candidates, ordering, method, backend, flags, m_long_term, top_k, model, temperature, concurrency, strict);
    if let Some(base_url) = file.base_url {
        config.base_url = Some(base_url);
    }
    if let Some(max) = file.max_test_cases {
        config.max_test_cases = Some(max);
    }
    if let Some(cache_dir) = file.cache_dir {
        config.cache_dir = Some(cache_dir);
    }
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    match cli.command {
        Command::Ingest { dataset, strict, json } => {
            let summary = harness::ingest(&dataset, strict, SplitRatios::default())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                println!("users:                  {}", summary.users);
                println!("pois:                   {}", summary.pois);
                println!("categories:             {}", summary.categories);
                println!("checkins:               {}", summary.checkins);
                println!("test trajectories:      {}  (length >= 2)", summary.test_trajectories);
                println!("all test trajectories:  {}", summary.all_test_trajectories);
                println!("dropped singletons:     {}", summary.dropped_singletons);
                println!("train checkins:         {}", summary.train_checkins);
                println!("validation checkins:    {}", summary.validation_checkins);
                println!("test checkins:          {}", summary.test_checkins);
                println!("conflicting duplicates: {}", summary.conflicting_duplicates);
                println!("skipped records:        {}", summary.skipped_records);
            }
        }
        Command::Run(args) => {
            let config = args.into_config()?;
            if config.out.as_os_str().is_empty() {
                anyhow::bail!("--out is required (flag or config file)");
            }
            let report = harness::run(&config)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            eprintln!(
                "results: {}  report: {}",
                config.out.display(),
                harness::report_path_for(&config.out).display()
            );
        }
        Command::Report { results } => {
            let report = harness::report(&results)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Prompts { command } => match command {
            PromptsCommand::Dump { args, out_dir } => {
                let config = args.into_config()?;
                let written = harness::dump_prompts(&config, &out_dir)?;
                eprintln!("wrote {written} prompt files to {}", out_dir.display());
            }
        },
        Command::Cache { command } => match command {
            CacheCommand::Stats { cache_dir } => {
                let stats = nextpoi::llm::cache_stats(&cache_dir)?;
                println!("entries:     {}", stats.entries);
                println!("total bytes: {}", stats.total_bytes);
            }
        },
    }
    Ok(())
}
