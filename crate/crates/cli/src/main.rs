//! `streamrec`: run one configuration, a grid of them, or the self-check suites.
//!
//! Exit codes: 0 success, 1 I/O or run failure, 2 bad flags or configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use streamrec::engine::threads_from_env;
use streamrec::ingest::{load_item_allowlist, preprocess_results, MovieLensReader, NetflixReader};
use streamrec::synthetic::SyntheticConfig;
use streamrec::validate::{run_suite, Suite, ValidateOptions};
use streamrec::{run, Algorithm, EngineConfig, ForgettingKind, MetricsReport, RatingEvent};

const BUILD_ID: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("STREAMREC_GIT_REV"));

#[derive(Parser)]
#[command(name = "streamrec", version, about = "Distributed streaming recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Run one configuration end to end.
    Run(RunArgs),
    /// Run every configuration of a grid file into sibling directories.
    SweepGrid(GridArgs),
    /// Run the oracle self-check suites.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Movielens,
    Netflix,
    Synthetic,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Movielens => "movielens",
            Format::Netflix => "netflix",
            Format::Synthetic => "synthetic",
        }
    }
}

#[derive(Args, Clone, Debug)]
struct RunArgs {
    /// `key = value` file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<Algorithm>,
    #[arg(long = "ni")]
    n_i: Option<usize>,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Recommendation list size [default: 10]
    #[arg(long)]
    topn: Option<usize>,
    /// Moving-average window [default: 5000]
    #[arg(long)]
    window: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    neighbors_k: Option<usize>,
    #[arg(long)]
    forgetting: Option<ForgettingKind>,
    #[arg(long)]
    lfu_trigger: Option<u64>,
    #[arg(long)]
    lfu_min_freq: Option<u64>,
    #[arg(long)]
    lfu_min_freq_users: Option<u64>,
    #[arg(long)]
    lfu_min_freq_items: Option<u64>,
    /// Event-time seconds between LRU sweeps.
    #[arg(long)]
    lru_interval: Option<i64>,
    /// Event-time seconds.
    #[arg(long)]
    lru_max_age: Option<i64>,
    #[arg(long)]
    lru_max_age_users: Option<i64>,
    #[arg(long)]
    lru_max_age_items: Option<i64>,
    /// Ratings file (MovieLens) or directory (Netflix).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, alias = "dataset-format", value_enum, default_value = "movielens")]
    format: Format,
    #[arg(long, default_value_t = 5.0)]
    min_rating: f64,
    /// Netflix only: file of movie ids to keep.
    #[arg(long)]
    item_allowlist: Option<PathBuf>,
    /// [default: 0.2]
    #[arg(long)]
    warmup_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// [default: 5000]
    #[arg(long)]
    telemetry_every: Option<u64>,
    /// [default: 4096]
    #[arg(long)]
    queue_capacity: Option<usize>,
    #[arg(long)]
    sequential_update: bool,
    #[arg(long)]
    rank_by_distance_to_one: bool,
    #[arg(long, default_value_t = 1000)]
    synthetic_users: usize,
    #[arg(long, default_value_t = 500)]
    synthetic_items: usize,
    #[arg(long, default_value_t = 20_000)]
    synthetic_events: usize,
    #[arg(long, default_value_t = 1.0)]
    synthetic_zipf: f64,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// One configuration per line: `name: --flag value ...`; `#` comments.
    #[arg(long)]
    grid: PathBuf,
    /// Parent of the per-configuration run directories.
    #[arg(long)]
    out: PathBuf,
    /// Flags prepended to every grid line; a line repeating a flag overrides it.
    #[arg(last = true)]
    base: Vec<String>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Run only this suite (routing, isgd, similarity).
    #[arg(long)]
    suite: Option<Suite>,
    /// Debug hook: add this offset to every incremental similarity.
    #[arg(long, default_value_t = 0.0)]
    inject_fault: f64,
    #[arg(long)]
    seed: Option<u64>,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl Failure {
    fn report(self) -> ExitCode {
        match self {
            Failure::Usage(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
            Failure::Runtime(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args).map(|_| ExitCode::SUCCESS),
        Command::SweepGrid(args) => cmd_sweep_grid(&args),
        Command::Validate(args) => Ok(cmd_validate(&args)),
    };
    result.unwrap_or_else(Failure::report)
}

impl RunArgs {
    /// Defaults, then the config file, then explicit flags.
    fn engine_config(&self) -> Result<EngineConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))
                    .map_err(Failure::Runtime)?;
                EngineConfig::from_key_value_text(&text)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
            }
            None => EngineConfig::default(),
        };
        macro_rules! apply {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v.into(); })*
            };
        }
        apply!(
            algo => algo, n_i => n_i, w => w, k => k, eta => eta, lambda => lambda,
            topn => top_n, window => window, neighbors_k => neighbors_k,
            forgetting => forgetting.kind,
            lfu_trigger => forgetting.lfu_trigger_count, lfu_min_freq => forgetting.lfu_min_frequency,
            lfu_min_freq_users => forgetting.lfu_min_frequency_users,
            lfu_min_freq_items => forgetting.lfu_min_frequency_items,
            lru_interval => forgetting.lru_trigger_interval, lru_max_age => forgetting.lru_max_age,
            lru_max_age_users => forgetting.lru_max_age_users,
            lru_max_age_items => forgetting.lru_max_age_items,
            warmup_fraction => warmup_fraction, seed => seed,
            telemetry_every => telemetry_every, queue_capacity => queue_capacity,
        );
        cfg.sequential_update |= self.sequential_update;
        cfg.rank_by_distance_to_one |= self.rank_by_distance_to_one;
        if let Some(t) = threads_from_env() {
            cfg.worker_threads = Some(t);
        }
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }

    fn check_dataset_flags(&self) -> Result<(), Failure> {
        if self.format != Format::Synthetic && self.dataset.is_none() {
            return Err(Failure::Usage(format!("--dataset is required for --format {}", self.format.name())));
        }
        if self.item_allowlist.is_some() && self.format != Format::Netflix {
            return Err(Failure::Usage("--item-allowlist applies to --format netflix only".into()));
        }
        if !self.min_rating.is_finite() {
            return Err(Failure::Usage("--min-rating must be finite".into()));
        }
        if self.format == Format::Synthetic && (self.synthetic_users == 0 || self.synthetic_items == 0) {
            return Err(Failure::Usage("--synthetic-users and --synthetic-items must be >= 1".into()));
        }
        if self.format == Format::Synthetic && !(self.synthetic_zipf.is_finite() && self.synthetic_zipf >= 0.0) {
            return Err(Failure::Usage("--synthetic-zipf must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn dataset_lines(&self) -> String {
        let mut s = String::new();
        let path = self.dataset.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string());
        let _ = writeln!(s, "path = {path}");
        let _ = writeln!(s, "format = {}", self.format.name());
        let _ = writeln!(s, "min_rating = {}", self.min_rating);
        if let Some(a) = &self.item_allowlist {
            let _ = writeln!(s, "item_allowlist = {}", a.display());
        }
        if self.format == Format::Synthetic {
            let _ = writeln!(s, "synthetic_users = {}", self.synthetic_users);
            let _ = writeln!(s, "synthetic_items = {}", self.synthetic_items);
            let _ = writeln!(s, "synthetic_events = {}", self.synthetic_events);
            let _ = writeln!(s, "synthetic_zipf = {}", self.synthetic_zipf);
        }
        s
    }

    fn load_stream(&self, seed: u64) -> anyhow::Result<Vec<RatingEvent>> {
        Ok(match self.format {
            Format::Movielens => {
                let path = self.dataset.as_ref().expect("checked");
                preprocess_results(MovieLensReader::open(path)?, self.min_rating)?
            }
            Format::Netflix => {
                let dir = self.dataset.as_ref().expect("checked");
                let mut reader = NetflixReader::open(dir)?;
                if let Some(list) = &self.item_allowlist {
                    reader = reader.with_allowlist(load_item_allowlist(list)?);
                }
                preprocess_results(reader, self.min_rating)?
            }
            Format::Synthetic => {
                let synth = SyntheticConfig {
                    users: self.synthetic_users,
                    items: self.synthetic_items,
                    events: self.synthetic_events,
                    item_zipf: self.synthetic_zipf,
                    seed,
                    ..Default::default()
                };
                streamrec::ingest::preprocess(synth.raw(), self.min_rating)
            }
        })
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Runs one configuration and returns its metrics.
fn cmd_run(args: &RunArgs) -> Result<MetricsReport, Failure> {
    let cfg = args.engine_config()?;
    args.check_dataset_flags()?;
    let out = args.out.clone().ok_or_else(|| Failure::Usage("--out is required".into()))?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "[run]");
    let _ = writeln!(manifest, "build = {BUILD_ID}");
    let _ = writeln!(manifest, "started = {}", now());
    let _ = writeln!(manifest, "out = {}", out.display());
    let _ = writeln!(manifest, "[dataset]");
    manifest.push_str(&args.dataset_lines());
    let _ = writeln!(manifest, "[config]");
    manifest.push_str(&cfg.to_key_value_text());
    let manifest_path = out.join("manifest.txt");
    fs::write(&manifest_path, &manifest).with_context(|| format!("writing {}", manifest_path.display()))?;

    let stream = args.load_stream(cfg.seed)?;
    let report = match run(&cfg, stream) {
        Ok(r) => r,
        Err(e) => {
            if let Some(partial) = e.partial_report() {
                let mut preamble = manifest.clone();
                let _ = writeln!(preamble, "[failure]\nerror = {e}\nfinished = {}", now());
                let _ = partial.write_to_dir(&out, &preamble);
            }
            return Err(Failure::Runtime(anyhow::Error::new(e)));
        }
    };
    let mut preamble = manifest;
    let _ = writeln!(preamble, "[end]\nfinished = {}", now());
    report.write_to_dir(&out, &preamble).with_context(|| format!("writing results to {}", out.display()))?;
    println!(
        "{}: {} events, cumulative recall {:.6}, {:.0} events/s",
        out.display(),
        report.events,
        report.cumulative_recall,
        report.throughput_eps
    );
    Ok(report)
}

struct GridEntry {
    name: String,
    flags: Vec<String>,
}

fn parse_grid(text: &str) -> Result<Vec<GridEntry>, String> {
    let mut entries: Vec<GridEntry> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, flags) = line.split_once(':').ok_or_else(|| format!("line {}: expected `name: flags`", n + 1))?;
        let name = name.trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(format!("line {}: invalid configuration name `{name}`", n + 1));
        }
        if entries.iter().any(|e| e.name == name) {
            return Err(format!("line {}: duplicate configuration name `{name}`", n + 1));
        }
        entries
            .push(GridEntry { name: name.to_string(), flags: flags.split_whitespace().map(str::to_string).collect() });
    }
    Ok(entries)
}

#[derive(Parser)]
#[command(no_binary_name = true, args_override_self = true)]
struct GridLine {
    #[command(flatten)]
    run: RunArgs,
}

fn cmd_sweep_grid(args: &GridArgs) -> Result<ExitCode, Failure> {
    let text = fs::read_to_string(&args.grid).with_context(|| format!("reading grid {}", args.grid.display()))?;
    let entries = parse_grid(&text).map_err(|e| Failure::Usage(format!("{}: {e}", args.grid.display())))?;
    if entries.is_empty() {
        return Err(Failure::Usage(format!("{}: grid has no configurations", args.grid.display())));
    }
    // Every line must parse before anything runs.
    let mut planned = Vec::with_capacity(entries.len());
    for entry in &entries {
        if entry.flags.iter().any(|f| f == "--out") {
            return Err(Failure::Usage(format!("{}: --out is set by the grid runner", entry.name)));
        }
        let argv = args.base.iter().chain(&entry.flags);
        let mut line = GridLine::try_parse_from(argv).map_err(|e| Failure::Usage(format!("{}: {e}", entry.name)))?;
        line.run.out = Some(args.out.join(&entry.name));
        planned.push((entry.name.as_str(), line.run));
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut rows = String::from("config,cumulative_recall,throughput_eps,mean_state_entries\n");
    let mut failed = Vec::new();
    for (name, run_args) in &planned {
        match cmd_run(run_args) {
            Ok(r) => {
                let _ =
                    writeln!(rows, "{name},{},{:.3},{}", r.cumulative_recall, r.throughput_eps, r.mean_state_entries());
            }
            Err(f) => {
                let msg = match f {
                    Failure::Usage(m) => m,
                    Failure::Runtime(e) => format!("{e:#}"),
                };
                eprintln!("error: configuration {name} failed: {msg}");
                let _ = writeln!(rows, "{name},,,");
                failed.push(*name);
            }
        }
    }
    let path = args.out.join("comparison.csv");
    fs::write(&path, rows).with_context(|| format!("writing {}", path.display()))?;
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} of {} configurations failed: {}", failed.len(), planned.len(), failed.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn cmd_validate(args: &ValidateArgs) -> ExitCode {
    let mut opts = ValidateOptions { similarity_perturbation: args.inject_fault, ..Default::default() };
    if let Some(seed) = args.seed {
        opts.seed = seed;
    }
    let suites: Vec<Suite> = args.suite.map_or_else(|| Suite::ALL.to_vec(), |s| vec![s]);
    let mut ok = true;
    for suite in suites {
        let r = run_suite(suite, &opts);
        match &r.counterexample {
            None => println!("PASS {suite}: {} checks in {:.2?}", r.checks, r.elapsed),
            Some(c) => {
                ok = false;
                println!("FAIL {suite}: {c}");
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
