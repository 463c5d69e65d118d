//! Command-line pipeline: `build` → `curate` → `simulate` → `report`.
//!
//! Exit codes: 0 success, 1 empty or failed pipeline outcome, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};

use crate::build::{build_metatask, BuildOptions};
use crate::curation::{curate, read_spec_json, write_rejections_csv, write_spec_json};
use crate::ensemble::TechniqueId;
use crate::harness::{self, ExperimentConfig};
use crate::metrics::Metric;
use crate::model::{load_metatask, save_metatask, BenchmarkSpec, Metatask};
use crate::openml::{ClientConfig, OpenMlClient};

pub const EXIT_OK: i32 = 0;
pub const EXIT_EMPTY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// File holding the curated benchmark recipe.
pub const SPEC_FILE: &str = "benchmark_spec.json";
pub const REJECTIONS_FILE: &str = "rejections.csv";

#[derive(Debug, Parser)]
#[command(
    name = "metatask",
    version,
    about = "Build metatasks from OpenML and simulate ensemble techniques on them"
)]
pub struct Cli {
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    /// Response cache directory (default: $ASSEMBLED_CACHE_DIR or ~/.cache/metatask).
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch tasks from OpenML and write one metatask directory per task.
    Build(BuildArgs),
    /// Filter base models and metatasks into a benchmark.
    Curate(CurateArgs),
    /// Run ensemble techniques fold by fold and write a results CSV.
    Simulate(SimulateArgs),
    /// Aggregate a results CSV into closed-gap tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["task_id", "suite_id"])))]
pub struct BuildArgs {
    /// OpenML task to build.
    #[arg(long)]
    pub task_id: Option<u64>,
    /// OpenML study/suite whose tasks are built.
    #[arg(long)]
    pub suite_id: Option<u64>,
    /// Ranking metric for the top-n runs: area_under_roc_curve or accuracy.
    #[arg(long, default_value = "area_under_roc_curve", value_parser = parse_metric)]
    pub metric: Metric,
    /// Number of distinct configurations to keep per task.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub top_n: u64,
    /// Output directory; one task_<id> subdirectory per metatask.
    #[arg(long)]
    pub out: PathBuf,
    /// Serve every request from the cache; fail on cache misses.
    #[arg(long)]
    pub offline: bool,
    /// OpenML API root (for mirrors and fixture servers).
    #[arg(long)]
    pub base_url: Option<String>,
    /// Maximum concurrent requests.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_parallel: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Directory of built metatasks.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output benchmark directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Minimum VBA-SBA gap (absolute AUROC difference) for a metatask to be kept.
    #[arg(long, default_value_t = 0.05)]
    pub gap: f64,
    /// Minimum number of surviving base models.
    #[arg(long, default_value_t = 10)]
    pub min_base_models: usize,
    /// Drop base models with AUROC <= 0.5.
    #[arg(long, num_args = 0..=1, default_value_t = true, default_missing_value = "true", action = ArgAction::Set)]
    pub drop_worse_than_random: bool,
    /// Drop base models with unexplainable prediction rows.
    #[arg(long, num_args = 0..=1, default_value_t = true, default_missing_value = "true", action = ArgAction::Set)]
    pub drop_corrupted: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Curated benchmark directory.
    #[arg(long)]
    pub benchmark: PathBuf,
    /// Comma-separated technique tokens.
    #[arg(long, value_delimiter = ',', value_parser = parse_technique,
          default_value = "dcs-sba,dcs,des,stacking,voting,es,vbe,dcs-vba")]
    pub techniques: Vec<TechniqueId>,
    /// Base seed; each (task, fold) derives its own.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of each fold's test predictions used as meta-train.
    #[arg(long, default_value_t = 0.5)]
    pub split_ratio: f64,
    /// Results CSV path.
    #[arg(long, default_value = "results.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Md,
    Csv,
    Svg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results CSV written by simulate.
    #[arg(long)]
    pub results: PathBuf,
    /// Instance threshold of the large-dataset stratum.
    #[arg(long, default_value_t = 1900)]
    pub min_instances: usize,
    /// Output format.
    #[arg(long, value_enum, default_value = "md")]
    pub format: ReportFormat,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse()
        .map_err(|e: crate::metrics::MetricError| e.to_string())
}

fn parse_technique(s: &str) -> Result<TechniqueId, String> {
    s.parse()
        .map_err(|e: crate::ensemble::SimError| e.to_string())
}

/// Parses arguments, runs the subcommand and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    let outcome = match &cli.command {
        Command::Build(a) => cmd_build(a, cli.cache_dir.as_deref()),
        Command::Curate(a) => cmd_curate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Report(a) => cmd_report(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            error!("{e:#}");
            EXIT_EMPTY
        }
    }
}

pub fn cmd_build(args: &BuildArgs, cache_dir: Option<&Path>) -> Result<i32> {
    let started = Instant::now();
    let mut config = ClientConfig::from_env();
    if let Some(dir) = cache_dir {
        config.cache_dir = dir.to_path_buf();
    }
    if let Some(url) = &args.base_url {
        config.base_url = url.trim_end_matches('/').to_string();
    }
    if let Some(p) = args.max_parallel {
        config.max_parallel = p as usize;
    }
    config.offline_mode = args.offline;
    let client = OpenMlClient::new(config);
    let task_ids = match (args.task_id, args.suite_id) {
        (Some(t), _) => vec![t],
        (None, Some(s)) => match client.fetch_suite(s) {
            Ok(ids) => ids,
            Err(e) => {
                error!("cannot list suite {s}: {e}");
                return Ok(EXIT_EMPTY);
            }
        },
        (None, None) => unreachable!("clap requires a source"),
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let options = BuildOptions {
        metric: args.metric,
        top_n: args.top_n as usize,
        source_suite: args.suite_id,
        ..BuildOptions::default()
    };
    let mut built = 0;
    let mut failed = 0;
    for &task_id in &task_ids {
        let result = build_metatask(&client, task_id, &options)
            .map_err(anyhow::Error::from)
            .and_then(|(m, skipped)| {
                save_metatask(&m, &args.out.join(metatask_dir_name(task_id)))?;
                Ok((m, skipped))
            });
        match result {
            Ok((m, skipped)) => {
                built += 1;
                info!(
                    "task {task_id}: {} base models ({} runs skipped)",
                    m.base_models.len(),
                    skipped.len()
                );
            }
            Err(e) => {
                failed += 1;
                error!("task {task_id}: {e:#}");
            }
        }
    }
    info!(
        "built {built} of {} metatasks ({failed} failed) in {:.1}s, {} network requests",
        task_ids.len(),
        started.elapsed().as_secs_f64(),
        client.network_calls()
    );
    Ok(if built == 0 { EXIT_EMPTY } else { EXIT_OK })
}

pub fn metatask_dir_name(task_id: u64) -> String {
    format!("task_{task_id}")
}

/// Loads every metatask stored in a subdirectory of `dir`, in name order.
pub fn load_benchmark_dir(dir: &Path) -> Result<Vec<Metatask>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").is_file())
        .collect();
    dirs.sort();
    let mut out: Vec<Metatask> = dirs
        .iter()
        .map(|d| load_metatask(d).with_context(|| format!("loading {}", d.display())))
        .collect::<Result<_>>()?;
    out.sort_by_key(|m| m.task_id);
    Ok(out)
}

pub fn cmd_curate(args: &CurateArgs) -> Result<i32> {
    let metatasks = load_benchmark_dir(&args.input)?;
    if metatasks.is_empty() {
        error!("no metatasks in {}", args.input.display());
        return Ok(EXIT_EMPTY);
    }
    let n_in = metatasks.len();
    let mut spec = BenchmarkSpec {
        gap_threshold: args.gap,
        min_base_models: args.min_base_models,
        drop_worse_than_random: args.drop_worse_than_random,
        drop_corrupted: args.drop_corrupted,
        metric: metatasks[0].build_info.ranking_metric.clone(),
        ..BenchmarkSpec::default()
    };
    spec.validate()?;
    let outcome = curate(metatasks, &spec);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for m in &outcome.kept {
        save_metatask(m, &args.out.join(metatask_dir_name(m.task_id)))?;
    }
    spec.task_ids = outcome.kept.iter().map(|m| m.task_id).collect();
    write_spec_json(&args.out.join(SPEC_FILE), &spec)?;
    write_rejections_csv(&args.out.join(REJECTIONS_FILE), &outcome.rejections)?;
    info!(
        "kept {} of {n_in} metatasks, rejected {}",
        outcome.kept.len(),
        outcome.rejections.len()
    );
    Ok(if outcome.kept.is_empty() {
        EXIT_EMPTY
    } else {
        EXIT_OK
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    if !(args.split_ratio > 0.0 && args.split_ratio < 1.0) {
        error!("--split-ratio must lie in (0, 1), got {}", args.split_ratio);
        return Ok(EXIT_USAGE);
    }
    let spec_path = args.benchmark.join(SPEC_FILE);
    let spec = if spec_path.is_file() {
        read_spec_json(&spec_path)?
    } else {
        warn!("{} not found, using default settings", spec_path.display());
        BenchmarkSpec::default()
    };
    let mut metatasks = load_benchmark_dir(&args.benchmark)?;
    if !spec.task_ids.is_empty() {
        metatasks.retain(|m| spec.task_ids.contains(&m.task_id));
    }
    if metatasks.is_empty() {
        error!("no metatasks in {}", args.benchmark.display());
        return Ok(EXIT_EMPTY);
    }
    let mut config = ExperimentConfig::from(&spec);
    config.seed = args.seed;
    config.split_ratio = args.split_ratio;
    let started = Instant::now();
    let runs = harness::run_benchmark(&metatasks, &args.techniques, &config);
    let file =
        fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    harness::write_results_csv(std::io::BufWriter::new(file), &runs)?;
    let invalid = runs.iter().filter(|r| !r.valid()).count();
    info!(
        "{} fold runs ({invalid} invalid) over {} metatasks in {:.1}s",
        runs.len(),
        metatasks.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(EXIT_OK)
}

pub fn cmd_report(args: &ReportArgs) -> Result<i32> {
    let file = match fs::File::open(&args.results) {
        Ok(f) => f,
        Err(e) => {
            error!("cannot open {}: {e}", args.results.display());
            return Ok(EXIT_USAGE);
        }
    };
    let runs = match harness::read_results_csv(file) {
        Ok(r) => r,
        Err(e) => {
            error!("{}: {e}", args.results.display());
            return Ok(EXIT_USAGE);
        }
    };
    let report = harness::aggregate(&runs, args.min_instances);
    let text = match args.format {
        ReportFormat::Md => harness::render_markdown(&report),
        ReportFormat::Csv => harness::render_csv(&report),
        ReportFormat::Svg => harness::render_svg(&report),
    };
    match &args.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(if runs.is_empty() { EXIT_EMPTY } else { EXIT_OK })
}
