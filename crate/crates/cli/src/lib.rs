//! `lambda-nas` command-line runner.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use lambda_nas::diagnostics::{
    export_traces, plateau_increments, write_json, write_report, ExportFormat, RunSummary,
};
use lambda_nas::experiment::Experiment;
use lambda_nas::oracle::TabularBench;
use lambda_nas::trainer::{search, SearchResult, TrainError, Variant};
use lambda_nas::verify::run_suite;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "LAMBDA_NAS_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::ConfigFile { .. } | TrainError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "lambda-nas", version, about = "Layer-alignment regularized differentiable architecture search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one search and export its trace.
    Search(SearchArgs),
    /// Paired unregularized and regularized searches scored on the tabular bench.
    CollapseDemo(DemoArgs),
    /// Train every genotype of the configured cell and write the bench.
    BenchBuild(BenchArgs),
    /// Run the oracle and property checks.
    Verify,
    /// Summaries and plot-ready series for saved runs.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Experiment JSON; missing keys take the collapse-rig defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon0: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl Overrides {
    fn experiment(&self) -> Result<Experiment, CliError> {
        let mut exp = match &self.config {
            Some(path) => Experiment::from_path(path)?,
            None => Experiment::collapse_rig(),
        };
        if let Some(v) = self.lambda {
            exp.train.lambda_max = v;
        }
        if let Some(v) = self.epsilon0 {
            exp.train.epsilon0 = v;
        }
        if let Some(v) = self.epochs {
            exp.train.epochs = v;
        }
        exp.validate()?;
        Ok(exp)
    }
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Tabular bench used to rank the final genotype.
    #[arg(long)]
    bench: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long, default_value_t = 4)]
    seeds: u64,
    /// Regularized variant compared against `none`.
    #[arg(long, default_value = "cosine")]
    variant: Variant,
    /// Bench cache: loaded if present, otherwise built and written here.
    #[arg(long)]
    bench: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "bench.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run directories written by `search` or `collapse-demo`.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let outcome = match cli.command {
        Command::Search(a) => cmd_search(a),
        Command::CollapseDemo(a) => cmd_demo(a),
        Command::BenchBuild(a) => cmd_bench(a),
        Command::Verify => cmd_verify(),
        Command::Report(a) => cmd_report(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let (CliError::Usage(m) | CliError::Failure(m)) = &e;
            eprintln!("error: {m}");
            e.code()
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // A second call in the same process finds the pool already built.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Loads the bench at `path`, checking it was built for `exp`.
pub fn load_bench(path: &Path, exp: &Experiment) -> Result<TabularBench, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let bench = TabularBench::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if !exp.matches_bench(&bench) {
        return Err(CliError::Usage(format!(
            "{}: bench was built for a different net, dataset or budget",
            path.display()
        )));
    }
    Ok(bench)
}

/// Loads `path` if it exists, otherwise builds the bench (and caches it at
/// `path` when given).
pub fn load_or_build_bench(path: Option<&Path>, exp: &Experiment) -> Result<TabularBench, CliError> {
    if let Some(p) = path.filter(|p| p.exists()) {
        return load_bench(p, exp);
    }
    eprintln!("building tabular bench ({} genotypes)", exp.net.cell.genotype_count());
    let bench = exp.build_bench().map_err(failure)?;
    if let Some(p) = path {
        std::fs::write(p, bench.to_json()).map_err(|e| failure(format!("{}: {e}", p.display())))?;
    }
    Ok(bench)
}

fn save_run(result: &SearchResult, dir: &Path, format: ExportFormat, bench: Option<&TabularBench>) -> Result<RunSummary, CliError> {
    let summary = export_traces(result, format, dir, bench).map_err(failure)?;
    write_json(&dir.join("result.json"), result).map_err(failure)?;
    Ok(summary)
}

fn cmd_search(a: SearchArgs) -> Result<i32, CliError> {
    let mut exp = a.common.experiment()?;
    if let Some(s) = a.seed {
        exp.train.seed = s;
    }
    if let Some(v) = a.variant {
        exp.train.variant = v;
    }
    let bench = a.bench.as_deref().map(|p| load_bench(p, &exp)).transpose()?;
    let dataset = exp.dataset().map_err(failure)?;
    let result = match search(&exp.train, &exp.net, &dataset) {
        Err(TrainError::Diverged { step, checkpoint }) => {
            let path = a.out.join("diverged.ckpt");
            std::fs::create_dir_all(&a.out)
                .and_then(|_| std::fs::write(&path, checkpoint))
                .map_err(|e| failure(format!("{}: {e}", path.display())))?;
            return Err(failure(format!("diverged at step {step}; checkpoint in {}", path.display())));
        }
        other => other?,
    };
    let format = match a.format {
        FormatArg::Csv => ExportFormat::Csv,
        FormatArg::Json => ExportFormat::Json,
    };
    let summary = save_run(&result, &a.out, format, bench.as_ref())?;
    println!("{}", summary_line(&summary));
    println!("wrote {}", a.out.display());
    Ok(EXIT_OK)
}

fn summary_line(s: &RunSummary) -> String {
    let lambda = s.final_lambda.map_or("n/a".into(), |v| format!("{v:.3}"));
    let rank = s.rank.map_or(String::new(), |r| format!(" rank {} pct {:.3}", r.rank, r.percentile));
    format!(
        "{:6} seed {:2} {} Λ {lambda} collapse {}{rank}",
        s.variant.to_string(),
        s.seed,
        s.genotype_ops,
        s.collapse_flag
    )
}

/// Outcome of one search in a paired demo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoRun {
    pub summary: RunSummary,
    /// Cumulative ℓ1 increments over the middle and final thirds.
    pub plateau: Option<(f64, f64)>,
}

impl DemoRun {
    pub fn percentile(&self) -> f64 {
        self.summary.rank.map_or(f64::NAN, |r| r.percentile)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantStats {
    pub variant: Variant,
    pub median_percentile: f64,
    pub mean_percentile: f64,
    /// Half-width of the two-sided 95% Student-t interval; `None` for one seed.
    pub ci95_half_width: Option<f64>,
    pub collapse_count: usize,
    pub median_final_lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoReport {
    pub seeds: Vec<u64>,
    pub vanilla: Vec<DemoRun>,
    pub regularized: Vec<DemoRun>,
    pub vanilla_stats: VariantStats,
    pub regularized_stats: VariantStats,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Sample mean and 95% t-interval half-width.
pub fn mean_ci95(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive dof").inverse_cdf(0.975);
    (mean, Some(t * (var / n).sqrt()))
}

fn stats(variant: Variant, runs: &[DemoRun]) -> VariantStats {
    let pct: Vec<f64> = runs.iter().map(DemoRun::percentile).collect();
    let (mean, ci) = mean_ci95(&pct);
    let lambdas: Vec<f64> = runs.iter().map(|r| r.summary.final_lambda.unwrap_or(f64::NAN)).collect();
    VariantStats {
        variant,
        median_percentile: median(&pct),
        mean_percentile: mean,
        ci95_half_width: ci,
        collapse_count: runs.iter().filter(|r| r.summary.collapse_flag).count(),
        median_final_lambda: median(&lambdas),
    }
}

/// Runs `variant = none` and `regularized` for each seed in `0..seeds` and
/// scores the final genotypes on `bench`. Run directories go under `out`.
pub fn collapse_demo(
    exp: &Experiment,
    seeds: u64,
    regularized: Variant,
    bench: &TabularBench,
    out: Option<&Path>,
) -> Result<DemoReport, CliError> {
    let dataset = exp.dataset().map_err(failure)?;
    let mut vanilla = Vec::new();
    let mut reg = Vec::new();
    for seed in 0..seeds {
        for (variant, sink) in [(Variant::None, &mut vanilla), (regularized, &mut reg)] {
            let mut train = exp.train.clone();
            train.seed = seed;
            train.variant = variant;
            let result = search(&train, &exp.net, &dataset)?;
            let summary = match out {
                Some(dir) => save_run(&result, &dir.join(format!("{variant}_s{seed}")), ExportFormat::Json, Some(bench))?,
                None => RunSummary::new(&result, Some(bench)).map_err(failure)?,
            };
            eprintln!("{}", summary_line(&summary));
            sink.push(DemoRun {
                summary,
                plateau: plateau_increments(&result),
            });
        }
    }
    Ok(DemoReport {
        seeds: (0..seeds).collect(),
        vanilla_stats: stats(Variant::None, &vanilla),
        regularized_stats: stats(regularized, &reg),
        vanilla,
        regularized: reg,
    })
}

fn fmt_stats(s: &VariantStats) -> String {
    let ci = s.ci95_half_width.map_or("n/a".into(), |h| format!("{h:.3}"));
    format!(
        "{:6} percentile {:.3} ± {ci} (median {:.3}), collapsed {}, median final Λ {:.3}",
        s.variant.to_string(),
        s.mean_percentile,
        s.median_percentile,
        s.collapse_count,
        s.median_final_lambda
    )
}

fn cmd_demo(a: DemoArgs) -> Result<i32, CliError> {
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    if a.variant == Variant::None {
        return Err(CliError::Usage("--variant must name a regularizer (cosine or sign)".into()));
    }
    let exp = a.common.experiment()?;
    let bench = load_or_build_bench(a.bench.as_deref(), &exp)?;
    let report = collapse_demo(&exp, a.seeds, a.variant, &bench, a.out.as_deref())?;
    println!("{}", fmt_stats(&report.vanilla_stats));
    println!("{}", fmt_stats(&report.regularized_stats));
    if let Some(dir) = &a.out {
        write_json(&dir.join("collapse_summary.json"), &report).map_err(failure)?;
        println!("wrote {}", dir.display());
    }
    Ok(EXIT_OK)
}

fn cmd_bench(a: BenchArgs) -> Result<i32, CliError> {
    let exp = match &a.config {
        Some(p) => Experiment::from_path(p)?,
        None => Experiment::collapse_rig(),
    };
    let bench = exp.build_bench().map_err(failure)?;
    std::fs::write(&a.out, bench.to_json()).map_err(|e| failure(format!("{}: {e}", a.out.display())))?;
    for (g, e) in bench.ranked().into_iter().take(5) {
        println!("{:.4} {}", e.val_accuracy, g.describe(&bench.net.cell));
    }
    println!("wrote {} ({} genotypes)", a.out.display(), bench.len());
    Ok(EXIT_OK)
}

fn cmd_verify() -> Result<i32, CliError> {
    let checks = run_suite();
    let width = checks.iter().map(|c| c.name.chars().count()).max().unwrap_or(0);
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status}  {:width$}  {}", c.name, c.detail);
    }
    Ok(if checks.iter().all(|c| c.passed) { EXIT_OK } else { EXIT_FAILURE })
}

fn read_result(dir: &Path) -> Result<SearchResult, CliError> {
    let path = dir.join("result.json");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn cmd_report(a: ReportArgs) -> Result<i32, CliError> {
    let mut runs = Vec::new();
    for dir in &a.runs {
        let label = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        let result = read_result(dir)?;
        let summary = RunSummary::new(&result, None).map_err(failure)?;
        println!("{label}: {}", summary_line(&summary));
        if let Some((mid, last)) = plateau_increments(&result) {
            println!("    cumulative ℓ1 {:.3}, middle-third +{mid:.3}, final-third +{last:.3}", summary.cumulative_l1);
        }
        runs.push((label, result));
    }
    let refs: Vec<(String, &SearchResult)> = runs.iter().map(|(l, r)| (l.clone(), r)).collect();
    for p in write_report(&a.out, &refs).map_err(failure)? {
        println!("wrote {}", p.display());
    }
    Ok(EXIT_OK)
}
