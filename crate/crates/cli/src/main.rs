mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use umpire::ingest::{self, load_instances_with, sidecar_path, Dataset, LoadOptions, ScoreTable, RNG_ALGORITHM};
use umpire::kernel::{adaptive_alpha, AlphaEstimate};
use umpire::pipeline::{self, with_threads};
use umpire::synthetic::{Preset, SynthSpec};

use crate::config::{AlphaSetting, RunConfig};

#[derive(Parser)]
#[command(name = "umpire", version, about = "Score, evaluate and benchmark sampled-response uncertainty")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score an instance file into a per-instance score table.
    Score {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        kernel: KernelArgs,
        /// Comma-separated baselines, `all` or `none`.
        #[arg(long)]
        baselines: Option<String>,
        #[arg(long)]
        eigen_jitter: Option<f64>,
    },
    /// Print adaptive α and the subset medians.
    Alpha {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        kernel: KernelArgs,
        /// Subset fractions, comma-separated.
        #[arg(long, value_delimiter = ',')]
        fraction: Vec<f64>,
    },
    /// Compute the metric suite for one column of a score table.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value = "v")]
        metric_column: String,
        /// Add the likelihood-ratio test of q against q + u.
        #[arg(long)]
        lrt: bool,
    },
    /// Evaluate a grid of α values on a labeled instance file.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        eval: EvalArgs,
        /// α values, comma-separated.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
    },
    /// Generate a synthetic instance file from a preset or a spec file.
    Synth {
        #[command(flatten)]
        common: Common,
        /// planted-benchmark, lexical-variance or concentration.
        #[arg(long, conflicts_with = "input")]
        preset: Option<String>,
        /// Number of instances.
        #[arg(long, default_value_t = 400)]
        n: usize,
    },
    /// Per-column AUROC and ECE deltas between two score tables.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
        /// Second score table.
        #[arg(long)]
        other: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// TOML config file; defaults to $UMPIRE_CONFIG.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Skip malformed instance lines instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct KernelArgs {
    /// A number or `adaptive`.
    #[arg(long)]
    alpha: Option<AlphaSetting>,
    /// Subset share used for adaptive α.
    #[arg(long)]
    alpha_fraction: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    length_normalized: Option<bool>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    bins_cpc: Option<usize>,
    #[arg(long)]
    bins_ece: Option<usize>,
    #[arg(long)]
    dev_fraction: Option<f64>,
    /// FPR levels, comma-separated.
    #[arg(long, value_delimiter = ',')]
    fpr: Vec<f64>,
    /// Weights of AUROC, CPC and ECE in the combined score.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    weights: Vec<f64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        cfg.lenient |= self.lenient;
        Ok(cfg)
    }

    fn input(&self) -> Result<&Path> {
        self.input.as_deref().context("--input is required")
    }

    fn output(&self) -> Result<&Path> {
        self.output.as_deref().context("--output is required")
    }
}

impl KernelArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(a) = self.alpha {
            cfg.kernel.alpha = a;
        }
        if let Some(f) = self.alpha_fraction {
            cfg.kernel.alpha_fraction = f;
        }
        if let Some(e) = self.epsilon {
            cfg.kernel.epsilon = e;
        }
        if let Some(l) = self.length_normalized {
            cfg.kernel.length_normalized = l;
        }
    }
}

impl EvalArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(b) = self.bins_cpc {
            cfg.eval.cpc_bins = b;
        }
        if let Some(b) = self.bins_ece {
            cfg.eval.ece_bins = b;
        }
        if let Some(f) = self.dev_fraction {
            cfg.eval.dev_fraction = f;
        }
        if !self.fpr.is_empty() {
            cfg.eval.fpr_levels.clone_from(&self.fpr);
        }
        if !self.weights.is_empty() {
            let [a, b, c] = self.weights[..] else { bail!("--weights takes exactly three values") };
            cfg.eval.combined_weights = [a, b, c];
        }
        Ok(())
    }
}

/// Writes through a temporary sibling so a failed run leaves no partial file.
fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = sidecar_path(path, &format!(".tmp{}", std::process::id()));
    let result = write(&tmp).and_then(|()| {
        fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
    });
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, |tmp| Ok(fs::write(tmp, &text)?))
}

/// JSON to `--output`, or to stdout when no output is given.
fn emit_json(output: Option<&Path>, value: &impl Serialize) -> Result<()> {
    match output {
        Some(p) => write_json(p, value),
        None => {
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, value)?;
            writeln!(out)?;
            Ok(())
        }
    }
}

fn load(path: &Path, cfg: &RunConfig) -> Result<(Dataset, usize)> {
    let (ds, report) = load_instances_with(path, LoadOptions { lenient: cfg.lenient })
        .with_context(|| format!("loading {}", path.display()))?;
    for (line, msg) in &report.skipped {
        log::warn!("skipped line {line}: {msg}");
    }
    if !report.skipped.is_empty() {
        log::warn!("{} malformed lines skipped", report.skipped.len());
    }
    Ok((ds, report.skipped.len()))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

#[derive(Serialize)]
struct ScoreRun<'a> {
    command: &'static str,
    input: String,
    config: &'a RunConfig,
    alpha: f64,
    alpha_estimate: Option<AlphaEstimate>,
    records: usize,
    skipped_lines: usize,
    rng_algorithm: &'static str,
}

fn cmd_score(cfg: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    let (ds, skipped) = load(input, cfg)?;
    if ds.is_empty() {
        log::warn!("{} has no records", input.display());
    }
    let kernel = cfg.kernel_config()?;
    let (kernel, estimate) = pipeline::resolve_alpha(&ds, &kernel, cfg.alpha_choice())?;
    let selection = cfg.baseline_selection()?;
    let bundles = pipeline::score_dataset(&ds, &kernel, &selection)?;
    let table = ScoreTable::from_scores(&ds, &bundles)?;
    write_atomic(output, |tmp| Ok(table.write(tmp)?))?;
    let run = ScoreRun {
        command: "score",
        input: path_str(input),
        config: cfg,
        alpha: kernel.alpha,
        alpha_estimate: estimate,
        records: ds.len(),
        skipped_lines: skipped,
        rng_algorithm: RNG_ALGORITHM,
    };
    write_json(&sidecar_path(output, ".run.json"), &run)
}

#[derive(Serialize)]
struct AlphaRow {
    fraction: f64,
    #[serde(flatten)]
    estimate: AlphaEstimate,
}

#[derive(Serialize)]
struct AlphaRun<'a> {
    command: &'static str,
    input: String,
    config: &'a RunConfig,
    estimates: Vec<AlphaRow>,
}

fn cmd_alpha(cfg: &RunConfig, input: &Path, fractions: &[f64], output: Option<&Path>) -> Result<()> {
    let (ds, _) = load(input, cfg)?;
    let kernel = cfg.kernel_config()?;
    let fractions = if fractions.is_empty() { vec![cfg.kernel.alpha_fraction] } else { fractions.to_vec() };
    let estimates = fractions
        .iter()
        .map(|&f| Ok(AlphaRow { fraction: f, estimate: adaptive_alpha(&ds.records, &kernel, f, cfg.seed)? }))
        .collect::<Result<Vec<_>>>()?;
    for row in &estimates {
        log::info!("fraction {}: alpha {}", row.fraction, row.estimate.alpha);
    }
    emit_json(output, &AlphaRun { command: "alpha", input: path_str(input), config: cfg, estimates })
}

#[derive(Serialize)]
struct EvaluateRun<'a> {
    command: &'static str,
    input: String,
    metric_column: &'a str,
    config: &'a RunConfig,
    report: umpire::evaluate::EvalReport,
}

fn cmd_evaluate(cfg: &RunConfig, input: &Path, column: &str, lrt: bool, output: Option<&Path>) -> Result<()> {
    let table = ScoreTable::read(input).with_context(|| format!("reading {}", input.display()))?;
    let report = pipeline::evaluate_column(&table, column, &cfg.eval_config()?, lrt)?;
    emit_json(output, &EvaluateRun { command: "evaluate", input: path_str(input), metric_column: column, config: cfg, report })
}

#[derive(Serialize)]
struct SweepRun<'a> {
    command: &'static str,
    input: String,
    config: &'a RunConfig,
    best_alpha: Option<f64>,
    adaptive: AlphaEstimate,
    n_dev: usize,
    n_tune: usize,
    n_eval: usize,
}

fn opt(x: Option<f64>) -> String {
    x.map(ingest::format_float).unwrap_or_default()
}

fn cmd_sweep(cfg: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    cfg.validate_grid()?;
    let (ds, _) = load(input, cfg)?;
    let report = pipeline::sweep(&ds, &cfg.kernel_config()?, &cfg.sweep_grid, &cfg.eval_config()?, cfg.kernel.alpha_fraction)?;
    let mut text = String::from("alpha,adaptive,auroc,ece,cpc,combined,tune_combined\n");
    for r in &report.rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            ingest::format_float(r.alpha),
            u8::from(r.adaptive),
            ingest::format_float(r.auroc),
            opt(r.ece),
            opt(r.cpc),
            opt(r.combined),
            opt(r.tune_combined),
        ));
    }
    write_atomic(output, |tmp| Ok(fs::write(tmp, &text)?))?;
    let run = SweepRun {
        command: "sweep",
        input: path_str(input),
        config: cfg,
        best_alpha: report.best_alpha,
        adaptive: report.adaptive,
        n_dev: report.n_dev,
        n_tune: report.n_tune,
        n_eval: report.n_eval,
    };
    write_json(&sidecar_path(output, ".run.json"), &run)
}

#[derive(Serialize)]
struct Provenance<'a> {
    command: &'static str,
    preset: Option<&'a str>,
    spec_file: Option<String>,
    spec: &'a SynthSpec,
    n: usize,
    seed: u64,
    rng_algorithm: &'static str,
    config: &'a RunConfig,
}

fn read_spec(path: &Path) -> Result<SynthSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: SynthSpec = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(spec)
}

fn cmd_synth(cfg: &RunConfig, common: &Common, preset: Option<&str>, n: usize) -> Result<()> {
    let output = common.output()?;
    let spec = match (preset, common.input.as_deref()) {
        (Some(p), _) => p.parse::<Preset>()?.spec(),
        (None, Some(path)) => read_spec(path)?,
        (None, None) => bail!("give --preset or a spec file via --input"),
    };
    spec.validate().context("invalid synthetic spec")?;
    let records = spec.generate(n, cfg.seed)?;
    write_atomic(output, |tmp| Ok(ingest::write_instances(&records, tmp)?))?;
    let prov = Provenance {
        command: "synth",
        preset,
        spec_file: common.input.as_deref().map(path_str),
        spec: &spec,
        n,
        seed: cfg.seed,
        rng_algorithm: RNG_ALGORITHM,
        config: cfg,
    };
    write_json(&sidecar_path(output, ".provenance.json"), &prov)
}

#[derive(Serialize)]
struct CompareRun<'a> {
    command: &'static str,
    input: String,
    other: String,
    config: &'a RunConfig,
    deltas: Vec<pipeline::MetricDelta>,
}

fn cmd_compare(cfg: &RunConfig, input: &Path, other: &Path, output: Option<&Path>) -> Result<()> {
    let a = ScoreTable::read(input).with_context(|| format!("reading {}", input.display()))?;
    let b = ScoreTable::read(other).with_context(|| format!("reading {}", other.display()))?;
    let deltas = pipeline::compare(&a, &b, &cfg.eval_config()?)?;
    emit_json(output, &CompareRun { command: "compare", input: path_str(input), other: path_str(other), config: cfg, deltas })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Score { common, kernel, baselines, eigen_jitter } => {
            let mut cfg = common.resolve()?;
            kernel.apply(&mut cfg);
            if let Some(b) = baselines {
                cfg.baselines.enabled = b.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            }
            if let Some(j) = eigen_jitter {
                cfg.baselines.eigen_jitter = j;
            }
            let (input, output) = (common.input()?, common.output()?);
            with_threads(cfg.threads, || cmd_score(&cfg, input, output))?
        }
        Command::Alpha { common, kernel, fraction } => {
            let mut cfg = common.resolve()?;
            kernel.apply(&mut cfg);
            let input = common.input()?;
            with_threads(cfg.threads, || cmd_alpha(&cfg, input, &fraction, common.output.as_deref()))?
        }
        Command::Evaluate { common, eval, metric_column, lrt } => {
            let mut cfg = common.resolve()?;
            eval.apply(&mut cfg)?;
            cmd_evaluate(&cfg, common.input()?, &metric_column, lrt, common.output.as_deref())
        }
        Command::Sweep { common, kernel, eval, grid } => {
            let mut cfg = common.resolve()?;
            kernel.apply(&mut cfg);
            eval.apply(&mut cfg)?;
            if !grid.is_empty() {
                cfg.sweep_grid = grid;
            }
            let (input, output) = (common.input()?, common.output()?);
            with_threads(cfg.threads, || cmd_sweep(&cfg, input, output))?
        }
        Command::Synth { common, preset, n } => {
            let cfg = common.resolve()?;
            with_threads(cfg.threads, || cmd_synth(&cfg, &common, preset.as_deref(), n))?
        }
        Command::Compare { common, eval, other } => {
            let mut cfg = common.resolve()?;
            eval.apply(&mut cfg)?;
            cmd_compare(&cfg, common.input()?, &other, common.output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
