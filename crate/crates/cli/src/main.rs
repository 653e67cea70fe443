use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use spatial_crt::datagen::{derive_seed, generate_trial, ScenarioConfig};
use spatial_crt::design::{required_clusters, scenario, variance_partition, DesignTarget};
use spatial_crt::harness::{
    export_plotdata, read_replicates, run_study_with_progress, summarize_replicates, write_plotdata,
    write_study, Aggregator, DecisionRule, PlotKind, ScenarioRef, StudyConfig, SummaryFile, THREADS_ENV,
};
use spatial_crt::inference::{fit_with, parse_models, FitSettings};
use spatial_crt::priors::PriorSpec;

#[derive(Parser)]
#[command(name = "spatial-crt", version, about = "Simulation studies for spatially structured cluster randomized trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Variance partition and required cluster counts.
    Design(DesignArgs),
    /// Simulate one trial, write it as CSV and optionally fit models to it.
    Simulate(SimulateArgs),
    /// Run an operating-characteristic study.
    Study(StudyArgs),
    /// Recompute summaries from a per-replicate CSV.
    Summarize(SummarizeArgs),
    /// Write long-format figure tables from a summary JSON.
    ExportPlotdata(ExportArgs),
}

#[derive(Args)]
struct DesignArgs {
    /// Comma-separated ICC values.
    #[arg(long, default_value = "0.05,0.15,0.25")]
    icc: String,
    /// Cluster-level share of the non-individual variance.
    #[arg(long, default_value_t = 0.5)]
    f: f64,
    #[arg(long, default_value_t = 2.25)]
    sigma_w2: f64,
    #[arg(long, default_value_t = 0.6)]
    theta: f64,
    #[arg(long, default_value_t = 0.85)]
    power: f64,
    /// Two-sided type I error rate.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 40)]
    m: usize,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON file (a single scenario definition).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario label, used when no config is given.
    #[arg(long, default_value = "A")]
    scenario: String,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    replicate: usize,
    /// Models to fit, comma-separated or "all".
    #[arg(long)]
    models: Option<String>,
    /// Output directory for trial.csv (and fits.json).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    /// Study configuration JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated built-in scenario labels.
    #[arg(long)]
    scenario: Option<String>,
    /// Comma-separated true effects.
    #[arg(long)]
    theta_grid: Option<String>,
    #[arg(long)]
    models: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker count; overrides the config and the SPATIAL_CRT_THREADS variable.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Per-replicate CSV written by `study`.
    #[arg(long, default_value = "out/replicates.csv")]
    input: PathBuf,
    /// Re-decide rejections at this threshold from the stored probabilities.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_parser = parse_aggregator, default_value = "mean")]
    aggregator: Aggregator,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Summary JSON written by `study`.
    #[arg(long, default_value = "out/summary.json")]
    input: PathBuf,
    /// power, fpr, pct_re, bias, mse, coverage, or all.
    #[arg(long, default_value = "all")]
    kind: String,
    /// Output directory; one `<kind>.csv` per kind.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_aggregator(s: &str) -> std::result::Result<Aggregator, String> {
    match s {
        "mean" => Ok(Aggregator::Mean),
        "median" => Ok(Aggregator::Median),
        _ => Err(format!("unknown aggregator {s:?} (mean or median)")),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("not a number: {t:?}")))
        .collect()
}

fn design(args: DesignArgs) -> Result<()> {
    let mut rows = Vec::new();
    for icc in parse_list(&args.icc)? {
        let vc = variance_partition(icc, args.f, args.sigma_w2)?;
        let target = DesignTarget {
            theta: args.theta,
            power: args.power,
            alpha: args.alpha,
            m: args.m,
            icc,
        };
        let clusters = required_clusters(&target, args.sigma_w2)?;
        rows.push(serde_json::json!({
            "icc": icc,
            "components": vc,
            "required_clusters": clusters,
        }));
    }
    println!("{}", serde_json::to_string_pretty(&rows)?);
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg: ScenarioConfig = match &args.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => scenario(&args.scenario)?,
    };
    if let Some(t) = args.theta {
        cfg.theta = t;
    }
    cfg.validate()?;
    let seed = derive_seed(args.seed, &cfg.label, 0, args.replicate);
    let trial = generate_trial(&cfg, seed)?;
    fs::create_dir_all(&args.out)?;
    let path = args.out.join("trial.csv");
    trial.save_csv(&path)?;
    eprintln!("wrote {} ({} individuals, seed {seed})", path.display(), trial.n());
    if let Some(models) = &args.models {
        let mut fits = Vec::new();
        for kind in parse_models(models)? {
            let start = Instant::now();
            let fit = fit_with(kind, &trial, &PriorSpec::for_model(kind), &FitSettings::default())?;
            eprintln!("{kind}: {:.3}s", start.elapsed().as_secs_f64());
            fits.push(fit.diagnostics());
        }
        let text = serde_json::to_string_pretty(&fits)?;
        fs::write(args.out.join("fits.json"), &text)?;
        println!("{text}");
    }
    Ok(())
}

fn study(args: StudyArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => StudyConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => StudyConfig::default(),
    };
    if let Some(s) = &args.scenario {
        cfg.scenarios = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| ScenarioRef::Label(t.trim().to_string()))
            .collect();
    }
    if let Some(t) = &args.theta_grid {
        cfg.theta_grid = parse_list(t)?;
    }
    if let Some(m) = &args.models {
        cfg.models = parse_models(m)?;
    }
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    if let Some(t) = args.threshold {
        cfg.rule.threshold = t;
    }
    if let Some(d) = args.delta {
        cfg.rule.delta = d;
    }
    cfg.validate()?;
    eprintln!(
        "study: {} scenarios x {} theta x {} models x {} reps on {} workers ({THREADS_ENV})",
        cfg.scenarios.len(),
        cfg.theta_grid.len(),
        cfg.models.len(),
        cfg.reps,
        cfg.resolved_threads()
    );
    let start = Instant::now();
    let step = (cfg.scenarios.len() * cfg.theta_grid.len() * cfg.reps / 100).max(1);
    let outcome = run_study_with_progress(&cfg, |done, total| {
        if done % step == 0 || done == total {
            eprint!("\r{done}/{total} trials, {:.0}s", start.elapsed().as_secs_f64());
            let _ = std::io::stderr().flush();
        }
    })?;
    eprintln!();
    write_study(&cfg, &outcome, &args.out)?;
    let failed = outcome.results.iter().filter(|r| !r.is_ok()).count();
    for s in outcome.summaries.iter().filter(|s| s.flagged) {
        eprintln!("warning: {} theta {} {}: {} failed fits", s.scenario, s.theta_true, s.model, s.n_failed);
    }
    eprintln!(
        "wrote {} ({} rows, {failed} failed fits)",
        args.out.display(),
        outcome.results.len()
    );
    Ok(())
}

fn summarize(args: SummarizeArgs) -> Result<()> {
    let file = fs::File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let results = read_replicates(file)?;
    let rule = match args.threshold {
        Some(threshold) => {
            let r = DecisionRule { delta: 0.0, threshold };
            r.validate()?;
            Some(r)
        }
        None => None,
    };
    let summaries = summarize_replicates(&results, args.aggregator, rule.as_ref())?;
    let text = serde_json::to_string_pretty(&summaries)?;
    match &args.out {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let summaries = match serde_json::from_str::<SummaryFile>(&text) {
        Ok(f) => f.summaries,
        Err(_) => serde_json::from_str(&text).context("expected a study summary or a list of summaries")?,
    };
    let kinds: Vec<PlotKind> = if args.kind == "all" {
        PlotKind::ALL.to_vec()
    } else {
        args.kind.split(',').map(|k| k.parse()).collect::<std::result::Result<_, _>>()?
    };
    fs::create_dir_all(&args.out)?;
    for kind in kinds {
        let rows = export_plotdata(&summaries, kind);
        let path: PathBuf = Path::new(&args.out).join(format!("{}.csv", kind.name()));
        write_plotdata(&rows, fs::File::create(&path)?)?;
        eprintln!("wrote {} ({} rows)", path.display(), rows.len());
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Design(a) => design(a),
        Command::Simulate(a) => simulate(a),
        Command::Study(a) => study(a),
        Command::Summarize(a) => summarize(a),
        Command::ExportPlotdata(a) => export(a),
    }
}
