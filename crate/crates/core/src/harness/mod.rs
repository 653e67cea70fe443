//! Decision rule, operating characteristics and the replicate engine.
//!
//! A study is a grid of cells `(scenario, theta, model)`. Each replicate of
//! a `(scenario, theta)` pair simulates one trial from its own derived seed
//! and fits every requested model to it, so models are compared on common
//! data. Outputs are keyed by cell and replicate, never by completion order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{derive_seed, generate_trial, Randomization, ScenarioConfig};
use crate::design::{scenario, theta_grid};
use crate::error::{Error, Result};
use crate::inference::{credible_interval, fit_with, prob_exceeds, FitSettings, ModelKind};
use crate::priors::PriorSpec;

/// Current version of the study configuration format.
pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable consulted for the worker count when neither the
/// configuration nor the command line sets one.
pub const THREADS_ENV: &str = "SPATIAL_CRT_THREADS";

/// Cells whose failure share exceeds this are flagged.
pub const FAILURE_FLAG_SHARE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    /// Minimum clinically important difference.
    #[serde(default)]
    pub delta: f64,
    /// Reject when the exceedance probability is strictly above this.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    0.95
}

impl Default for DecisionRule {
    fn default() -> Self {
        DecisionRule {
            delta: 0.0,
            threshold: default_threshold(),
        }
    }
}

impl DecisionRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        if !self.delta.is_finite() {
            return Err(Error::invalid("delta must be finite"));
        }
        Ok(())
    }
}

/// `true` iff `prob` is strictly above the rule's threshold.
pub fn decide(prob: f64, rule: &DecisionRule) -> bool {
    prob > rule.threshold
}

/// One model fitted to one simulated trial. Numeric fields are `None` when
/// the fit failed, in which case `error` holds the failure code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub scenario: String,
    pub theta_true: f64,
    pub model: ModelKind,
    pub replicate: usize,
    pub seed: u64,
    pub post_mean: Option<f64>,
    pub post_sd: Option<f64>,
    pub prob_exceeds: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub rejected: Option<bool>,
    pub covered: Option<bool>,
    pub error: Option<String>,
    /// Seconds. Kept out of the per-replicate CSV so that file stays
    /// reproducible; see [`write_timings`].
    #[serde(skip)]
    pub fit_wall_time: f64,
}

impl ReplicateResult {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    fn failed(scenario: &str, theta: f64, model: ModelKind, replicate: usize, seed: u64, err: &Error) -> Self {
        ReplicateResult {
            scenario: scenario.to_string(),
            theta_true: theta,
            model,
            replicate,
            seed,
            post_mean: None,
            post_sd: None,
            prob_exceeds: None,
            ci_lo: None,
            ci_hi: None,
            rejected: None,
            covered: None,
            error: Some(err.code().to_string()),
            fit_wall_time: 0.0,
        }
    }
}

/// How the per-replicate posterior sds are pooled into modSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCharSummary {
    pub scenario: String,
    pub theta_true: f64,
    pub model: ModelKind,
    /// Successful replicates entering the metrics.
    pub n_reps: usize,
    pub n_failed: usize,
    /// More than 1% of the cell's replicates failed.
    pub flagged: bool,
    /// FPR at theta = 0, power otherwise.
    pub rejection_rate: f64,
    pub mod_se: f64,
    pub emp_se: f64,
    pub pct_re: f64,
    pub bias: f64,
    pub mse: f64,
    pub coverage: f64,
    pub mc_se_rejection: f64,
    pub mc_se_coverage: f64,
    pub mc_se_bias: f64,
    pub mc_se_mse: f64,
    /// Large-sample error of %RE from the sampling error of empSE.
    pub mc_se_pct_re: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Operating characteristics of one cell. Failed replicates are counted but
/// excluded. Sums run over values sorted by replicate index, so the result
/// does not depend on the order of `results`.
pub fn summarize(results: &[ReplicateResult], theta_true: f64, aggregator: Aggregator) -> Result<OpCharSummary> {
    let first = results.first().ok_or_else(|| Error::invalid("no replicates to summarize"))?;
    if results
        .iter()
        .any(|r| r.scenario != first.scenario || r.model != first.model || r.theta_true != first.theta_true)
    {
        return Err(Error::invalid("replicates belong to different cells"));
    }
    let mut ok: Vec<&ReplicateResult> = results.iter().filter(|r| r.is_ok()).collect();
    ok.sort_by_key(|r| r.replicate);
    let n_failed = results.len() - ok.len();
    let s = ok.len();
    if s < 2 {
        return Err(Error::invalid(format!("need at least 2 successful replicates, got {s}")));
    }
    let field = |r: &ReplicateResult, v: Option<f64>| {
        v.ok_or_else(|| Error::invalid(format!("replicate {} lacks a posterior summary", r.replicate)))
    };
    let means = ok.iter().map(|r| field(r, r.post_mean)).collect::<Result<Vec<_>>>()?;
    let sds = ok.iter().map(|r| field(r, r.post_sd)).collect::<Result<Vec<_>>>()?;
    let rejected = ok.iter().filter(|r| r.rejected == Some(true)).count();
    let covered = ok.iter().filter(|r| r.covered == Some(true)).count();

    let sf = s as f64;
    let rejection_rate = rejected as f64 / sf;
    let coverage = covered as f64 / sf;
    let mod_se = match aggregator {
        Aggregator::Mean => mean(&sds),
        Aggregator::Median => median(&sds),
    };
    let emp_se = sample_sd(&means);
    let bias = mean(&means) - theta_true;
    let sq: Vec<f64> = means.iter().map(|m| (m - theta_true).powi(2)).collect();
    let mse = mean(&sq);
    let binom = |p: f64| (p * (1.0 - p) / sf).sqrt();
    Ok(OpCharSummary {
        scenario: first.scenario.clone(),
        theta_true,
        model: first.model,
        n_reps: s,
        n_failed,
        flagged: n_failed as f64 > FAILURE_FLAG_SHARE * results.len() as f64,
        rejection_rate,
        mod_se,
        emp_se,
        pct_re: (mod_se / emp_se - 1.0) * 100.0,
        bias,
        mse,
        coverage,
        mc_se_rejection: binom(rejection_rate),
        mc_se_coverage: binom(coverage),
        mc_se_bias: emp_se / sf.sqrt(),
        mc_se_mse: sample_sd(&sq) / sf.sqrt(),
        mc_se_pct_re: 100.0 * mod_se / emp_se / (2.0 * (sf - 1.0)).sqrt(),
    })
}

/// A built-in scenario label or a full inline definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Label(String),
    Custom(ScenarioConfig),
}

impl ScenarioRef {
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        match self {
            ScenarioRef::Label(l) => scenario(l),
            ScenarioRef::Custom(c) => {
                c.validate()?;
                Ok(c.clone())
            }
        }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_scenarios() -> Vec<ScenarioRef> {
    crate::design::SCENARIO_LABELS
        .iter()
        .map(|l| ScenarioRef::Label(l.to_string()))
        .collect()
}

fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

fn default_reps() -> usize {
    100
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<ScenarioRef>,
    /// True effects; replicate seeds depend on the position in this list.
    #[serde(default = "theta_grid")]
    pub theta_grid: Vec<f64>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// First replicate index; lets a study be split into disjoint batches.
    #[serde(default)]
    pub first_replicate: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker count; `None` defers to the environment, then to all cores.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub rule: DecisionRule,
    /// Credible level of the coverage interval.
    #[serde(default = "default_level")]
    pub ci_level: f64,
    /// Overrides the randomization of every scenario when set.
    #[serde(default)]
    pub randomization: Option<Randomization>,
    #[serde(default)]
    pub aggregator: Aggregator,
    /// `None` uses each model's default priors.
    #[serde(default)]
    pub priors: Option<PriorSpec>,
    #[serde(default)]
    pub settings: FitSettings,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            schema_version: SCHEMA_VERSION,
            scenarios: default_scenarios(),
            theta_grid: theta_grid(),
            models: default_models(),
            reps: default_reps(),
            first_replicate: 0,
            seed: 0,
            threads: None,
            rule: DecisionRule::default(),
            ci_level: default_level(),
            randomization: None,
            aggregator: Aggregator::Mean,
            priors: None,
            settings: FitSettings::default(),
        }
    }
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.scenarios.is_empty() || self.theta_grid.is_empty() || self.models.is_empty() {
            return Err(Error::invalid("scenarios, theta_grid and models must be nonempty"));
        }
        if self.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("threads must be at least 1"));
        }
        if self.theta_grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("theta values must be finite"));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::invalid("ci_level must lie in (0, 1)"));
        }
        self.rule.validate()?;
        if let Some(p) = &self.priors {
            p.validate()?;
        }
        let mut labels = Vec::new();
        for s in self.resolved_scenarios()? {
            if labels.contains(&s.label) {
                return Err(Error::invalid(format!("scenario {} listed twice", s.label)));
            }
            labels.push(s.label);
        }
        Ok(())
    }

    /// Scenario definitions with the randomization override applied.
    pub fn resolved_scenarios(&self) -> Result<Vec<ScenarioConfig>> {
        self.scenarios
            .iter()
            .map(|s| {
                let mut c = s.resolve()?;
                if let Some(r) = self.randomization {
                    c.randomization = r;
                }
                Ok(c)
            })
            .collect()
    }

    /// Explicit setting, else [`THREADS_ENV`], else all available cores.
    pub fn resolved_threads(&self) -> usize {
        self.threads
            .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()))
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    fn priors_for(&self, kind: ModelKind) -> PriorSpec {
        self.priors.clone().unwrap_or_else(|| PriorSpec::for_model(kind))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcome {
    /// Ordered by scenario, theta, model, replicate (configuration order).
    pub results: Vec<ReplicateResult>,
    pub summaries: Vec<OpCharSummary>,
}

/// Fits every requested model to one simulated trial.
fn run_unit(cfg: &StudyConfig, sc: &ScenarioConfig, theta_index: usize, replicate: usize) -> Vec<ReplicateResult> {
    let theta = cfg.theta_grid[theta_index];
    let seed = derive_seed(cfg.seed, &sc.label, theta_index, replicate);
    let mut scenario = sc.clone();
    scenario.theta = theta;
    let data = generate_trial(&scenario, seed);
    cfg.models
        .iter()
        .map(|&kind| {
            let data = match &data {
                Ok(d) => d,
                Err(e) => return ReplicateResult::failed(&sc.label, theta, kind, replicate, seed, e),
            };
            let start = Instant::now();
            let outcome = fit_with(kind, data, &cfg.priors_for(kind), &cfg.settings).and_then(|f| {
                let ci = credible_interval(&f.effect, cfg.ci_level)?;
                Ok((f.effect.mean(), f.effect.sd(), prob_exceeds(&f.effect, cfg.rule.delta), ci))
            });
            let elapsed = start.elapsed().as_secs_f64();
            match outcome {
                Ok((m, sd, p, (lo, hi))) => ReplicateResult {
                    scenario: sc.label.clone(),
                    theta_true: theta,
                    model: kind,
                    replicate,
                    seed,
                    post_mean: Some(m),
                    post_sd: Some(sd),
                    prob_exceeds: Some(p),
                    ci_lo: Some(lo),
                    ci_hi: Some(hi),
                    rejected: Some(decide(p, &cfg.rule)),
                    covered: Some(lo <= theta && theta <= hi),
                    error: None,
                    fit_wall_time: elapsed,
                },
                Err(e) => {
                    let mut r = ReplicateResult::failed(&sc.label, theta, kind, replicate, seed, &e);
                    r.fit_wall_time = elapsed;
                    r
                }
            }
        })
        .collect()
}

/// Runs the study on a dedicated pool of [`StudyConfig::resolved_threads`]
/// workers. Results are identical for any worker count.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyOutcome> {
    run_study_with_progress(cfg, |_, _| {})
}

/// As [`run_study`], calling `progress(done, total)` after each simulated
/// trial (from worker threads, in completion order).
pub fn run_study_with_progress<P>(cfg: &StudyConfig, progress: P) -> Result<StudyOutcome>
where
    P: Fn(usize, usize) + Sync,
{
    cfg.validate()?;
    let scenarios = cfg.resolved_scenarios()?;
    let n_theta = cfg.theta_grid.len();
    let units: Vec<(usize, usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..n_theta).flat_map(move |t| (0..cfg.reps).map(move |r| (s, t, r))))
        .collect();
    let total = units.len();
    let done = AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.resolved_threads())
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let per_unit: Vec<Vec<ReplicateResult>> = pool.install(|| {
        units
            .par_iter()
            .map(|&(s, t, r)| {
                let out = run_unit(cfg, &scenarios[s], t, cfg.first_replicate + r);
                progress(done.fetch_add(1, Ordering::Relaxed) + 1, total);
                out
            })
            .collect()
    });

    // units are (scenario, theta, rep)-major; regroup to cell-major order
    let n_models = cfg.models.len();
    let mut results = Vec::with_capacity(total * n_models);
    let mut summaries = Vec::new();
    for s in 0..scenarios.len() {
        for t in 0..n_theta {
            let block = &per_unit[(s * n_theta + t) * cfg.reps..(s * n_theta + t + 1) * cfg.reps];
            for m in 0..n_models {
                let cell: Vec<ReplicateResult> = block.iter().map(|u| u[m].clone()).collect();
                // cells with fewer than two successful fits have no spread
                if cell.iter().filter(|r| r.is_ok()).count() >= 2 {
                    summaries.push(summarize(&cell, cfg.theta_grid[t], cfg.aggregator)?);
                }
                results.extend(cell);
            }
        }
    }
    Ok(StudyOutcome { results, summaries })
}

/// Per-replicate CSV, one row per [`ReplicateResult`]. Failed fits leave
/// the numeric columns empty.
pub fn write_replicates<W: Write>(results: &[ReplicateResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in results {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_replicates<R: Read>(reader: R) -> Result<Vec<ReplicateResult>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Fit wall times, kept apart from the reproducible outputs.
pub fn write_timings<W: Write>(results: &[ReplicateResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "theta_true", "model", "replicate", "fit_wall_time"])?;
    for r in results {
        w.write_record([
            r.scenario.clone(),
            r.theta_true.to_string(),
            r.model.name().to_string(),
            r.replicate.to_string(),
            format!("{:.6}", r.fit_wall_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub schema_version: u32,
    pub config: StudyConfig,
    pub summaries: Vec<OpCharSummary>,
}

/// Summary JSON. The bytes depend only on the configuration (with `threads`
/// cleared) and the summaries.
pub fn summary_json(cfg: &StudyConfig, summaries: &[OpCharSummary]) -> Result<String> {
    let mut config = cfg.clone();
    config.threads = None;
    let file = SummaryFile {
        schema_version: SCHEMA_VERSION,
        config,
        summaries: summaries.to_vec(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Writes `replicates.csv`, `summary.json` and `timings.csv` into `dir`.
pub fn write_study(cfg: &StudyConfig, outcome: &StudyOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_replicates(&outcome.results, fs::File::create(dir.join("replicates.csv"))?)?;
    write_timings(&outcome.results, fs::File::create(dir.join("timings.csv"))?)?;
    fs::write(dir.join("summary.json"), summary_json(cfg, &outcome.summaries)?)?;
    Ok(())
}

/// Regroups replicate rows into cells (first-appearance order) and
/// summarizes each. With `rule`, decisions are re-taken from the stored
/// exceedance probabilities; `delta` must match the one used to fit.
pub fn summarize_replicates(
    results: &[ReplicateResult],
    aggregator: Aggregator,
    rule: Option<&DecisionRule>,
) -> Result<Vec<OpCharSummary>> {
    let mut keys: Vec<(String, u64, ModelKind)> = Vec::new();
    let mut cells: Vec<Vec<ReplicateResult>> = Vec::new();
    for r in results {
        let key = (r.scenario.clone(), r.theta_true.to_bits(), r.model);
        let idx = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                keys.push(key);
                cells.push(Vec::new());
                cells.len() - 1
            }
        };
        let mut r = r.clone();
        if let (Some(rule), Some(p)) = (rule, r.prob_exceeds) {
            r.rejected = Some(decide(p, rule));
        }
        cells[idx].push(r);
    }
    cells
        .iter()
        .map(|c| summarize(c, c[0].theta_true, aggregator))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Power,
    Fpr,
    PctRe,
    Bias,
    Mse,
    Coverage,
}

impl PlotKind {
    pub const ALL: [PlotKind; 6] = [
        PlotKind::Power,
        PlotKind::Fpr,
        PlotKind::PctRe,
        PlotKind::Bias,
        PlotKind::Mse,
        PlotKind::Coverage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Power => "power",
            PlotKind::Fpr => "fpr",
            PlotKind::PctRe => "pct_re",
            PlotKind::Bias => "bias",
            PlotKind::Mse => "mse",
            PlotKind::Coverage => "coverage",
        }
    }

    fn metric(self, s: &OpCharSummary) -> (f64, f64) {
        match self {
            PlotKind::Power | PlotKind::Fpr => (s.rejection_rate, s.mc_se_rejection),
            PlotKind::PctRe => (s.pct_re, s.mc_se_pct_re),
            PlotKind::Bias => (s.bias, s.mc_se_bias),
            PlotKind::Mse => (s.mse, s.mc_se_mse),
            PlotKind::Coverage => (s.coverage, s.mc_se_coverage),
        }
    }
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| Error::invalid(format!("unknown plot kind {s:?}")))
    }
}

/// One long-format row of a figure table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub scenario: String,
    pub model: ModelKind,
    pub theta: f64,
    pub value: f64,
    pub mc_se: f64,
}

/// Rows for one figure kind, in summary order. `Fpr` keeps theta = 0 only.
pub fn export_plotdata(summaries: &[OpCharSummary], kind: PlotKind) -> Vec<PlotRow> {
    summaries
        .iter()
        .filter(|s| kind != PlotKind::Fpr || s.theta_true == 0.0)
        .map(|s| {
            let (value, mc_se) = kind.metric(s);
            PlotRow {
                scenario: s.scenario.clone(),
                model: s.model,
                theta: s.theta_true,
                value,
                mc_se,
            }
        })
        .collect()
}

pub fn write_plotdata<W: Write>(rows: &[PlotRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plotdata<R: Read>(reader: R) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rep(replicate: usize, mean: f64, sd: f64, p: f64, lo: f64, hi: f64, theta: f64) -> ReplicateResult {
        let rule = DecisionRule::default();
        ReplicateResult {
            scenario: "A".into(),
            theta_true: theta,
            model: ModelKind::SMM,
            replicate,
            seed: replicate as u64,
            post_mean: Some(mean),
            post_sd: Some(sd),
            prob_exceeds: Some(p),
            ci_lo: Some(lo),
            ci_hi: Some(hi),
            rejected: Some(decide(p, &rule)),
            covered: Some(lo <= theta && theta <= hi),
            error: None,
            fit_wall_time: 0.0,
        }
    }

    #[test]
    fn decision_boundary_is_strict() {
        let rule = DecisionRule::default();
        assert!(decide(0.96, &rule));
        assert!(!decide(0.95, &rule));
        assert!(DecisionRule { delta: 0.0, threshold: 1.0 }.validate().is_err());
        assert!(DecisionRule { delta: 0.0, threshold: 0.0 }.validate().is_err());
    }

    #[test]
    fn hand_built_five_replicates() {
        let theta = 0.3;
        let rows = vec![
            rep(0, 0.10, 0.20, 0.70, -0.2, 0.4, theta),
            rep(1, 0.50, 0.25, 0.99, 0.1, 0.9, theta),
            rep(2, 0.30, 0.22, 0.90, -0.1, 0.7, theta),
            rep(3, 0.70, 0.18, 0.999, 0.35, 1.05, theta),
            rep(4, 0.20, 0.30, 0.75, -0.4, 0.8, theta),
        ];
        let s = summarize(&rows, theta, Aggregator::Mean).unwrap();
        // spreadsheet arithmetic: means sum 1.8, mean 0.36
        assert_eq!(s.n_reps, 5);
        assert!((s.rejection_rate - 0.4).abs() < 1e-15);
        assert!((s.coverage - 0.8).abs() < 1e-15);
        assert!((s.mod_se - 0.23).abs() < 1e-15);
        // deviations -0.26, 0.14, -0.06, 0.34, -0.16; squares sum 0.232
        let emp = (0.232f64 / 4.0).sqrt();
        assert!((s.emp_se - emp).abs() < 1e-14);
        assert!((s.bias - 0.06).abs() < 1e-14);
        // (theta deviations) -0.2, 0.2, 0, 0.4, -0.1 -> squares 0.25 / 5
        assert!((s.mse - 0.05).abs() < 1e-14);
        assert!((s.pct_re - (0.23 / emp - 1.0) * 100.0).abs() < 1e-10);
        assert!((s.mc_se_rejection - (0.4f64 * 0.6 / 5.0).sqrt()).abs() < 1e-15);
        let med = summarize(&rows, theta, Aggregator::Median).unwrap();
        assert!((med.mod_se - 0.22).abs() < 1e-15);
    }

    #[test]
    fn summarize_edge_cases() {
        let all: Vec<_> = (0..4).map(|i| rep(i, 0.5 + 0.01 * i as f64, 0.1, 0.99, 0.0, 1.0, 0.5)).collect();
        assert_eq!(summarize(&all, 0.5, Aggregator::Mean).unwrap().rejection_rate, 1.0);
        assert!(summarize(&all[..1], 0.5, Aggregator::Mean).is_err());
        assert!(summarize(&[], 0.5, Aggregator::Mean).is_err());

        // post_sd constant c and post_mean sample sd c -> %RE = 0
        let c = 0.5f64.sqrt();
        let rows = vec![rep(0, 0.0, c, 0.5, -1.0, 1.0, 0.0), rep(1, 1.0, c, 0.5, -1.0, 1.0, 0.0)];
        assert!(summarize(&rows, 0.0, Aggregator::Mean).unwrap().pct_re.abs() < 1e-12);

        let mut mixed = all.clone();
        mixed[1].model = ModelKind::MM;
        assert!(summarize(&mixed, 0.5, Aggregator::Mean).is_err());
    }

    #[test]
    fn failures_are_excluded_and_flagged() {
        let mut rows: Vec<_> = (0..100).map(|i| rep(i, 0.01 * i as f64, 0.3, 0.5, -1.0, 1.0, 0.0)).collect();
        let e = Error::NotPositiveDefinite { pivot: 3 };
        rows[7] = ReplicateResult::failed("A", 0.0, ModelKind::SMM, 7, 7, &e);
        let s = summarize(&rows, 0.0, Aggregator::Mean).unwrap();
        assert_eq!((s.n_reps, s.n_failed, s.flagged), (99, 1, false));
        rows[8] = ReplicateResult::failed("A", 0.0, ModelKind::SMM, 8, 8, &e);
        let s = summarize(&rows, 0.0, Aggregator::Mean).unwrap();
        assert_eq!((s.n_reps, s.n_failed, s.flagged), (98, 2, true));
    }

    fn arb_rows() -> impl Strategy<Value = Vec<ReplicateResult>> {
        prop::collection::vec((-1.0f64..2.0, 0.05f64..1.0, 0.0f64..1.0), 2..40).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (m, sd, p))| rep(i, m, sd, p, m - 2.0 * sd, m + 2.0 * sd, 0.3))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn summary_metric_identities(rows in arb_rows()) {
            let s = summarize(&rows, 0.3, Aggregator::Mean).unwrap();
            prop_assert!((0.0..=1.0).contains(&s.rejection_rate));
            prop_assert!((0.0..=1.0).contains(&s.coverage));
            prop_assert!(s.mse >= s.bias * s.bias);
            let n = rows.len() as f64;
            let biased_var = s.emp_se * s.emp_se * (n - 1.0) / n;
            prop_assert!((s.mse - s.bias * s.bias - biased_var).abs() < 1e-12);
        }

        #[test]
        fn summary_ignores_row_order(rows in arb_rows(), rot in 0usize..40) {
            let mut shuffled = rows.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            prop_assert_eq!(
                summarize(&rows, 0.3, Aggregator::Mean).unwrap(),
                summarize(&shuffled, 0.3, Aggregator::Mean).unwrap()
            );
        }
    }

    #[test]
    fn replicate_csv_round_trip() {
        let mut rows: Vec<_> = (0..5).map(|i| rep(i, 0.1 * i as f64 + 1e-17, 0.3, 0.97, -0.1, 0.9, 0.0)).collect();
        rows.push(ReplicateResult::failed("A", 0.0, ModelKind::SMM, 5, 99, &Error::Generation("x".into())));
        let mut buf = Vec::new();
        write_replicates(&rows, &mut buf).unwrap();
        let back = read_replicates(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("scenario,theta_true,model,replicate,seed,post_mean"));
        assert!(text.contains(",smm,"));
        assert!(!text.contains("wall"));
    }

    fn fake_summaries() -> Vec<OpCharSummary> {
        let mut out = Vec::new();
        for sc in crate::design::SCENARIO_LABELS {
            for kind in ModelKind::ALL {
                for (ti, theta) in theta_grid().into_iter().enumerate() {
                    let rows: Vec<_> = (0..6)
                        .map(|i| {
                            let mut r = rep(i, theta + 0.013 * (i * ti) as f64, 0.2 + 0.01 * i as f64, 0.9 + 0.015 * i as f64, theta - 0.3, theta + 0.1 * i as f64, theta);
                            r.scenario = sc.to_string();
                            r.model = kind;
                            r
                        })
                        .collect();
                    out.push(summarize(&rows, theta, Aggregator::Mean).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn plotdata_cardinality_and_fpr_filter() {
        let sums = fake_summaries();
        assert_eq!(export_plotdata(&sums, PlotKind::Power).len(), 450);
        let fpr = export_plotdata(&sums, PlotKind::Fpr);
        assert_eq!(fpr.len(), 30);
        assert!(fpr.iter().all(|r| r.theta == 0.0));
    }

    #[test]
    fn plotdata_round_trip_is_exact() {
        let sums = fake_summaries();
        for kind in PlotKind::ALL {
            let rows = export_plotdata(&sums, kind);
            let mut buf = Vec::new();
            write_plotdata(&rows, &mut buf).unwrap();
            let back = read_plotdata(buf.as_slice()).unwrap();
            assert_eq!(back, rows, "{}", kind.name());
            for (row, s) in back.iter().zip(sums.iter().filter(|s| kind != PlotKind::Fpr || s.theta_true == 0.0)) {
                assert_eq!(row.value.to_bits(), kind.metric(s).0.to_bits());
            }
        }
        assert_eq!("pct-re".parse::<PlotKind>().unwrap(), PlotKind::PctRe);
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = StudyConfig::from_json("{}").unwrap();
        assert_eq!(cfg, StudyConfig::default());
        assert_eq!(cfg.theta_grid.len(), 15);
        let cfg = StudyConfig::from_json(r#"{"schema_version":1,"scenarios":["B"],"models":["smm","fm_naive"],"reps":3,"rule":{"threshold":0.9}}"#).unwrap();
        assert_eq!(cfg.models, vec![ModelKind::SMM, ModelKind::FMNaive]);
        assert_eq!(cfg.rule.delta, 0.0);
        assert!(StudyConfig::from_json(r#"{"schema_version":2}"#).is_err());
        assert!(StudyConfig::from_json(r#"{"scenarios":["Q"]}"#).is_err());
        assert!(StudyConfig::from_json(r#"{"scenarios":["A","A"]}"#).is_err());
        assert!(StudyConfig::from_json(r#"{"reps":0}"#).is_err());
        assert!(StudyConfig::from_json(r#"{"bogus":1}"#).is_err());

        let mut custom = scenario("C").unwrap();
        custom.label = "C-small".into();
        custom.grid.rows = 2;
        let text = serde_json::to_string(&StudyConfig {
            scenarios: vec![ScenarioRef::Custom(custom.clone())],
            ..StudyConfig::default()
        })
        .unwrap();
        let back = StudyConfig::from_json(&text).unwrap();
        assert_eq!(back.resolved_scenarios().unwrap(), vec![custom]);
    }

    fn tiny_config() -> StudyConfig {
        let mut sc = scenario("A").unwrap();
        sc.label = "tiny".into();
        sc.grid.rows = 2;
        sc.grid.cols = 2;
        sc.m = 6;
        StudyConfig {
            scenarios: vec![ScenarioRef::Custom(sc)],
            theta_grid: vec![0.0, 1.0],
            models: vec![ModelKind::FMNaive, ModelKind::MM, ModelKind::Cluster],
            reps: 4,
            seed: 11,
            threads: Some(2),
            ..StudyConfig::default()
        }
    }

    #[test]
    fn study_bookkeeping_and_order() {
        let cfg = tiny_config();
        let out = run_study(&cfg).unwrap();
        assert_eq!(out.results.len(), 2 * 3 * 4);
        assert_eq!(out.summaries.len(), 6);
        let keys: Vec<_> = out.results.iter().map(|r| (r.theta_true.to_bits(), r.model.name(), r.replicate)).collect();
        let mut expect = Vec::new();
        for t in [0.0f64, 1.0] {
            for m in &cfg.models {
                for r in 0..4 {
                    expect.push((t.to_bits(), m.name(), r));
                }
            }
        }
        assert_eq!(keys, expect);
        // models share the simulated trial of a replicate
        assert_eq!(out.results[0].seed, out.results[4].seed);
        assert_eq!(out.results[0].seed, derive_seed(11, "tiny", 0, 0));
        let again = summarize_replicates(&out.results, cfg.aggregator, None).unwrap();
        assert_eq!(again, out.summaries);
    }

    #[test]
    fn study_is_independent_of_worker_count() {
        let mut cfg = tiny_config();
        cfg.threads = Some(1);
        let a = run_study(&cfg).unwrap();
        cfg.threads = Some(3);
        let b = run_study(&cfg).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        write_replicates(&a.results, &mut ca).unwrap();
        write_replicates(&b.results, &mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(summary_json(&cfg, &a.summaries).unwrap(), summary_json(&cfg, &b.summaries).unwrap());
    }

    #[test]
    fn batches_continue_the_replicate_sequence() {
        let cfg = tiny_config();
        let full = run_study(&cfg).unwrap();
        let second = run_study(&StudyConfig { reps: 2, first_replicate: 2, ..cfg.clone() }).unwrap();
        let pick: Vec<_> = full.results.iter().filter(|r| r.replicate >= 2).cloned().collect();
        let strip = |v: &[ReplicateResult]| {
            v.iter().map(|r| ReplicateResult { fit_wall_time: 0.0, ..r.clone() }).collect::<Vec<_>>()
        };
        assert_eq!(strip(&second.results), strip(&pick));
    }

    #[test]
    fn write_study_creates_outputs() {
        let cfg = tiny_config();
        let out = run_study(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_study(&cfg, &out, dir.path()).unwrap();
        let reps = read_replicates(fs::File::open(dir.path().join("replicates.csv")).unwrap()).unwrap();
        assert_eq!(reps.len(), out.results.len());
        let file: SummaryFile = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(file.summaries, out.summaries);
        assert_eq!(file.config.threads, None);
        let timings = fs::read_to_string(dir.path().join("timings.csv")).unwrap();
        assert_eq!(timings.lines().count(), out.results.len() + 1);
    }
}
