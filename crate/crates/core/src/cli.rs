//! Command-line front end: `evaluate`, `simulate` and `compare`.
//!
//! Every command computes its results in memory and then writes an artifact
//! directory; a failure while writing removes what was written. Exit codes:
//! 0 on success, 1 on runtime failure, 2 on invalid input or configuration.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{diagnostic_histograms, DiagnosticHistograms, DEFAULT_HISTOGRAM_BINS};
use crate::error::{Error, Result};
use crate::metrics::{self, CalibrationReport, MetricKind, DEFAULT_BINS};
use crate::output::OutputDir;
use crate::predstore::{load_predictions, Domain, Format, PredictionSet, DEFAULT_THRESHOLD};
use crate::referral::{referral_curves_with, RateGrid, ReferralCurve, ReferralKind, ReferralPolicy, DEFAULT_GRID_MAX};
use crate::simlab::{run_shift_experiment, welch_t_test, ExperimentConfig, SyntheticSpec, TrainerKind};
use crate::uncertainty::{uncertainty_vector, UncertaintyMode};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "REFERGATE_THREADS";
/// Seeds used by `compare` when none are given.
pub const DEFAULT_SEEDS: [u64; 6] = [0, 1, 2, 3, 4, 5];
/// Significance level for flagged differences.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Parser)]
#[command(name = "refergate", version, about = "Referral curves, calibration and synthetic shift experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArgs,
}

#[derive(Debug, Subcommand)]
pub enum CommandArgs {
    /// Referral curves, AURC table, calibration and histograms for a prediction file.
    Evaluate(CommonArgs),
    /// Train on the synthetic shift task and write the experiment bundle.
    Simulate(CommonArgs),
    /// Welch t-test between two sets of per-seed AURC values.
    Compare(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PolicySelection {
    Standard,
    Split,
    Both,
}

impl PolicySelection {
    pub fn kinds(self) -> Vec<ReferralKind> {
        match self {
            Self::Standard => vec![ReferralKind::Standard],
            Self::Split => vec![ReferralKind::Split],
            Self::Both => vec![ReferralKind::Standard, ReferralKind::Split],
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Prediction file (evaluate) or per-seed AURC table (compare, twice).
    #[arg(long)]
    pub input: Vec<PathBuf>,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long, value_enum, default_value_t = PolicySelection::Both)]
    pub policy: PolicySelection,
    #[arg(long, default_value = "aleatoric")]
    pub uncertainty_mode: String,
    /// Comma-separated: auroc, acc, bacc, ap, f1.
    #[arg(long, default_value = "auroc,acc")]
    pub metrics: String,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_MAX)]
    pub grid_max: u32,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// plain, dan or iw; compare takes two.
    #[arg(long)]
    pub trainer: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated seeds for compare.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Evaluate,
    Simulate,
    Compare,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub inputs: Vec<PathBuf>,
    pub format: Option<Format>,
    pub policy: PolicySelection,
    pub uncertainty_mode: UncertaintyMode,
    pub metrics: Vec<MetricKind>,
    pub bins: usize,
    pub grid_max: u32,
    pub threshold: f64,
    pub trainers: Vec<TrainerKind>,
    pub seed: u64,
    pub seeds: Vec<u64>,
    /// Not serialised, so outputs do not depend on where they are written.
    #[serde(skip)]
    pub out: PathBuf,
}

impl RunConfig {
    pub fn new(command: Command, out: impl Into<PathBuf>) -> Self {
        Self {
            command,
            inputs: Vec::new(),
            format: None,
            policy: PolicySelection::Both,
            uncertainty_mode: UncertaintyMode::Aleatoric,
            metrics: vec![MetricKind::Auroc, MetricKind::Acc],
            bins: DEFAULT_BINS,
            grid_max: DEFAULT_GRID_MAX,
            threshold: DEFAULT_THRESHOLD,
            trainers: Vec::new(),
            seed: 0,
            seeds: DEFAULT_SEEDS.to_vec(),
            out: out.into(),
        }
    }

    pub fn from_args(command: Command, a: &CommonArgs) -> Result<Self> {
        let metrics = parse_list(&a.metrics, |s| s.parse::<MetricKind>())?;
        if metrics.is_empty() {
            return Err(Error::Config("--metrics needs at least one metric".into()));
        }
        let seeds = match &a.seeds {
            Some(s) => parse_list(s, |v| v.parse::<u64>().map_err(|_| Error::Config(format!("bad seed {v:?}"))))?,
            None => DEFAULT_SEEDS.to_vec(),
        };
        let cfg = Self {
            command,
            inputs: a.input.clone(),
            format: a.format.as_deref().map(str::parse).transpose()?,
            policy: a.policy,
            uncertainty_mode: a.uncertainty_mode.parse()?,
            metrics,
            bins: a.bins,
            grid_max: a.grid_max,
            threshold: a.threshold,
            trainers: a.trainer.iter().map(|t| t.parse()).collect::<Result<_>>()?,
            seed: a.seed,
            seeds,
            out: a.out.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::Config("--bins must be positive".into()));
        }
        if self.grid_max >= 100 {
            return Err(Error::Config("--grid-max must be below 100".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("--threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn grid(&self) -> Result<RateGrid> {
        RateGrid::percentiles(self.grid_max)
    }

    fn policy_for(&self, kind: ReferralKind) -> ReferralPolicy {
        ReferralPolicy {
            kind,
            uncertainty_mode: self.uncertainty_mode,
            threshold: self.threshold,
        }
    }
}

fn parse_list<T>(s: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(f).collect()
}

fn infer_format(path: &Path, given: Option<Format>) -> Format {
    given.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Format::Json,
        _ => Format::Csv,
    })
}

/// One row of an AURC table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurcRow {
    /// `all`, `ID` or `OOD`.
    pub scope: String,
    pub policy: ReferralKind,
    pub metric: MetricKind,
    /// `None` when the metric is undefined on that scope without referral.
    pub aurc: Option<f64>,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub ece: f64,
    pub bins: usize,
    pub reduced_bins: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateSummary {
    pub version: String,
    pub config: RunConfig,
    pub n_records: usize,
    pub mc_samples: Option<usize>,
    pub aurc: Vec<AurcRow>,
    pub calibration: CalibrationSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateHistograms {
    pub all: DiagnosticHistograms,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<DiagnosticHistograms>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ood: Option<DiagnosticHistograms>,
}

/// In-memory result of `evaluate`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateReport {
    pub curves: Vec<ReferralCurve>,
    pub calibration: CalibrationReport,
    pub histograms: EvaluateHistograms,
    pub summary: EvaluateSummary,
}

impl EvaluateReport {
    /// `curve_{metric}.csv` for Standard, `curve_split_{metric}.csv` for Split.
    pub fn curve_file_name(curve: &ReferralCurve) -> String {
        match curve.policy.kind {
            ReferralKind::Standard => format!("curve_{}.csv", curve.metric),
            ReferralKind::Split => format!("curve_split_{}.csv", curve.metric),
        }
    }

    pub fn human_summary(&self) -> String {
        let mut s = format!(
            "records: {}\nece ({} bins): {:.6}\n\nscope  policy    metric  aurc\n",
            self.summary.n_records, self.summary.calibration.bins, self.summary.calibration.ece
        );
        for r in &self.summary.aurc {
            let v = r.aurc.map_or("undefined".to_string(), |a| format!("{a:.6}"));
            s.push_str(&format!("{:<6} {:<9} {:<7} {}\n", r.scope, r.policy.as_str(), r.metric, v));
        }
        s
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        OutputDir::write_all(dir, |out| {
            for c in &self.curves {
                out.write_with(&Self::curve_file_name(c), |w| c.write_csv(w))?;
            }
            out.write_with("aurc.csv", |w| write_aurc_table(w, &self.summary.aurc))?;
            out.write_json("calibration.json", &self.calibration)?;
            out.write_json("histograms.json", &self.histograms)?;
            out.write_json("summary.json", &self.summary)?;
            out.write_with("summary.txt", |w| Ok(w.write_all(self.human_summary().as_bytes())?))
        })
    }
}

fn write_aurc_table(w: &mut dyn Write, rows: &[AurcRow]) -> Result<()> {
    let mut csv = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    csv.write_record(["scope", "policy", "metric", "aurc", "skipped"])?;
    for r in rows {
        csv.write_record([
            r.scope.clone(),
            r.policy.as_str().to_string(),
            r.metric.to_string(),
            r.aurc.map(|a| a.to_string()).unwrap_or_default(),
            r.skipped.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Computes every `evaluate` artifact for `set`.
pub fn evaluate_set(set: &PredictionSet, config: &RunConfig) -> Result<EvaluateReport> {
    let grid = config.grid()?;
    let u = uncertainty_vector(set, config.uncertainty_mode)?;
    let mut curves = Vec::new();
    let mut aurc = Vec::new();
    for kind in config.policy.kinds() {
        let policy = config.policy_for(kind);
        for c in referral_curves_with(set, &u, &policy, &config.metrics, &grid)? {
            aurc.push(AurcRow {
                scope: "all".into(),
                policy: kind,
                metric: c.metric,
                aurc: Some(c.aurc),
                skipped: c.skipped,
            });
            curves.push(c);
        }
    }

    let mut domain_hist = BTreeMap::new();
    let has_both_domains = set.filter_domain(Domain::InDomain).is_some() && set.filter_domain(Domain::OutOfDomain).is_some();
    if has_both_domains {
        for domain in [Domain::InDomain, Domain::OutOfDomain] {
            let part = set.filter_domain(domain).expect("checked above");
            let pu = uncertainty_vector(&part, config.uncertainty_mode)?;
            for kind in config.policy.kinds() {
                let policy = config.policy_for(kind);
                for &metric in &config.metrics {
                    let row = match referral_curves_with(&part, &pu, &policy, &[metric], &grid) {
                        Ok(mut c) => {
                            let c = c.remove(0);
                            (Some(c.aurc), c.skipped)
                        }
                        Err(Error::Curve(_)) => (None, grid.len()),
                        Err(e) => return Err(e),
                    };
                    aurc.push(AurcRow {
                        scope: domain.as_str().into(),
                        policy: kind,
                        metric,
                        aurc: row.0,
                        skipped: row.1,
                    });
                }
            }
            domain_hist.insert(domain.as_str(), diagnostic_histograms(&part, config.uncertainty_mode, DEFAULT_HISTOGRAM_BINS)?);
        }
    }

    let calibration = metrics::calibration(&set.scores(), &set.labels(), config.bins)?;
    let histograms = EvaluateHistograms {
        all: diagnostic_histograms(set, config.uncertainty_mode, DEFAULT_HISTOGRAM_BINS)?,
        id: domain_hist.remove(Domain::InDomain.as_str()),
        ood: domain_hist.remove(Domain::OutOfDomain.as_str()),
    };
    let summary = EvaluateSummary {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        n_records: set.len(),
        mc_samples: set.mc_count(),
        aurc,
        calibration: CalibrationSummary {
            ece: calibration.ece,
            bins: calibration.bins(),
            reduced_bins: calibration.reduced_bins,
        },
    };
    Ok(EvaluateReport {
        curves,
        calibration,
        histograms,
        summary,
    })
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<EvaluateReport> {
    let [input] = config.inputs.as_slice() else {
        return Err(Error::Config("evaluate takes exactly one --input".into()));
    };
    if !input.is_file() {
        return Err(Error::Input(format!("{}: no such file", input.display())));
    }
    let set = load_predictions(input, infer_format(input, config.format))?;
    let report = evaluate_set(&set, config)?;
    report.write_dir(&config.out)?;
    Ok(report)
}

fn experiment_config(config: &RunConfig, trainer: TrainerKind) -> ExperimentConfig {
    ExperimentConfig {
        policies: config.policy.kinds(),
        uncertainty_mode: config.uncertainty_mode,
        metrics: config.metrics.clone(),
        bins: config.bins,
        grid_max: config.grid_max,
        threshold: config.threshold,
        ..ExperimentConfig::new(trainer)
    }
}

pub fn cmd_simulate(config: &RunConfig) -> Result<crate::simlab::ExperimentBundle> {
    let trainer = match config.trainers.as_slice() {
        [] => TrainerKind::Plain,
        [t] => *t,
        _ => return Err(Error::Config("simulate takes at most one --trainer".into())),
    };
    let bundle = run_shift_experiment(&SyntheticSpec::with_seed(config.seed), &experiment_config(config, trainer))?;
    bundle.write_dir(&config.out)?;
    Ok(bundle)
}

/// Per-seed AURC values for one side of a comparison, keyed by quantity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AurcTable {
    pub label: String,
    pub values: BTreeMap<String, Vec<(u64, f64)>>,
}

impl AurcTable {
    /// Reads CSV with header `seed,metric,aurc`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Input(format!("{}: no such file", path.display())));
        }
        let mut rdr = csv::Reader::from_path(path)?;
        if rdr.headers()?.iter().collect::<Vec<_>>() != ["seed", "metric", "aurc"] {
            return Err(Error::Schema(format!("{}: header must be seed,metric,aurc", path.display())));
        }
        let mut t = Self {
            label: path.file_stem().and_then(|s| s.to_str()).unwrap_or("input").to_string(),
            ..Self::default()
        };
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let bad = |m: &str| Error::Parse { row: i + 1, message: m.to_string() };
            let seed = row[0].parse().map_err(|_| bad("seed must be an integer"))?;
            let aurc: f64 = row[2].parse().map_err(|_| bad("aurc must be a number"))?;
            if !aurc.is_finite() {
                return Err(bad("aurc must be finite"));
            }
            t.values.entry(row[1].to_string()).or_default().push((seed, aurc));
        }
        Ok(t)
    }

    pub fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        let mut csv = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        csv.write_record(["seed", "metric", "aurc"])?;
        for (key, vals) in &self.values {
            for (seed, v) in vals {
                csv.write_record([seed.to_string(), key.clone(), v.to_string()])?;
            }
        }
        csv.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: f64,
    pub p: f64,
    pub df: f64,
    pub significant: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub version: String,
    pub config: RunConfig,
    pub a: String,
    pub b: String,
    pub alpha: f64,
    pub results: Vec<ComparisonRow>,
}

/// Welch tests key by key; both tables must cover the same keys.
pub fn compare_tables(a: &AurcTable, b: &AurcTable, config: &RunConfig) -> Result<ComparisonReport> {
    if a.values.keys().ne(b.values.keys()) {
        return Err(Error::Config(format!(
            "metric sets differ: {:?} vs {:?}",
            a.values.keys().collect::<Vec<_>>(),
            b.values.keys().collect::<Vec<_>>()
        )));
    }
    let mut results = Vec::new();
    for (key, va) in &a.values {
        let xa: Vec<f64> = va.iter().map(|v| v.1).collect();
        let xb: Vec<f64> = b.values[key].iter().map(|v| v.1).collect();
        if xa.len() < 2 || xb.len() < 2 {
            return Err(Error::Input(format!(
                "{key}: need at least 2 seeds per side, got {} and {}",
                xa.len(),
                xb.len()
            )));
        }
        let w = welch_t_test(&xa, &xb)?;
        results.push(ComparisonRow {
            metric: key.clone(),
            n_a: xa.len(),
            n_b: xb.len(),
            mean_a: w.mean_a,
            mean_b: w.mean_b,
            t: w.t,
            p: w.p,
            df: w.df,
            significant: w.significant(ALPHA),
            degenerate: w.degenerate,
        });
    }
    Ok(ComparisonReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        a: a.label.clone(),
        b: b.label.clone(),
        alpha: ALPHA,
        results,
    })
}

/// Runs `trainer` on every seed (in parallel) and tabulates AURCs keyed as
/// `{id|ood}_{policy}_{metric}`.
pub fn simulate_table(config: &RunConfig, trainer: TrainerKind) -> Result<AurcTable> {
    let exp = experiment_config(config, trainer);
    let summaries = config
        .seeds
        .par_iter()
        .map(|&seed| run_shift_experiment(&SyntheticSpec::with_seed(seed), &exp).map(|b| (seed, b.summary)))
        .collect::<Result<Vec<_>>>()?;
    let mut t = AurcTable {
        label: trainer.as_str().to_string(),
        ..AurcTable::default()
    };
    for (seed, s) in summaries {
        for e in &s.aurc {
            let key = format!("{}_{}_{}", e.domain.as_str().to_lowercase(), e.policy.as_str(), e.metric);
            t.values.entry(key).or_default().push((seed, e.aurc));
        }
    }
    Ok(t)
}

pub fn cmd_compare(config: &RunConfig) -> Result<ComparisonReport> {
    let (a, b) = match (config.inputs.as_slice(), config.trainers.as_slice()) {
        ([pa, pb], []) => (AurcTable::read_csv(pa)?, AurcTable::read_csv(pb)?),
        ([], [ta, tb]) => {
            if config.seeds.len() < 2 {
                return Err(Error::Input("compare needs at least 2 seeds".into()));
            }
            (simulate_table(config, *ta)?, simulate_table(config, *tb)?)
        }
        _ => {
            return Err(Error::Config(
                "compare takes either two --input tables or two --trainer names".into(),
            ))
        }
    };
    let report = compare_tables(&a, &b, config)?;
    let generated = config.inputs.is_empty();
    OutputDir::write_all(&config.out, |out| {
        if generated {
            out.write_with(&format!("aurc_{}.csv", a.label), |w| a.write_csv(w))?;
            out.write_with(&format!("aurc_{}.csv", b.label), |w| b.write_csv(w))?;
        }
        out.write_json("comparison.json", &report)
    })?;
    Ok(report)
}

/// Exit status for a command result.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_input_error() => 2,
        Err(_) => 1,
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<()> {
    let pool = thread_pool()?;
    pool.install(|| match &cli.command {
        CommandArgs::Evaluate(a) => {
            let report = cmd_evaluate(&RunConfig::from_args(Command::Evaluate, a)?)?;
            print!("{}", report.human_summary());
            Ok(())
        }
        CommandArgs::Simulate(a) => {
            let b = cmd_simulate(&RunConfig::from_args(Command::Simulate, a)?)?;
            let s = &b.summary;
            println!(
                "trainer {} seed {}: accuracy ID {:.4} OOD {:.4}, |w2|/|w1| = {:.4}",
                s.trainer, s.seed, s.accuracy_id, s.accuracy_ood, s.feature2_suppression_ratio
            );
            Ok(())
        }
        CommandArgs::Compare(a) => {
            let r = cmd_compare(&RunConfig::from_args(Command::Compare, a)?)?;
            for row in &r.results {
                let mark = if row.significant { " *" } else { "" };
                println!(
                    "{:<22} {:.4} vs {:.4}  t = {:.3}  p = {:.3e}{mark}",
                    row.metric, row.mean_a, row.mean_b, row.t, row.p
                );
            }
            Ok(())
        }
    })
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = dispatch(cli);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}
