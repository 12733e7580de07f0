//! Command-line front end: campaigns, CV comparison on user data, calculators.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 when infeasible
//! campaign scenarios were skipped.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::calc::{
    adjust_unbalanced, effective_d, equivalent_cohens_d, nested_model_confidence,
    recommended_sample_size, required_sample_size, EquivalentDTable, PowerModel,
};
use crate::cv::{check_feasible, run_pipeline, CvMethod, PipelineConfig};
use crate::datagen::{Dataset, DatasetSpec, Label, Matrix};
use crate::error::{Error, Result};
use crate::featsel::SelectionConfig;
use crate::mc::{
    build_equivalent_d_table, run_scenario, McConfig, McSummary, RepRecord, DESK_REPETITIONS,
};
use crate::rng::{digest, Stream};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

/// Environment variable overriding the default output directory.
pub const OUT_DIR_ENV: &str = "CVPOWER_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "cvpower-out";

pub const SUMMARY_FILE: &str = "summary.csv";
pub const REPETITIONS_FILE: &str = "repetitions.jsonl";
pub const COMPARE_ACCURACY_FILE: &str = "compare_accuracy.csv";
pub const COMPARE_SELECTION_FILE: &str = "compare_selection.csv";

/// Header of `summary.csv`.
pub const SUMMARY_HEADER: [&str; 16] = [
    "scenario_id",
    "method",
    "n_per_class",
    "m",
    "l",
    "d_effect",
    "gamma_db",
    "gamma_d",
    "repetitions",
    "master_seed",
    "mean_acc",
    "std_acc",
    "h0_upper",
    "ha_lower",
    "confidence",
    "selection_freq",
];

#[derive(Parser, Debug)]
#[command(
    name = "cvpower",
    version,
    about = "Power analysis for cross-validated feature selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a Monte Carlo scenario grid from a TOML config.
    Campaign(CampaignArgs),
    /// Compare the four CV methods on a CSV dataset.
    CompareCv(CompareArgs),
    /// Required pairs for a significant nested-CV model.
    RequiredN {
        #[arg(long)]
        d: f64,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        l: usize,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Pairs needed to reach a target C22 percentage.
    RecommendedN {
        #[arg(long)]
        d: f64,
        #[arg(long)]
        m: f64,
        /// Target C22 in percent.
        #[arg(long)]
        c: f64,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Interpolated nested-CV C22 in percent.
    Confidence {
        #[arg(long)]
        d: f64,
        #[arg(long)]
        m: f64,
        #[arg(long)]
        n: f64,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Per-class sizes for an unbalanced design.
    AdjustUnbalanced {
        #[arg(long)]
        n: u64,
        #[arg(long = "gamma-db")]
        gamma_db: f64,
    },
    /// Average effect size of two unequal features.
    EffectiveD {
        #[arg(long)]
        d: f64,
        #[arg(long = "gamma-d")]
        gamma_d: f64,
    },
    /// Gaussian-equivalent effect size for an observed accuracy.
    EquivalentD {
        #[arg(long)]
        accuracy: f64,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        table: PathBuf,
    },
    /// Build an equivalent-D lookup table by simulation.
    EquivalentDTable(TableArgs),
    /// Write the default power model as TOML.
    ExportModel {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct CampaignArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Treat infeasible scenarios as a configuration error.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Name of the label column.
    #[arg(long)]
    label: String,
    /// Numbers of selected features, comma separated.
    #[arg(long = "l", value_delimiter = ',', default_values_t = vec![1usize, 2, 3, 4])]
    l_values: Vec<usize>,
    #[arg(long, default_value_t = DESK_REPETITIONS)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct TableArgs {
    #[arg(long, value_delimiter = ',')]
    m: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4])]
    d: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    l: usize,
    #[arg(long, default_value_t = DESK_REPETITIONS)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Runs the CLI with explicit argument list and output streams.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
            } else {
                let _ = write!(out, "{rendered}");
            }
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Campaign(a) => {
            let text = std::fs::read_to_string(&a.config)
                .map_err(|e| Error::Io(format!("{}: {e}", a.config.display())))?;
            let mut campaign = match parse_campaign(&text) {
                Ok(c) => c,
                Err(e) => {
                    writeln!(err, "error: {}: {e}", a.config.display())?;
                    return Ok(EXIT_USAGE);
                }
            };
            if let Some(seed) = a.seed {
                campaign
                    .scenarios
                    .iter_mut()
                    .for_each(|s| s.master_seed = seed);
            }
            if let Some(reps) = a.reps {
                if reps < 2 {
                    writeln!(err, "error: --reps must be at least 2")?;
                    return Ok(EXIT_USAGE);
                }
                campaign
                    .scenarios
                    .iter_mut()
                    .for_each(|s| s.repetitions = reps);
            }
            let out_dir = a
                .out_dir
                .or(campaign.out_dir.clone())
                .unwrap_or_else(default_out_dir);
            let workers = a.workers.or(campaign.workers).unwrap_or(0);
            run_campaign(&campaign, &out_dir, workers, a.strict, out, err)
        }
        Command::CompareCv(a) => {
            let out_dir = a.out_dir.clone().unwrap_or_else(default_out_dir);
            let data = read_user_csv(&a.csv, &a.label)?;
            let report = compare_cv(
                &data,
                &a.l_values,
                a.repeats,
                a.seed,
                &PipelineConfig::default(),
                a.workers.unwrap_or(0),
            )?;
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join(COMPARE_ACCURACY_FILE), report.accuracy_csv())?;
            std::fs::write(out_dir.join(COMPARE_SELECTION_FILE), report.selection_csv())?;
            for row in &report.accuracy {
                writeln!(
                    out,
                    "{:<15} l={:<2} mean_acc={:.4} std_acc={:.4}",
                    row.method.as_str(),
                    row.l,
                    row.mean_acc,
                    row.std_acc
                )?;
            }
            writeln!(out, "wrote {}", out_dir.display())?;
            Ok(EXIT_OK)
        }
        Command::RequiredN { d, m, l, model } => {
            let model = load_model(model.as_deref())?;
            let r = required_sample_size(d, m, l, &model)?;
            for w in &r.warnings {
                writeln!(err, "warning: {w}")?;
            }
            writeln!(
                out,
                "required sample size: {} pairs (formula value {:.3})",
                r.n, r.raw
            )?;
            let line = serde_json::json!({"command": "required-n", "d": d, "m": m, "l": l, "n": r.n, "raw": r.raw});
            writeln!(out, "{line}")?;
            Ok(EXIT_OK)
        }
        Command::RecommendedN { d, m, c, model } => {
            let model = load_model(model.as_deref())?;
            let n = recommended_sample_size(d, m, c, &model)?;
            writeln!(out, "recommended sample size for C22 >= {c}%: {n} pairs")?;
            let line =
                serde_json::json!({"command": "recommended-n", "d": d, "m": m, "c": c, "n": n});
            writeln!(out, "{line}")?;
            Ok(EXIT_OK)
        }
        Command::Confidence { d, m, n, model } => {
            let model = load_model(model.as_deref())?;
            let c = nested_model_confidence(d, m, n, &model)?;
            writeln!(out, "nested 10-fold C22: {}%", fmt_short(c))?;
            let line =
                serde_json::json!({"command": "confidence", "d": d, "m": m, "n": n, "c22": c});
            writeln!(out, "{line}")?;
            Ok(EXIT_OK)
        }
        Command::AdjustUnbalanced { n, gamma_db } => {
            let (small, large) = adjust_unbalanced(n, gamma_db)?;
            writeln!(out, "smaller class: {small}, larger class: {large}")?;
            let line = serde_json::json!({"command": "adjust-unbalanced", "n": n, "gamma_db": gamma_db, "n_small": small, "n_large": large});
            writeln!(out, "{line}")?;
            Ok(EXIT_OK)
        }
        Command::EffectiveD { d, gamma_d } => {
            let e = effective_d(d, gamma_d)?;
            writeln!(out, "effective D: {}", fmt_short(e))?;
            let line = serde_json::json!({"command": "effective-d", "d": d, "gamma_d": gamma_d, "effective_d": e});
            writeln!(out, "{line}")?;
            Ok(EXIT_OK)
        }
        Command::EquivalentD {
            accuracy,
            m,
            n,
            table,
        } => {
            let text = std::fs::read_to_string(&table)?;
            let table = EquivalentDTable::from_toml(&text)?;
            let d = equivalent_cohens_d(accuracy, m, n, &table)?;
            writeln!(out, "equivalent Cohen's D: {}", fmt_short(d))?;
            let line = serde_json::json!({"command": "equivalent-d", "accuracy": accuracy, "m": m, "n": n, "d": d});
            writeln!(out, "{line}")?;
            Ok(EXIT_OK)
        }
        Command::EquivalentDTable(a) => {
            let spec = DatasetSpec::balanced(
                a.n.first().copied().unwrap_or(50),
                a.m.first().copied().unwrap_or(2),
                a.l,
                0.0,
            );
            let base = McConfig::new(spec, CvMethod::NestedKFold)
                .with_repetitions(a.reps)
                .with_seed(a.seed);
            let table = build_equivalent_d_table(&base, &a.m, &a.n, &a.d, a.workers.unwrap_or(0))?;
            std::fs::write(&a.out, table.to_toml())?;
            writeln!(
                out,
                "wrote {} cells to {}",
                table.cells.len(),
                a.out.display()
            )?;
            Ok(EXIT_OK)
        }
        Command::ExportModel { out: path } => {
            PowerModel::default().save(&path)?;
            writeln!(out, "wrote {}", path.display())?;
            Ok(EXIT_OK)
        }
    }
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn load_model(path: Option<&Path>) -> Result<PowerModel> {
    match path {
        Some(p) => PowerModel::load(p),
        None => Ok(PowerModel::default()),
    }
}

/// Up to ten decimals with trailing zeros removed, e.g. `85.6`.
fn fmt_short(v: f64) -> String {
    let s = format!("{v:.10}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Seventeen significant digits.
pub fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

// Campaign configuration.

/// Configuration error anchored to a line of the config file when possible.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCampaign {
    repetitions: Option<Spanned<usize>>,
    alpha: Option<Spanned<f64>>,
    beta: Option<Spanned<f64>>,
    master_seed: Option<u64>,
    out_dir: Option<PathBuf>,
    workers: Option<usize>,
    per_repetition: Option<bool>,
    grid: Spanned<RawGrid>,
    selection: Option<Spanned<RawSelection>>,
    pipeline: Option<Spanned<PipelineConfig>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n: Spanned<Vec<usize>>,
    m: Spanned<Vec<usize>>,
    l: Spanned<Vec<usize>>,
    d: Spanned<Vec<f64>>,
    method: Spanned<Vec<CvMethod>>,
    gamma_db: Option<Spanned<Vec<f64>>>,
    gamma_d: Option<Spanned<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
enum RawSelection {
    /// Defaults to `l` features.
    FixedSize {
        target: Option<usize>,
    },
    AutoStop {
        epsilon: f64,
    },
}

/// A validated scenario grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Campaign {
    pub scenarios: Vec<McConfig>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub per_repetition: bool,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

/// Parses and validates a campaign config. Split feasibility is not checked
/// here; infeasible scenarios are skipped at run time.
pub fn parse_campaign(text: &str) -> std::result::Result<Campaign, ConfigError> {
    let raw: RawCampaign = toml::from_str(text).map_err(|e| ConfigError {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    let at = |span: std::ops::Range<usize>, message: String| ConfigError {
        line: Some(line_of(text, span.start)),
        message,
    };

    let repetitions = match &raw.repetitions {
        Some(r) if *r.get_ref() < 2 => {
            return Err(at(r.span(), "repetitions must be at least 2".into()))
        }
        Some(r) => *r.get_ref(),
        None => DESK_REPETITIONS,
    };
    let mut probs = [0.05, 0.2];
    for (i, (name, v)) in [("alpha", &raw.alpha), ("beta", &raw.beta)]
        .into_iter()
        .enumerate()
    {
        if let Some(v) = v {
            let x = *v.get_ref();
            if !(x > 0.0 && x < 1.0) {
                return Err(at(v.span(), format!("{name} must lie in (0, 1)")));
            }
            probs[i] = x;
        }
    }

    let grid = raw.grid.get_ref();
    let ones = vec![1.0];
    let gamma_db = grid.gamma_db.as_ref().map(|g| g.get_ref()).unwrap_or(&ones);
    let gamma_d = grid.gamma_d.as_ref().map(|g| g.get_ref()).unwrap_or(&ones);
    let mut axes: Vec<(&str, std::ops::Range<usize>, usize)> = vec![
        ("n", grid.n.span(), grid.n.get_ref().len()),
        ("m", grid.m.span(), grid.m.get_ref().len()),
        ("l", grid.l.span(), grid.l.get_ref().len()),
        ("d", grid.d.span(), grid.d.get_ref().len()),
        ("method", grid.method.span(), grid.method.get_ref().len()),
    ];
    if let Some(g) = &grid.gamma_db {
        axes.push(("gamma_db", g.span(), g.get_ref().len()));
    }
    if let Some(g) = &grid.gamma_d {
        axes.push(("gamma_d", g.span(), g.get_ref().len()));
    }
    for (name, span, len) in axes {
        if len == 0 {
            return Err(at(span, format!("grid axis '{name}' is empty")));
        }
    }

    let pipeline = raw
        .pipeline
        .as_ref()
        .map(|p| *p.get_ref())
        .unwrap_or_default();
    let mut scenarios = Vec::new();
    for &method in grid.method.get_ref() {
        for &m in grid.m.get_ref() {
            for &l in grid.l.get_ref() {
                for &d in grid.d.get_ref() {
                    for &gdb in gamma_db {
                        for &gd in gamma_d {
                            for &n in grid.n.get_ref() {
                                let spec = DatasetSpec {
                                    n_per_class: n,
                                    m,
                                    l,
                                    d_effect: d,
                                    gamma_db: gdb,
                                    gamma_d: gd,
                                    seed: 0,
                                };
                                spec.validate().map_err(|e| {
                                    at(
                                        raw.grid.span(),
                                        format!("scenario n={n} m={m} l={l} d={d}: {e}"),
                                    )
                                })?;
                                let sel_cfg = match raw.selection.as_ref().map(|s| s.get_ref()) {
                                    None | Some(RawSelection::FixedSize { target: None }) => {
                                        SelectionConfig::fixed(l)
                                    }
                                    Some(RawSelection::FixedSize { target: Some(t) }) => {
                                        SelectionConfig::fixed(*t)
                                    }
                                    Some(RawSelection::AutoStop { epsilon }) => {
                                        SelectionConfig::AutoStop { epsilon: *epsilon }
                                    }
                                };
                                sel_cfg.validate(m).map_err(|e| {
                                    let span = raw
                                        .selection
                                        .as_ref()
                                        .map(|s| s.span())
                                        .unwrap_or(raw.grid.span());
                                    at(span, format!("scenario m={m}: {e}"))
                                })?;
                                scenarios.push(McConfig {
                                    spec,
                                    method,
                                    sel_cfg,
                                    pipeline,
                                    repetitions,
                                    alpha: probs[0],
                                    beta: probs[1],
                                    master_seed: raw.master_seed.unwrap_or(0),
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(p) = &raw.pipeline {
        let cfg = p.get_ref();
        if cfg.k_folds < 2
            || !(cfg.holdout_train_fraction > 0.0 && cfg.holdout_train_fraction < 1.0)
            || !(cfg.tvt_test_fraction > 0.0 && cfg.tvt_test_fraction < 1.0)
        {
            return Err(at(
                p.span(),
                "pipeline needs k_folds >= 2 and fractions in (0, 1)".into(),
            ));
        }
    }
    Ok(Campaign {
        scenarios,
        out_dir: raw.out_dir,
        workers: raw.workers,
        per_repetition: raw.per_repetition.unwrap_or(true),
    })
}

// Campaign execution and persistence.

/// One row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub method: CvMethod,
    pub n_per_class: usize,
    pub m: usize,
    pub l: usize,
    pub d_effect: f64,
    pub gamma_db: f64,
    pub gamma_d: f64,
    pub repetitions: usize,
    pub master_seed: u64,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub h0_upper: Option<f64>,
    pub ha_lower: Option<f64>,
    /// `C_{l,1};...;C_{l,l}`, empty when not defined.
    pub confidence: String,
    /// Per-feature selection frequencies, `;`-separated.
    pub selection_freq: String,
}

impl SummaryRow {
    pub fn from_summary(cfg: &McConfig, s: &McSummary) -> Self {
        let joined = |v: Vec<f64>| v.into_iter().map(fmt_full).collect::<Vec<_>>().join(";");
        SummaryRow {
            scenario_id: s.scenario_id.clone(),
            method: cfg.method,
            n_per_class: cfg.spec.n_per_class,
            m: cfg.spec.m,
            l: cfg.spec.l,
            d_effect: cfg.spec.d_effect,
            gamma_db: cfg.spec.gamma_db,
            gamma_d: cfg.spec.gamma_d,
            repetitions: cfg.repetitions,
            master_seed: cfg.master_seed,
            mean_acc: s.mean_acc,
            std_acc: s.std_acc,
            h0_upper: s.h0_upper,
            ha_lower: s.ha_lower,
            confidence: joined(s.confidence.values().copied().collect()),
            selection_freq: joined(s.selection_counts.clone()),
        }
    }

    /// `C_{l,d}` values in order of `d`.
    pub fn confidence_values(&self) -> Result<Vec<f64>> {
        split_floats(&self.confidence)
    }

    pub fn selection_values(&self) -> Result<Vec<f64>> {
        split_floats(&self.selection_freq)
    }

    fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(fmt_full).unwrap_or_default();
        vec![
            self.scenario_id.clone(),
            self.method.as_str().to_string(),
            self.n_per_class.to_string(),
            self.m.to_string(),
            self.l.to_string(),
            fmt_full(self.d_effect),
            fmt_full(self.gamma_db),
            fmt_full(self.gamma_d),
            self.repetitions.to_string(),
            self.master_seed.to_string(),
            fmt_full(self.mean_acc),
            fmt_full(self.std_acc),
            opt(self.h0_upper),
            opt(self.ha_lower),
            self.confidence.clone(),
            self.selection_freq.clone(),
        ]
    }
}

fn split_floats(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number '{v}'")))
        })
        .collect()
}

/// One line of `repetitions.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionLine {
    pub scenario_id: String,
    #[serde(flatten)]
    pub record: RepRecord,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record(r.record()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn read_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    if header != SUMMARY_HEADER {
        return Err(Error::Parse("unexpected summary header".into()));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

pub fn read_repetitions_jsonl(text: &str) -> Result<Vec<RepetitionLine>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

fn scenario_label(cfg: &McConfig) -> String {
    format!(
        "{} n={} m={} l={} d={} gamma_db={} gamma_d={}",
        cfg.method,
        cfg.spec.n_per_class,
        cfg.spec.m,
        cfg.spec.l,
        cfg.spec.d_effect,
        cfg.spec.gamma_db,
        cfg.spec.gamma_d
    )
}

/// Runs every feasible scenario and writes the summary (and per-repetition
/// records when enabled) to `out_dir`.
pub fn run_campaign(
    campaign: &Campaign,
    out_dir: &Path,
    workers: usize,
    strict: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    let mut runnable = Vec::new();
    let mut skipped = Vec::new();
    for cfg in &campaign.scenarios {
        match cfg.validate() {
            Ok(()) => runnable.push(cfg),
            Err(Error::InfeasibleSplit(why)) => skipped.push((cfg, why)),
            Err(e) => {
                writeln!(err, "error: {}: {e}", scenario_label(cfg))?;
                return Ok(EXIT_USAGE);
            }
        }
    }
    for (cfg, why) in &skipped {
        writeln!(err, "infeasible: {}: {why}", scenario_label(cfg))?;
    }
    if strict && !skipped.is_empty() {
        writeln!(
            err,
            "error: {} infeasible scenario(s) with --strict",
            skipped.len()
        )?;
        return Ok(EXIT_USAGE);
    }

    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::with_capacity(runnable.len());
    let mut jsonl = String::new();
    let total = runnable.len();
    for (i, cfg) in runnable.into_iter().enumerate() {
        let started = Instant::now();
        let summary = run_scenario(cfg, workers)?;
        let row = SummaryRow::from_summary(cfg, &summary);
        writeln!(
            err,
            "[{}/{}] {}: mean_acc={:.4} ({:.1}s)",
            i + 1,
            total,
            scenario_label(cfg),
            row.mean_acc,
            started.elapsed().as_secs_f64()
        )?;
        if campaign.per_repetition {
            for rec in summary.records {
                let line = RepetitionLine {
                    scenario_id: summary.scenario_id.clone(),
                    record: rec,
                };
                jsonl.push_str(&serde_json::to_string(&line).expect("record serializes"));
                jsonl.push('\n');
            }
        }
        rows.push(row);
    }
    std::fs::write(out_dir.join(SUMMARY_FILE), summary_csv(&rows))?;
    if campaign.per_repetition {
        std::fs::write(out_dir.join(REPETITIONS_FILE), jsonl)?;
    }
    writeln!(
        out,
        "wrote {} scenario(s) to {}",
        rows.len(),
        out_dir.display()
    )?;
    Ok(if skipped.is_empty() {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    })
}

// CV comparison on user data.

/// Numeric features with a binary label.
#[derive(Clone, Debug, PartialEq)]
pub struct UserDataset {
    pub feature_names: Vec<String>,
    pub dataset: Dataset,
    /// Raw label values mapped to negative and positive.
    pub label_values: (String, String),
}

/// Reads a CSV with a header row. All columns other than `label_column` must
/// be numeric. Of the two label values, the larger (numerically when both
/// parse, otherwise lexically) is the positive class.
pub fn read_user_csv(path: &Path, label_column: &str) -> Result<UserDataset> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_user_csv(&text, label_column)
}

pub fn parse_user_csv(text: &str, label_column: &str) -> Result<UserDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(format!("header: {e}")))?
        .iter()
        .map(String::from)
        .collect();
    let matches: Vec<usize> = (0..header.len())
        .filter(|&i| header[i] == label_column)
        .collect();
    let label_idx = match matches.as_slice() {
        [i] => *i,
        [] => return Err(Error::Parse(format!("no column named '{label_column}'"))),
        _ => {
            return Err(Error::Parse(format!(
                "column '{label_column}' appears more than once"
            )))
        }
    };
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&i| i != label_idx).collect();
    if feature_cols.is_empty() {
        return Err(Error::Parse("no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        for &c in &feature_cols {
            let cell = record.get(c).unwrap_or("");
            if cell.is_empty() {
                return Err(Error::Parse(format!(
                    "line {line}, column '{}': missing value",
                    header[c]
                )));
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Parse(format!(
                    "line {line}, column '{}': '{cell}' is not a number",
                    header[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Parse(format!(
                    "line {line}, column '{}': non-finite value",
                    header[c]
                )));
            }
            values.push(v);
        }
        let label = record.get(label_idx).unwrap_or("");
        if label.is_empty() {
            return Err(Error::Parse(format!(
                "line {line}, column '{label_column}': missing label"
            )));
        }
        raw_labels.push(label.to_string());
    }

    let mut distinct: Vec<String> = raw_labels.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.len() != 2 {
        return Err(Error::Parse(format!(
            "label column '{label_column}' must have exactly two values, found {}",
            distinct.len()
        )));
    }
    if let (Ok(a), Ok(b)) = (distinct[0].parse::<f64>(), distinct[1].parse::<f64>()) {
        if a > b {
            distinct.swap(0, 1);
        }
    }
    let labels: Vec<Label> = raw_labels
        .iter()
        .map(|v| {
            if *v == distinct[1] {
                Label::Positive
            } else {
                Label::Negative
            }
        })
        .collect();
    let dataset = Dataset::new(
        Matrix::new(labels.len(), feature_cols.len(), values)?,
        labels,
    )?;
    let (neg, pos) = dataset.class_counts();
    if neg < 2 || pos < 2 {
        return Err(Error::InvalidInput(
            "each class needs at least two samples".into(),
        ));
    }
    Ok(UserDataset {
        feature_names: feature_cols.iter().map(|&c| header[c].clone()).collect(),
        dataset,
        label_values: (distinct[0].clone(), distinct[1].clone()),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareAccuracy {
    pub method: CvMethod,
    pub l: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
}

/// Probability that `feature` was chosen at selection `step` (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionProbability {
    pub method: CvMethod,
    pub l: usize,
    pub step: usize,
    pub feature: String,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub repeats: usize,
    pub accuracy: Vec<CompareAccuracy>,
    pub selection: Vec<SelectionProbability>,
}

impl CompareReport {
    pub fn accuracy_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "l", "repeats", "mean_acc", "std_acc"])
            .expect("write");
        for a in &self.accuracy {
            w.write_record([
                a.method.as_str().to_string(),
                a.l.to_string(),
                self.repeats.to_string(),
                fmt_full(a.mean_acc),
                fmt_full(a.std_acc),
            ])
            .expect("write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn selection_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "l", "step", "feature", "probability"])
            .expect("write");
        for s in &self.selection {
            w.write_record([
                s.method.as_str().to_string(),
                s.l.to_string(),
                s.step.to_string(),
                s.feature.clone(),
                fmt_full(s.probability),
            ])
            .expect("write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

fn balanced_subset(ds: &Dataset, stream: &mut Stream) -> Dataset {
    use rand::seq::index::sample;
    let neg = ds.class_indices(Label::Negative);
    let pos = ds.class_indices(Label::Positive);
    let c = neg.len().min(pos.len());
    let pick = |rows: &[usize], stream: &mut Stream| -> Vec<usize> {
        if rows.len() == c {
            return rows.to_vec();
        }
        let mut chosen: Vec<usize> = sample(stream, rows.len(), c)
            .into_iter()
            .map(|i| rows[i])
            .collect();
        chosen.sort_unstable();
        chosen
    };
    let mut rows = pick(&neg, stream);
    rows.extend(pick(&pos, stream));
    rows.sort_unstable();
    ds.select_rows(&rows)
}

/// Repeats every method on a freshly class-balanced subsample of `data` and
/// reports accuracy and per-step selection probabilities.
pub fn compare_cv(
    data: &UserDataset,
    l_values: &[usize],
    repeats: usize,
    seed: u64,
    cfg: &PipelineConfig,
    workers: usize,
) -> Result<CompareReport> {
    let m = data.dataset.n_features();
    if repeats < 2 {
        return Err(Error::InvalidInput("repeats must be at least 2".into()));
    }
    if l_values.is_empty() {
        return Err(Error::InvalidInput("no l values given".into()));
    }
    for &l in l_values {
        SelectionConfig::fixed(l).validate(m)?;
    }
    let (neg, pos) = data.dataset.class_counts();
    let c = neg.min(pos);
    for method in CvMethod::ALL {
        check_feasible(c, c, method, cfg)?;
    }

    let key = digest(&format!("compare-cv {m} {neg} {pos}"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    type RepOut = Vec<(f64, Vec<usize>)>;
    let runs: Vec<Result<RepOut>> = pool.install(|| {
        (0..repeats)
            .into_par_iter()
            .map(|rep| -> Result<RepOut> {
                let stream = Stream::for_repetition(seed, &key, rep as u64);
                let ds = balanced_subset(&data.dataset, &mut stream.derive(0));
                let mut out = Vec::new();
                for (mi, method) in CvMethod::ALL.into_iter().enumerate() {
                    for &l in l_values {
                        let mut s = stream.derive(1).derive(mi as u64).derive(l as u64);
                        let r = run_pipeline(&ds, method, &SelectionConfig::fixed(l), cfg, &mut s)?;
                        out.push((r.estimate.mean_acc, r.selected));
                    }
                }
                Ok(out)
            })
            .collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let mut accuracy = Vec::new();
    let mut selection = Vec::new();
    let mut slot = 0;
    for method in CvMethod::ALL {
        for &l in l_values {
            let accs: Vec<f64> = runs.iter().map(|r| r[slot].0).collect();
            let (mean_acc, std_acc) = crate::cv::mean_std(&accs);
            accuracy.push(CompareAccuracy {
                method,
                l,
                mean_acc,
                std_acc,
            });
            for step in 0..l {
                let mut counts = vec![0usize; m];
                for r in &runs {
                    counts[r[slot].1[step]] += 1;
                }
                for (f, &count) in counts.iter().enumerate() {
                    selection.push(SelectionProbability {
                        method,
                        l,
                        step: step + 1,
                        feature: data.feature_names[f].clone(),
                        probability: count as f64 / repeats as f64,
                    });
                }
            }
            slot += 1;
        }
    }
    Ok(CompareReport {
        repeats,
        accuracy,
        selection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONFIG: &str = r#"
repetitions = 3
master_seed = 7

[grid]
n = [20, 30]
m = [4]
l = [2]
d = [0.0, 0.8]
method = ["kfold", "single_holdout"]
"#;

    #[test]
    fn parses_grid() {
        let c = parse_campaign(CONFIG).unwrap();
        assert_eq!(c.scenarios.len(), 8);
        assert!(c
            .scenarios
            .iter()
            .all(|s| s.repetitions == 3 && s.master_seed == 7));
        assert_eq!(c.scenarios[0].method, CvMethod::KFold);
        assert_eq!(c.scenarios[0].spec.n_per_class, 20);
        assert_eq!(c.scenarios[1].spec.n_per_class, 30);
    }

    #[test]
    fn empty_axis_is_line_anchored() {
        let text = CONFIG.replace("n = [20, 30]", "n = []");
        let e = parse_campaign(&text).unwrap_err();
        assert_eq!(e.line, Some(6));
        assert!(e.message.contains("'n'"));
    }

    #[test]
    fn syntax_and_semantic_errors_have_lines() {
        let e = parse_campaign(
            "repetitions = 1\n[grid]\nn=[1]\nm=[1]\nl=[0]\nd=[0.0]\nmethod=[\"kfold\"]\n",
        )
        .unwrap_err();
        assert_eq!(e.line, Some(1));
        let e =
            parse_campaign("[grid]\nn = [20]\nm = [4]\nl = [2]\nd = [0.5]\nmethod = [\"bogus\"]\n")
                .unwrap_err();
        assert_eq!(e.line, Some(6));
        let e = parse_campaign(&CONFIG.replace("l = [2]", "l = [5]")).unwrap_err();
        assert!(e.line.is_some() && e.message.contains("l=5"));
    }

    #[test]
    fn summary_round_trip() {
        let row = SummaryRow {
            scenario_id: "abc".into(),
            method: CvMethod::NestedKFold,
            n_per_class: 50,
            m: 20,
            l: 2,
            d_effect: 0.6,
            gamma_db: 1.0,
            gamma_d: 1.0,
            repetitions: 10,
            master_seed: 1,
            mean_acc: 0.1 + 0.2,
            std_acc: 1.0 / 3.0,
            h0_upper: None,
            ha_lower: Some(0.612345678901234567),
            confidence: [0.9, 0.7].map(fmt_full).join(";"),
            selection_freq: String::new(),
        };
        let text = summary_csv(std::slice::from_ref(&row));
        assert!(text.starts_with(&SUMMARY_HEADER.join(",")));
        let back = read_summary_csv(&text).unwrap();
        assert_eq!(back, vec![row.clone()]);
        assert_eq!(back[0].confidence_values().unwrap(), vec![0.9, 0.7]);
    }

    #[test]
    fn user_csv_parsing() {
        let text = "x,group,y\n1.0,b,2\n2.0,a,3\n3.0,b,1\n4.0,a,0\n";
        let u = parse_user_csv(text, "group").unwrap();
        assert_eq!(u.feature_names, vec!["x", "y"]);
        assert_eq!(u.label_values, ("a".to_string(), "b".to_string()));
        assert_eq!(u.dataset.labels()[0], Label::Positive);

        let numeric = "f,label\n1,10\n2,9\n3,10\n4,9\n";
        let u = parse_user_csv(numeric, "label").unwrap();
        assert_eq!(u.label_values, ("9".to_string(), "10".to_string()));

        let missing = "x,group\n1.0,a\n,b\n";
        let e = parse_user_csv(missing, "group").unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("'x'"), "{e}");
        let bad = "x,group\n1.0,a\nfoo,b\n";
        assert!(parse_user_csv(bad, "group")
            .unwrap_err()
            .to_string()
            .contains("'foo'"));
        assert!(parse_user_csv(text, "nope").is_err());
    }
}
