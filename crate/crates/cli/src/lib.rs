//! The `shieldup` administrative tool.
//!
//! Exit codes are stable: 0 success, 1 content or input failure, 2
//! configuration failure, 3 analysis failure.

pub mod plot;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use shieldup_core::analysis::{
    analyze_export, render_summary_table, report_json, AnalysisReport, ScoreKind, Timepoint, DEFAULT_FOLLOWUP_THRESHOLD,
};
use shieldup_core::content::{Corpus, CoverageReport};
use shieldup_core::psychometrics::{calibrate, CalibrationReport, PsychometricsError};
use shieldup_core::sdat::{
    assemble_form, parse_item_bank, pilot_matrix, read_responses_csv, write_responses_csv, Form, PilotData,
};
use shieldup_core::simulation::{run_virtual_trial, simulate_pilot, CohortConfig, PilotConfig, SimError, VirtualTrial};
use shieldup_core::trial::{export_csv, export_dataset, parse_jsonl, read_export_csv, TrialConfig};
use shieldup_service::config::DATA_DIR_ENV;
use shieldup_service::store::{CONFIG_FILE, EVENTS_FILE};
use shieldup_service::{system_clock, ServeOptions, Service, ServiceConfig};

pub const EXIT_CONTENT: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_ANALYSIS: u8 = 3;

/// An error together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn content(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_CONTENT, error: error.into() }
    }

    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_CONFIG, error: error.into() }
    }

    pub fn analysis(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_ANALYSIS, error: error.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

#[derive(Debug, Parser)]
#[command(name = "shieldup", version, about = "Administer ShieldUp content, simulations and trial data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a corpus directory and print its coverage report.
    Validate(ValidateArgs),
    /// Run a virtual trial from a cohort configuration.
    Simulate(SimulateArgs),
    /// Simulate a calibration pilot and write its responses.
    Pilot(PilotArgs),
    /// Reliability, 2PL fit, factor analysis and item selection over pilot responses.
    Calibrate(CalibrateArgs),
    /// Turn an event log into the analysis CSV.
    Export(ExportArgs),
    /// ANCOVA of an export on one outcome.
    Analyze(AnalyzeArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub corpus_dir: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("output").required(true).multiple(true))]
pub struct SimulateArgs {
    /// Cohort configuration (JSON); the built-in default trial when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Event log (JSON lines).
    #[arg(long, group = "output")]
    pub out: Option<PathBuf>,
    /// Analysis CSV of the finished trial.
    #[arg(long, group = "output")]
    pub export: Option<PathBuf>,
    /// Data directory the service can be started on.
    #[arg(long, group = "output")]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PilotArgs {
    /// Pilot configuration (JSON); the 23-item candidate pool when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Long-format response CSV.
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of items to keep (half scam, half genuine).
    #[arg(long, default_value_t = 10)]
    pub target: usize,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true))]
pub struct ExportArgs {
    /// Data directory written by `serve` or `simulate`.
    #[arg(long, group = "source")]
    pub data_dir: Option<PathBuf>,
    /// Event log (JSON lines); needs `--trial-config`.
    #[arg(long, group = "source", requires = "trial_config")]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub trial_config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// `scam` or `notscam`.
    #[arg(long, default_value = "scam")]
    pub outcome: String,
    /// `post` or `followup`.
    #[arg(long, default_value = "post")]
    pub phase: String,
    #[arg(long, default_value_t = DEFAULT_FOLLOWUP_THRESHOLD)]
    pub followup_threshold: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Chart of means ± SE by arm and phase (SVG).
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub corpus_dir: PathBuf,
    /// In-memory trial when omitted.
    #[arg(long, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
    /// Service configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate(a) => cmd_validate(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Pilot(a) => cmd_pilot(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Export(a) => cmd_export(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Serve(a) => cmd_serve(&a),
    }
}

fn read(path: &Path, code: u8) -> Result<String, Failure> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).exit_with(code)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display())).exit_with(EXIT_CONTENT)
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = read(path, EXIT_CONFIG)?;
    serde_json::from_str(&text).with_context(|| path.display().to_string()).exit_with(EXIT_CONFIG)
}

/// What `validate` found in a corpus directory.
#[derive(Debug, Clone)]
pub struct Validation {
    /// One `path: class: message` line per problem.
    pub diagnostics: Vec<String>,
    pub coverage: CoverageReport,
    pub scenarios: usize,
}

impl Validation {
    pub fn passed(&self) -> bool {
        self.diagnostics.is_empty() && self.scenarios > 0 && self.coverage.is_clean()
    }
}

pub fn validate_corpus(dir: &Path) -> Result<Validation, Failure> {
    if !dir.is_dir() {
        return Err(Failure::content(anyhow!("corpus directory {} not found", dir.display())));
    }
    let load = Corpus::load_dir(dir).with_context(|| format!("reading {}", dir.display())).exit_with(EXIT_CONTENT)?;
    let mut diagnostics: Vec<String> = load
        .failures
        .iter()
        .map(|f| {
            let class = f.error.as_ref().map_or("duplicate-id", |e| e.class());
            format!("{}: {class}: {}", f.path.display(), f.message)
        })
        .collect();
    if load.corpus.is_empty() {
        diagnostics.push(format!("{}: no scenarios found", dir.join("scenarios").display()));
    }
    let bank = dir.join("sdat").join("items.json");
    if bank.exists() {
        let checked = read(&bank, EXIT_CONTENT).and_then(|text| {
            let items = parse_item_bank(&text).exit_with(EXIT_CONTENT)?;
            assemble_form(&items, Form::A).exit_with(EXIT_CONTENT)?;
            assemble_form(&items, Form::B).exit_with(EXIT_CONTENT)?;
            Ok(())
        });
        if let Err(f) = checked {
            diagnostics.push(format!("{}: sdat: {f}", bank.display()));
        }
    }
    Ok(Validation { diagnostics, coverage: load.corpus.coverage(), scenarios: load.corpus.len() })
}

fn cmd_validate(a: &ValidateArgs) -> Result<(), Failure> {
    let v = validate_corpus(&a.corpus_dir)?;
    for d in &v.diagnostics {
        eprintln!("{d}");
    }
    print!("{}", v.coverage);
    if v.passed() {
        println!("ok");
        return Ok(());
    }
    let mut problems = v.diagnostics.len();
    if !v.coverage.is_clean() {
        problems += 1;
    }
    Err(Failure::content(anyhow!("{} failed validation ({problems} problem(s))", a.corpus_dir.display())))
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::InvalidConfig(_) => Failure::config(e),
        _ => Failure::content(e),
    }
}

pub fn cohort_config(path: Option<&Path>, seed: Option<u64>, n: Option<usize>) -> Result<CohortConfig, Failure> {
    let mut cfg = match path {
        Some(p) => load_json(p)?,
        None => CohortConfig::default_trial(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = n {
        cfg.n = n;
    }
    cfg.validate().map_err(sim_failure)?;
    Ok(cfg)
}

pub fn simulate(cfg: &CohortConfig) -> Result<VirtualTrial, Failure> {
    run_virtual_trial(cfg).map_err(sim_failure)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let cfg = cohort_config(a.config.as_deref(), a.seed, a.n)?;
    let vt = simulate(&cfg)?;
    let trial = &vt.trial;
    if let Some(out) = &a.out {
        write(out, &trial.log().to_jsonl())?;
    }
    if let Some(path) = &a.export {
        write(path, &export_csv(trial.state()))?;
    }
    if let Some(dir) = &a.data_dir {
        if dir.join(EVENTS_FILE).exists() {
            return Err(Failure::config(anyhow!("{} already holds an event log", dir.display())));
        }
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).exit_with(EXIT_CONTENT)?;
        let config = serde_json::to_string_pretty(trial.config()).expect("config serializes") + "\n";
        write(&dir.join(CONFIG_FILE), &config)?;
        write(&dir.join(EVENTS_FILE), &trial.log().to_jsonl())?;
    }
    eprintln!("simulated {} participants (seed {}), {} events", cfg.n, cfg.seed, trial.log().len());
    Ok(())
}

fn cmd_pilot(a: &PilotArgs) -> Result<(), Failure> {
    let mut cfg: PilotConfig = match &a.config {
        Some(p) => load_json(p)?,
        None => PilotConfig::candidate_pool(0),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    let rows = simulate_pilot(&cfg).map_err(sim_failure)?;
    write(&a.out, &write_responses_csv(&rows))?;
    eprintln!("simulated {} respondents on {} items (seed {})", cfg.n, cfg.items.len(), cfg.seed);
    Ok(())
}

pub fn load_pilot(text: &str) -> Result<PilotData, Failure> {
    let rows = read_responses_csv(text).exit_with(EXIT_CONTENT)?;
    pilot_matrix(&rows).exit_with(EXIT_CONTENT)
}

/// Runs the calibration; errors about a single column name the item.
pub fn calibrate_pilot(pilot: &PilotData, target: usize) -> Result<CalibrationReport, Failure> {
    calibrate(pilot, target).map_err(|e| {
        let item = match &e {
            PsychometricsError::DegenerateItem(j) | PsychometricsError::ZeroVariance(j) => pilot.items.get(*j),
            _ => None,
        };
        match item {
            Some(m) => Failure::analysis(anyhow!("item {}: {e}", m.item_id)),
            None => Failure::analysis(e),
        }
    })
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<(), Failure> {
    let pilot = load_pilot(&read(&a.responses, EXIT_CONTENT)?)?;
    let report = calibrate_pilot(&pilot, a.target)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write(&a.out, &json)?;
    eprintln!("{} respondents x {} items, alpha {:.3}", report.respondents, report.items.len(), report.alpha);
    eprintln!("selected: {}", report.selection.selected.join(", "));
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> Result<(), Failure> {
    let (config_path, log_path) = match (&a.data_dir, &a.log, &a.trial_config) {
        (Some(dir), _, _) => (dir.join(CONFIG_FILE), dir.join(EVENTS_FILE)),
        (None, Some(log), Some(cfg)) => (cfg.clone(), log.clone()),
        _ => return Err(Failure::config(anyhow!("give --data-dir, or --log with --trial-config"))),
    };
    let config: TrialConfig = load_json(&config_path)?;
    let parsed = parse_jsonl(&read(&log_path, EXIT_CONTENT)?)
        .with_context(|| log_path.display().to_string())
        .exit_with(EXIT_CONTENT)?;
    if parsed.torn_tail {
        eprintln!("warning: {}: ignoring a partially written last line", log_path.display());
    }
    let csv = export_dataset(config, &parsed.log).exit_with(EXIT_CONTENT)?;
    match &a.out {
        Some(p) => write(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

/// The analysis behind `analyze`, starting from export CSV text.
pub fn analyze_csv(
    text: &str,
    score: ScoreKind,
    timepoint: Timepoint,
    threshold: f64,
) -> Result<AnalysisReport, Failure> {
    let records = read_export_csv(text).exit_with(EXIT_CONTENT)?;
    analyze_export(&records, score, timepoint, threshold).exit_with(EXIT_ANALYSIS)
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<(), Failure> {
    let score = ScoreKind::parse(&a.outcome)
        .ok_or_else(|| Failure::config(anyhow!("unknown outcome `{}` (use scam or notscam)", a.outcome)))?;
    let timepoint = Timepoint::parse(&a.phase)
        .ok_or_else(|| Failure::config(anyhow!("unknown phase `{}` (use post or followup)", a.phase)))?;
    if !(0.0..=1.0).contains(&a.followup_threshold) {
        return Err(Failure::config(anyhow!("--followup-threshold must lie in [0, 1]")));
    }
    let report = analyze_csv(&read(&a.input, EXIT_CONTENT)?, score, timepoint, a.followup_threshold)?;
    let json = report_json(&report);
    match &a.out {
        Some(p) => write(p, &json)?,
        None => print!("{json}"),
    }
    eprint!("{}", render_summary_table(&report));
    if let Some(p) = &a.plot {
        write(p, &plot::means_chart(&report))?;
    }
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> Result<(), Failure> {
    let config = match &a.config {
        Some(p) => ServiceConfig::load(p).with_context(|| p.display().to_string()).exit_with(EXIT_CONFIG)?,
        None => ServiceConfig::default(),
    };
    let opts = ServeOptions { port: a.port, corpus_dir: a.corpus_dir.clone(), data_dir: a.data_dir.clone(), config };
    let (service, generated) = Service::from_options(&opts, system_clock()).exit_with(EXIT_CONFIG)?;
    if let Some(token) = generated {
        println!("researcher token: {token}");
    }
    let rt = tokio::runtime::Runtime::new().context("starting runtime").exit_with(EXIT_CONFIG)?;
    rt.block_on(shieldup_service::run(service, opts.port)).exit_with(EXIT_CONFIG)
}
