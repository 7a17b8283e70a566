//! Configuration-driven experiment runner behind the `monopole-orbits` binary.
//!
//! Every command reads one JSON configuration, runs one experiment, and writes
//! `report.json` plus data tables (CSV and/or JSON) and optional SVG plots into the
//! output directory. Exit status: 0 when every check passes, 1 when a check fails,
//! 2 for configuration errors and 3 for numerical or I/O failures.

mod commands;
pub mod config;
pub mod svg;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

pub use config::{parse_config, ConfigIssue, OutputFormat, RunConfig};

use crate::dynamics::DynamicsError;
use crate::geometry::GeometryError;
use crate::invariants::InvariantsError;
use crate::model::ModelError;
use crate::quantum::QuantumError;
use crate::stereo::StereoError;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration ({} problem(s))", .0.len())]
    Config(Vec<ConfigIssue>),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Invariants(#[from] InvariantsError),
    #[error(transparent)]
    Stereo(#[from] StereoError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Read { .. } => EXIT_CONFIG,
            _ => EXIT_NUMERICAL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Integrate one orbit and write the time series
    Simulate,
    /// Measure the first-return time against the closed form
    Period,
    /// Check the Poisson algebra and the Casimir identity at random points
    AlgebraCheck,
    /// Compare the fitted orbit circle with the prediction from the constants
    Geometry,
    /// Scan the excursion determinant over the orbit radius
    Stability,
    /// Fit the velocity ellipse of one orbit
    Hodograph,
    /// Project an orbit onto the sphere and check the conformal metric
    Stereo,
    /// Integrate the planar magnetic flux
    Flux,
    /// Ramp the monopole strength and track the orbit centers
    SweepQ,
    /// Check the analytic zero modes of the uncharged radial problem
    QuantumZeroMode,
    /// Count normalizable zero modes in a monopole background
    QuantumCount,
    /// Lowest eigenvalues per angular sector
    QuantumSpectrum,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Period => "period",
            Self::AlgebraCheck => "algebra-check",
            Self::Geometry => "geometry",
            Self::Stability => "stability",
            Self::Hodograph => "hodograph",
            Self::Stereo => "stereo",
            Self::Flux => "flux",
            Self::SweepQ => "sweep-q",
            Self::QuantumZeroMode => "quantum-zero-mode",
            Self::QuantumCount => "quantum-count",
            Self::QuantumSpectrum => "quantum-spectrum",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "monopole-orbits", version, about = "Orbits of a charged particle around a smeared magnetic monopole")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration; without it alpha = 2, r_cal = 1, q = 0 and all defaults apply
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`)
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Random seed (overrides `seed`)
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Data table format (overrides `formats`)
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
    /// Write SVG plots
    #[arg(long, global = true, overrides_with = "no_plot")]
    pub plot: bool,
    /// Skip SVG plots
    #[arg(long, global = true, overrides_with = "plot")]
    pub no_plot: bool,
}

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// `<=`, `>=` or `holds`.
    pub relation: &'static str,
    pub passed: bool,
}

impl Check {
    /// Passes when `value <= threshold`; NaN fails.
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, relation: "<=", passed: value <= threshold }
    }

    /// Passes when `value >= threshold`; NaN fails.
    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, relation: ">=", passed: value >= threshold }
    }

    /// Boolean condition reported as value 0 (holds) or 1 (violated).
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self { name: name.into(), value: if ok { 0.0 } else { 1.0 }, threshold: 0.0, relation: "holds", passed: ok }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        if self.relation == "holds" {
            write!(f, "{tag}  {}", self.name)
        } else {
            write!(f, "{tag}  {}  ({:.3e} {} {:.3e})", self.name, self.value, self.relation, self.threshold)
        }
    }
}

/// Table cell: number, integer, text or flag.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
    B(bool),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::F(v) => write!(f, "{v:e}"),
            Self::I(v) => write!(f, "{v}"),
            Self::S(v) => write!(f, "{v}"),
            Self::B(v) => write!(f, "{v}"),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Self::F(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Self::I(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Self::B(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Self::S(v.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    /// File stem, e.g. `trajectory`.
    #[serde(skip)]
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::to_string)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: Command,
    pub config: RunConfig,
    pub checks: Vec<Check>,
    /// Command-specific measured quantities.
    pub results: Value,
    pub artifacts: Vec<String>,
    pub passed: bool,
}

/// Everything a command produced, before anything touches the file system.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub tables: Vec<Table>,
    pub plots: Vec<(String, String)>,
}

/// Runs one command against a validated configuration.
pub fn run(config: &RunConfig, command: Command) -> Result<RunOutput, CliError> {
    let mut out = commands::dispatch(config, command)?;
    let mut artifacts = vec!["report.json".to_string()];
    for t in &out.tables {
        if config.formats.csv() {
            artifacts.push(format!("{}.csv", t.name));
        }
        if config.formats.json() {
            artifacts.push(format!("{}.json", t.name));
        }
    }
    if config.plot {
        artifacts.extend(out.plots.iter().map(|(name, _)| format!("{name}.svg")));
    } else {
        out.plots.clear();
    }
    out.report.artifacts = artifacts;
    out.report.passed = out.report.checks.iter().all(|c| c.passed);
    Ok(out)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Write { path, source })
}

/// Writes the report, tables and plots of a finished run into `dir`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
    let formats = out.report.config.formats;
    for t in &out.tables {
        if formats.csv() {
            write_file(dir, &format!("{}.csv", t.name), &t.to_csv())?;
        }
        if formats.json() {
            write_file(dir, &format!("{}.json", t.name), &to_json(t))?;
        }
    }
    for (name, body) in &out.plots {
        write_file(dir, &format!("{name}.svg"), body)?;
    }
    write_file(dir, "report.json", &to_json(&out.report))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Reads and validates the configuration named on the command line, then applies the
/// flag overrides.
pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let text = match &cli.config {
        Some(path) => fs::read_to_string(path).map_err(|source| CliError::Read { path: path.clone(), source })?,
        None => r#"{"alpha": 2, "r_cal": 1, "q": 0}"#.to_string(),
    };
    let mut cfg = parse_config(&text).map_err(CliError::Config)?;
    if let Some(dir) = &cli.out {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(f) = cli.format {
        cfg.formats = f;
    }
    if cli.plot {
        cfg.plot = true;
    }
    if cli.no_plot {
        cfg.plot = false;
    }
    Ok(cfg)
}

/// Full command-line entry point; returns the process exit status.
pub fn execute<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    let started = std::time::Instant::now();
    let result = load_config(&cli).and_then(|cfg| {
        let out = run(&cfg, cli.command)?;
        write_outputs(&out, &cfg.output_dir)?;
        Ok((out, cfg.output_dir))
    });
    match result {
        Ok((out, dir)) => {
            for c in &out.report.checks {
                println!("{c}");
            }
            println!(
                "{}: {} ({} checks, {:.2} s) -> {}",
                cli.command.name(),
                if out.report.passed { "all checks passed" } else { "CHECKS FAILED" },
                out.report.checks.len(),
                started.elapsed().as_secs_f64(),
                dir.display()
            );
            if out.report.passed {
                EXIT_PASS
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Config(issues) = &e {
                for i in issues {
                    eprintln!("  {i}");
                }
            }
            e.exit_code()
        }
    }
}
