//! Command dispatch for the `qsd-lab` binary.
//!
//! Every command produces one JSON report. Exit codes: 0 when every check
//! passes, 2 when a verification fails, 1 when the input is unusable.

pub mod report;
mod sections;

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, ValueEnum};
use serde_json::{json, Map, Value};

use qsdlab::io;
use qsdlab::spectral::SpectralOptions;
use qsdlab::{periodicity, ChainAnalysis, Error};

use report::TsvCurve;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_VERIFICATION: i32 = 2;

#[derive(Debug, Clone, Parser)]
#[command(name = "qsd-lab", version, about = "Quasi-stationary analysis of periodic absorbed Markov chains")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Parse and validate the chain.
    Validate,
    /// Cyclic classes and period.
    Period,
    /// Perron data, mixing constants and spectral classification.
    Spectral,
    /// Quasi-stationary distributions.
    Qsd,
    /// Periodic quasi-limiting profiles and their error bound.
    Limits,
    /// The chain conditioned never to be absorbed.
    Qprocess,
    /// Quasi-ergodic distribution and conditioned time averages.
    Ergodic,
    /// Monte Carlo consistency checks.
    Simulate,
    /// Every section above.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Period => "period",
            Command::Spectral => "spectral",
            Command::Qsd => "qsd",
            Command::Limits => "limits",
            Command::Qprocess => "qprocess",
            Command::Ergodic => "ergodic",
            Command::Simulate => "simulate",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Options {
    /// Chain specification (dense CSV or JSON edge list).
    #[arg(long)]
    pub chain: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Periods scanned by the limit and Q-process checks.
    #[arg(long = "n-max", default_value_t = 40)]
    pub n_max: usize,
    /// Horizon of the quasi-ergodic rate check.
    #[arg(long = "N-max", default_value_t = 1000)]
    pub big_n_max: usize,
    /// Directory for TSV decay curves.
    #[arg(long = "tsv-dir")]
    pub tsv_dir: Option<PathBuf>,
    /// Override a tolerance, e.g. `--tolerance qsd=1e-8`.
    #[arg(long = "tolerance", value_name = "KEY=VAL", value_parser = parse_key_value)]
    pub tolerance: Vec<(String, f64)>,
    /// JSON object mapping labels of the first class to weights `V >= 1`.
    #[arg(long = "v-weights")]
    pub v_weights: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Monte Carlo sample size.
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    /// Monte Carlo horizon.
    #[arg(long, default_value_t = 20)]
    pub horizon: usize,
    /// Label of the initial state; defaults to the first state of the class `A_0`.
    #[arg(long)]
    pub initial: Option<String>,
}

fn parse_key_value(s: &str) -> Result<(String, f64), String> {
    let (key, value) = s.split_once('=').ok_or_else(|| format!("expected KEY=VAL, found `{s}`"))?;
    let value = value.trim().parse::<f64>().map_err(|e| format!("tolerance `{key}`: {e}"))?;
    Ok((key.trim().to_string(), value))
}

/// Default tolerances, overridable from the chain file and then the command line.
pub fn default_tolerances() -> BTreeMap<String, f64> {
    [
        ("qsd", 1e-9),
        ("roundtrip", 1e-10),
        ("spectrum", 1e-8),
        ("semigroup", 1e-10),
        ("invariance", 1e-10),
        ("oracle", 1e-8),
        ("ergodic_mass", 1e-12),
        ("ergodic_oracle", 1e-10),
        ("sigma", 4.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Outcome of one invocation: the report, the TSV curves and the exit code.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Value,
    pub curves: Vec<TsvCurve>,
    pub exit_code: i32,
}

impl Outcome {
    pub fn text(&self) -> String {
        report::to_canonical_string(&self.report)
    }
}

fn error_object(kind: &str, message: &str) -> Value {
    json!({ "kind": kind, "message": message })
}

fn core_error(e: &Error) -> Value {
    error_object(e.kind(), &e.to_string())
}

fn failed(command: Command, error: Value, code: i32) -> Outcome {
    let report = json!({ "schema": report::SCHEMA, "command": command.name(), "error": error, "passed": false });
    Outcome { report, curves: Vec::new(), exit_code: code }
}

fn code_for(e: &Error) -> i32 {
    if e.is_input_error() { EXIT_INPUT } else { EXIT_VERIFICATION }
}

pub(crate) struct Context {
    pub analysis: ChainAnalysis,
    pub tolerances: BTreeMap<String, f64>,
    pub options: Options,
    pub initial: usize,
}

impl Context {
    pub fn tol(&self, key: &str) -> f64 {
        self.tolerances[key]
    }
}

/// A finished report section and the names of its failed checks.
pub(crate) struct Section {
    pub value: Value,
    pub failures: Vec<String>,
    pub curves: Vec<TsvCurve>,
}

impl Section {
    pub fn new(value: Value) -> Section {
        Section { value, failures: Vec::new(), curves: Vec::new() }
    }

    pub fn check(&mut self, name: &str, ok: bool) {
        if !ok {
            self.failures.push(name.to_string());
        }
    }
}

/// Runs a command without touching the output paths.
pub fn run(cli: &Cli) -> Outcome {
    let command = cli.command;
    let Some(path) = cli.options.chain.as_ref() else {
        return failed(command, error_object("UsageError", "--chain is required"), EXIT_INPUT);
    };
    let spec = match io::read_chain_spec(path) {
        Ok(spec) => spec,
        Err(e) => return failed(command, core_error(&e), EXIT_INPUT),
    };
    let mut tolerances = default_tolerances();
    for (key, value) in spec.tolerances.iter().map(|(k, v)| (k.clone(), *v)).chain(cli.options.tolerance.iter().cloned()) {
        if !tolerances.contains_key(&key) {
            let known: Vec<&str> = tolerances.keys().map(String::as_str).collect();
            let message = format!("unknown tolerance `{key}` (known: {})", known.join(", "));
            return failed(command, error_object("UsageError", &message), EXIT_INPUT);
        }
        tolerances.insert(key, value);
    }
    let mut sections = Map::new();
    sections.insert("chain".into(), sections::chain(&spec));
    if command == Command::Validate {
        return finish(command, cli, sections, Vec::new(), Vec::new());
    }
    let mut v_weights = spec.v_weights.clone();
    if let Some(path) = &cli.options.v_weights {
        let parsed = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse { location: path.display().to_string(), message: e.to_string() })
            .and_then(|text| io::parse_v_weights(&text));
        match parsed {
            Ok(w) => v_weights.extend(w),
            Err(e) => return failed(command, core_error(&e), EXIT_INPUT),
        }
    }
    let built = periodicity::detect_cyclic_structure(&spec.kernel).and_then(|cyclic| {
        let v = io::v_on_first_class(&spec.kernel, &cyclic, &v_weights)?;
        ChainAnalysis::with_structure(spec.kernel.clone(), cyclic, Some(&v), &SpectralOptions::default())
    });
    let analysis = match built {
        Ok(a) => a,
        Err(e) => return failed(command, core_error(&e), code_for(&e)),
    };
    let initial = match &cli.options.initial {
        None => analysis.cyclic().members(0)[0],
        Some(label) => match spec.kernel.index_of(label) {
            Some(x) => x,
            None => {
                let e = Error::Parse { location: "--initial".into(), message: format!("unknown state `{label}`") };
                return failed(command, core_error(&e), EXIT_INPUT);
            }
        },
    };
    let ctx = Context { analysis, tolerances, options: cli.options.clone(), initial };
    let wanted: &[(&str, fn(&Context) -> qsdlab::Result<Section>)] = &[
        ("periodicity", sections::periodicity),
        ("spectral", sections::spectral),
        ("qsd", sections::qsd),
        ("limits", sections::limits),
        ("qprocess", sections::qprocess),
        ("ergodic", sections::ergodic),
        ("montecarlo", sections::montecarlo),
    ];
    let selected: Vec<&str> = match command {
        Command::Validate => unreachable!(),
        Command::Period => vec!["periodicity"],
        Command::Spectral => vec!["periodicity", "spectral"],
        Command::Qsd => vec!["qsd"],
        Command::Limits => vec!["limits"],
        Command::Qprocess => vec!["qprocess"],
        Command::Ergodic => vec!["ergodic"],
        Command::Simulate => vec!["montecarlo"],
        Command::Report => wanted.iter().map(|(n, _)| *n).collect(),
    };
    let mut failures = Vec::new();
    let mut curves = Vec::new();
    let mut input_error = false;
    for (name, build) in wanted.iter().filter(|(n, _)| selected.contains(n)) {
        match build(&ctx) {
            Ok(section) => {
                failures.extend(section.failures.iter().map(|f| format!("{name}.{f}")));
                curves.extend(section.curves);
                let mut value = section.value;
                value["passed"] = json!(section.failures.is_empty());
                sections.insert((*name).into(), value);
            }
            Err(e) => {
                failures.push(format!("{name}.error"));
                input_error |= e.is_input_error();
                sections.insert((*name).into(), json!({ "error": core_error(&e), "passed": false }));
            }
        }
    }
    let mut outcome = finish(command, cli, sections, failures, curves);
    if input_error {
        outcome.exit_code = EXIT_INPUT;
    }
    outcome
}

fn finish(command: Command, cli: &Cli, sections: Map<String, Value>, failures: Vec<String>, curves: Vec<TsvCurve>) -> Outcome {
    let passed = failures.is_empty();
    let report = json!({
        "schema": report::SCHEMA,
        "command": command.name(),
        "seed": cli.options.seed,
        "sections": sections,
        "failures": failures,
        "passed": passed,
    });
    Outcome { report, curves, exit_code: if passed { EXIT_PASS } else { EXIT_VERIFICATION } }
}

/// Runs a command on a dedicated thread pool, writes the report and TSV files, and returns the exit code.
pub fn execute(cli: &Cli) -> anyhow::Result<i32> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.options.threads.max(1)).build()?;
    let outcome = pool.install(|| run(cli));
    let text = outcome.text();
    match &cli.options.out {
        Some(path) => std::fs::write(path, &text)?,
        None => print!("{text}"),
    }
    if let Some(dir) = &cli.options.tsv_dir {
        for curve in &outcome.curves {
            curve.write(dir)?;
        }
    }
    Ok(outcome.exit_code)
}
