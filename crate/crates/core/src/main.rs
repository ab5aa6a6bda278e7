use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use seccost::config::{load_scenario, ConfigError, Emit, ScenarioConfig};
use seccost::export::{read_records, write_traces};
use seccost::ledger::{rollup, AggregationQuery, CostRecord, Level};
use seccost::report::{render_report, render_tables, Layout};
use seccost::scenarios::{compare_orderings, run, ScenarioError};
use seccost::simkernel::{SimError, TraceStatus};
use seccost::Value;

/// Security cost simulator and aggregator.
#[derive(Parser)]
#[command(name = "seccost", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and print its cost report.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        /// Report layout.
        #[arg(long, value_enum)]
        emit: Option<EmitArg>,
        /// Also write the interaction traces to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Roll up a records file offline.
    Aggregate {
        records: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the baseline ordering with checking the limit first.
    Compare {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check a scenario file without running it.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct Common {
    /// Roll-up level, outermost first. Repeat for nesting.
    #[arg(long = "group-by", value_enum)]
    group_by: Vec<LevelArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Overrides {
    /// Temperature reading, e.g. 20 or 20.5.
    #[arg(long)]
    reading: Option<Value>,
    #[arg(long)]
    limit: Option<Value>,
    #[arg(long)]
    periods: Option<u32>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Interaction,
    Component,
    Task,
    Metric,
}

impl From<LevelArg> for Level {
    fn from(l: LevelArg) -> Level {
        match l {
            LevelArg::Interaction => Level::Interaction,
            LevelArg::Component => Level::Component,
            LevelArg::Task => Level::Task,
            LevelArg::Metric => Level::Metric,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EmitArg {
    Table,
    Records,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Config(_) | ScenarioError::Invalid(_) | ScenarioError::Sim(SimError::ScenarioInvalid(_)) => {
                Failure::Validation(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn levels(args: &[LevelArg], config: Option<&ScenarioConfig>, records: &[CostRecord]) -> Vec<Level> {
    if !args.is_empty() {
        return args.iter().map(|&l| l.into()).collect();
    }
    if let Some(c) = config {
        return c.default_levels();
    }
    let units: std::collections::BTreeSet<_> = records.iter().map(CostRecord::unit).collect();
    let mut out = vec![Level::Component, Level::Task];
    if units.len() > 1 {
        out.insert(0, Level::Metric);
    }
    out
}

fn load(path: &Path, overrides: &Overrides) -> Result<ScenarioConfig, Failure> {
    let mut config = load_scenario(path)?;
    if overrides.reading.is_some() || overrides.limit.is_some() || overrides.periods.is_some() {
        let p = &mut config.parameters;
        p.reading = overrides.reading.or(p.reading);
        p.limit = overrides.limit.or(p.limit);
        p.periods = overrides.periods.unwrap_or(p.periods);
        config.validate()?;
    }
    Ok(config)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { config } => {
            let c = load_scenario(&config)?;
            println!("{}: valid {} scenario, {} component(s)", config.display(), c.kind, c.components.len());
            Ok(())
        }
        Command::Run { config, common, overrides, emit: layout, trace } => {
            let c = load(&config, &overrides)?;
            let levels = levels(&common.group_by, Some(&c), &[]);
            let query = AggregationQuery::new(levels).map_err(|e| Failure::Validation(e.to_string()))?;
            let out = run(&c, common.seed)?;
            if let Some(path) = trace {
                let mut buf = Vec::new();
                write_traces(&mut buf, out.traces()).map_err(|e| Failure::Runtime(e.to_string()))?;
                fs::write(&path, buf).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            }
            let layout = match layout.map(|e| match e {
                EmitArg::Table => Emit::Table,
                EmitArg::Records => Emit::Records,
            }) {
                Some(e) => e,
                None => c.output.emit,
            };
            let roll = rollup(out.records(), &query).map_err(|e| Failure::Runtime(e.to_string()))?;
            let unit = c.clock_metric.as_ref().and_then(|m| c.unit_of(m));
            let text = match layout {
                Emit::Records => render_report(&roll, out.records(), Layout::Records, unit),
                Emit::Table => {
                    let mut s = String::new();
                    let _ = writeln!(s, "scenario: {} (seed {})", out.kind, out.seed);
                    if let Some(setup) = &out.setup {
                        let done = setup.traces.iter().filter(|t| t.is_completed()).count();
                        let _ = writeln!(s, "setup: {done} of {} on-boarding interaction(s) completed", setup.traces.len());
                    }
                    let aborted: Vec<String> = out
                        .traces()
                        .iter()
                        .filter_map(|t| match &t.status {
                            TraceStatus::Aborted(r) => Some(format!("{} ({r})", t.interaction)),
                            TraceStatus::Completed => None,
                        })
                        .collect();
                    let _ = writeln!(s, "interactions: {} completed, {} aborted", out.completed(), aborted.len());
                    for a in aborted {
                        let _ = writeln!(s, "aborted: {a}");
                    }
                    s.push('\n');
                    s.push_str(&render_report(&roll, out.records(), Layout::Table, unit));
                    s
                }
            };
            emit(&common.out, &text)
        }
        Command::Aggregate { records, common } => {
            let file = fs::File::open(&records)
                .map_err(|e| Failure::Validation(format!("{}: {e}", records.display())))?;
            let recs = read_records(file).map_err(|e| Failure::Validation(format!("{}: {e}", records.display())))?;
            let levels = levels(&common.group_by, None, &recs);
            let query = AggregationQuery::new(levels).map_err(|e| Failure::Validation(e.to_string()))?;
            let roll = rollup(&recs, &query).map_err(|e| Failure::Runtime(e.to_string()))?;
            emit(&common.out, &render_tables(&roll, None))
        }
        Command::Compare { config, common, overrides } => {
            let c = load(&config, &overrides)?;
            let levels = levels(&common.group_by, Some(&c), &[]);
            AggregationQuery::new(levels.iter().copied()).map_err(|e| Failure::Validation(e.to_string()))?;
            let report = compare_orderings(&c, common.seed, &levels)?;
            let p = &c.parameters;
            let unit = Some(&report.baseline_total.unit);
            let mut s = String::new();
            let _ = writeln!(
                s,
                "reading: {}, limit: {}, periods: {}",
                p.reading.expect("validated"),
                p.limit.expect("validated"),
                p.periods
            );
            let _ = writeln!(s, "baseline_total: {}", report.baseline_total);
            let _ = writeln!(s, "limit_first_total: {}", report.variant_total);
            let _ = writeln!(s, "delta: {}", report.delta);
            let _ = writeln!(s, "\n# baseline");
            s.push_str(&render_tables(&report.baseline_rollup, unit));
            let _ = writeln!(s, "\n# limit_first");
            s.push_str(&render_tables(&report.variant_rollup, unit));
            emit(&common.out, &s)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
