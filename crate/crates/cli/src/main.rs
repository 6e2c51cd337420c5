use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use prefence_sim::attack::catalog::{catalog, validate_catalog};
use prefence_sim::attack::{run_scenario, AttackError, AttackSettings, LeakageReport, Scenario};
use prefence_sim::config::{ConfigError, OutputSpec, ScenarioConfig};
use prefence_sim::machine::MachineError;
use prefence_sim::par::{self, Execution};
use prefence_sim::perf::{run_perf_model, PerfModelResult, PerfParams, Workload};
use prefence_sim::report::{self, ReportError};

#[derive(Parser)]
#[command(
    name = "prefence",
    version,
    about = "Prefetcher side-channel and defense simulator"
)]
struct Cli {
    /// Run every cell on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config file and write its outputs.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one attack scenario and print its report.
    Attack {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        defended: bool,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        /// Also write report, histogram, probe and trace files here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run scenarios undefended and defended over consecutive seeds.
    Sweep {
        /// Scenario names; defaults to the main attacks.
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// First seed.
        #[arg(long)]
        seed: u64,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Write sweep.json here instead of only printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cycle totals of the performance workloads.
    Perf {
        /// streaming, pointer_chase or mixed_crypto_app; all if omitted.
        #[arg(long)]
        workload: Option<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Check the attack catalog against the mandatory-stage rule.
    ValidateCatalog {
        /// Print one line per flow.
        #[arg(long)]
        verbose: bool,
    },
    /// Turn a saved report into histogram CSV rows.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        histogram: PathBuf,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Catalog(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(ConfigError::Io { .. })
            | CliError::Report(_)
            | CliError::Read { .. } => 4,
            CliError::Config(ConfigError::Scenario(AttackError::Machine(_))) => 3,
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Attack(AttackError::Machine(_))
            | CliError::Machine(_)
            | CliError::Catalog(_) => 3,
            CliError::Attack(_) => 2,
        }
    }
}

#[derive(Serialize)]
struct SweepCell {
    scenario: String,
    defended: bool,
    seed: u64,
    trials: usize,
    correct: usize,
    guess_accuracy: f64,
    chance_level: f64,
    chance_interval: (f64, f64),
    at_chance: bool,
}

#[derive(Serialize)]
struct PerfRow {
    #[serde(flatten)]
    result: PerfModelResult,
    scoped_overhead_share: f64,
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let exec = execution(cli.sequential);
    match cli.command {
        Command::Simulate { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            cfg.validate()?;
            let settings = cfg.settings(exec)?;
            let report = run_scenario(
                cfg.scenario()?,
                cfg.defended,
                cfg.trials,
                cfg.seed,
                &settings,
            )?;
            for path in report::write_leakage_outputs(&report, &cfg.output)? {
                eprintln!("wrote {}", path.display());
            }
            println!("{}", summary_line(&report));
        }
        Command::Attack {
            scenario,
            defended,
            trials,
            seed,
            out,
        } => {
            let scenario = Scenario::parse(&scenario)?;
            let settings = AttackSettings::default().with_execution(exec);
            let report = run_scenario(scenario, defended, trials, seed, &settings)?;
            if let Some(dir) = out {
                let output = OutputSpec {
                    dir: dir.to_string_lossy().into_owned(),
                    ..OutputSpec::default()
                };
                for path in report::write_leakage_outputs(&report, &output)? {
                    eprintln!("wrote {}", path.display());
                }
            }
            print!("{}", report::to_canonical_json(&report)?);
        }
        Command::Sweep {
            scenarios,
            trials,
            seed,
            seeds,
            out,
        } => {
            let names = if scenarios.is_empty() {
                ["shin", "afterimage_v1", "sms", "dmp", "smt_bypass"]
                    .map(String::from)
                    .to_vec()
            } else {
                scenarios
            };
            let mut cells = Vec::new();
            for name in &names {
                let scenario = Scenario::parse(name)?;
                for s in seed..seed.saturating_add(seeds) {
                    for defended in [false, true] {
                        cells.push((scenario, defended, s));
                    }
                }
            }
            cells.sort();
            let settings = AttackSettings::default().with_execution(Execution::Sequential);
            let rows = par::map_slice(exec, &cells, |&(scenario, defended, s)| {
                run_scenario(scenario, defended, trials, s, &settings).map(|r| SweepCell {
                    scenario: r.scenario.clone(),
                    defended,
                    seed: s,
                    trials: r.trials,
                    correct: r.correct,
                    guess_accuracy: r.guess_accuracy,
                    chance_level: r.chance_level,
                    chance_interval: r.chance_interval,
                    at_chance: r.at_chance(),
                })
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
            let text = report::to_canonical_json(&rows)?;
            if let Some(dir) = out {
                let output = OutputSpec {
                    dir: dir.to_string_lossy().into_owned(),
                    ..OutputSpec::default()
                };
                let path = output.path("sweep.json");
                report::write_file(&path, &text)?;
                eprintln!("wrote {}", path.display());
            }
            print!("{text}");
        }
        Command::Perf { workload, seed } => {
            let workloads = match workload {
                None => Workload::ALL.to_vec(),
                Some(w) => vec![Workload::parse(&w)
                    .ok_or_else(|| CliError::Usage(format!("unknown workload {w:?}")))?],
            };
            let params = PerfParams {
                seed,
                ..PerfParams::default()
            };
            let mut rows = Vec::new();
            for w in workloads {
                let result = run_perf_model(w, &params, exec)?;
                rows.push(PerfRow {
                    scoped_overhead_share: result.scoped_overhead_share(),
                    result,
                });
            }
            print!("{}", report::to_canonical_json(&rows)?);
        }
        Command::ValidateCatalog { verbose } => {
            let flows = catalog();
            let report = validate_catalog(&flows);
            if verbose {
                for flow in &flows {
                    let stages: Vec<String> =
                        flow.stages.iter().map(|s| s.stage.to_string()).collect();
                    println!(
                        "{:<20} {:<16} {:<6} {}",
                        flow.name,
                        prefence_sim::attack::catalog::family_label(flow.family),
                        flow.scope_label(),
                        stages.join(" ")
                    );
                }
                for v in &report.violations {
                    println!("{}: {}", v.flow, v.violation);
                }
            }
            println!("{}", report.summary());
            if !report.all_valid() {
                return Err(CliError::Catalog(format!(
                    "{} flows violate the stage rules",
                    report.flows - report.valid
                )));
            }
        }
        Command::Report { input, histogram } => {
            let samples = read_samples(&input)?;
            report::write_file(&histogram, &report::histogram_from_samples(&samples)?)?;
            eprintln!("wrote {}", histogram.display());
        }
    }
    Ok(())
}

fn read_samples(path: &Path) -> Result<BTreeMap<String, Vec<u32>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    #[derive(serde::Deserialize)]
    struct Saved {
        latency_samples: BTreeMap<String, Vec<u32>>,
    }
    let saved: Saved = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{} is not a leakage report: {e}", path.display())))?;
    Ok(saved.latency_samples)
}

fn summary_line(r: &LeakageReport) -> String {
    format!(
        "{} defended={} trials={} accuracy={:.6} chance={:.6} at_chance={}",
        r.scenario,
        r.defended,
        r.trials,
        r.guess_accuracy,
        r.chance_level,
        r.at_chance()
    )
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
