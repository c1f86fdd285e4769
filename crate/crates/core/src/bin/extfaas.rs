use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use extfaas::bench::{report, run_scenario, write_outputs, ScenarioConfig, ScenarioKind, Strategy};
use extfaas::Result;

#[derive(Parser)]
#[command(version, about = "Run and summarize serverless analytics scenarios")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the scenario described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario preset; flags override config keys.
    Sweep {
        #[arg(long)]
        scenario: ScenarioKind,
        /// Strategies to compare (repeatable).
        #[arg(long, num_args = 1..)]
        strategy: Vec<Strategy>,
        /// Sweep values, comma separated.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Config file applied over the preset before the flags.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Any other key, as `path.to.key=value` (TOML value syntax).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Summarize results.csv files under a directory.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

fn parse_set(kv: &str) -> Result<(String, toml::Value)> {
    let (k, v) = kv
        .split_once('=')
        .ok_or_else(|| extfaas::Error::Config(format!("expected KEY=VALUE, got `{kv}`")))?;
    let value = format!("v = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn execute(cfg: &ScenarioConfig) -> Result<()> {
    let out = run_scenario(cfg)?;
    println!("scenario,strategy,sweep_value,completion_s,cost_slot_s,chosen_join");
    for r in &out.rows {
        println!(
            "{},{},{},{:.3},{:.3},{}",
            r.scenario, r.strategy, r.sweep_value, r.completion_s, r.cost_slot_s, r.chosen_join
        );
    }
    for path in write_outputs(&cfg.output_dir, &out)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run { config, seed, out } => {
            let mut cfg = ScenarioConfig::from_toml(&std::fs::read_to_string(&config)?)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            execute(&cfg)
        }
        Cmd::Sweep { scenario, strategy, values, config, seed, out, set } => {
            let base = match config {
                Some(path) => {
                    let cfg = ScenarioConfig::from_toml(&std::fs::read_to_string(path)?)?;
                    if cfg.scenario != scenario {
                        return Err(extfaas::Error::Config(format!(
                            "config is for {}, not {scenario}",
                            cfg.scenario
                        )));
                    }
                    cfg
                }
                None => ScenarioConfig::preset(scenario),
            };
            let mut overrides: Vec<(String, toml::Value)> =
                set.iter().map(|kv| parse_set(kv)).collect::<Result<_>>()?;
            if !strategy.is_empty() {
                let names = strategy.iter().map(|s| toml::Value::String(s.to_string())).collect();
                overrides.push(("strategy".into(), toml::Value::Array(names)));
            }
            if !values.is_empty() {
                let vals = values.iter().map(|&v| toml::Value::Float(v)).collect();
                overrides.push(("sweep.values".into(), toml::Value::Array(vals)));
            }
            if let Some(s) = seed {
                overrides.push(("seed".into(), toml::Value::Integer(s as i64)));
            }
            if let Some(o) = out {
                overrides.push(("output_dir".into(), toml::Value::String(o.display().to_string())));
            }
            execute(&base.with_overrides(&overrides)?)
        }
        Cmd::Report { dir } => {
            print!("{}", report(&dir)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
