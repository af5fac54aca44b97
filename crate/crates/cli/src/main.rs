use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ftitmr::harness::{
    run_policies, sweep_seeds, NodeBreakdown, Report, ReportBody, ReportFormat, ScenarioConfig,
};
use ftitmr::PolicyKind;

#[derive(Parser)]
#[command(
    name = "ftitmr",
    version,
    about = "Simulate TMR policies and leader-driven core isolation on a multicore cluster"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy over every application of a scenario.
    Run(Common),
    /// Run every policy listed in the scenario and normalize to C-TMR.
    Compare(Common),
    /// Repeat the comparison over consecutive seeds and report mean ± stddev.
    SweepSeeds {
        #[command(flatten)]
        common: Common,
        /// Number of seeds, starting at the scenario (or --seed) seed.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML). Without one, built-in defaults are used.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Policy for `run`; for `compare` and `sweep-seeds`, restricts the campaign to this policy.
    #[arg(long, value_parser = parse_policy)]
    policy: Option<PolicyKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "text")]
    format: ReportFormat,
    /// Print the event trace of every cell to stderr.
    #[arg(long)]
    verbose_trace: bool,
    /// Override any scenario field, e.g. `--set runs_per_node=10 --set transient.lambda0=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse::<PolicyKind>().map_err(|e| e.to_string())
}

impl Common {
    fn scenario(&self) -> Result<ScenarioConfig> {
        let cfg = match &self.scenario {
            Some(path) => ScenarioConfig::load_with(path, &self.overrides)
                .with_context(|| format!("loading {}", path.display()))?,
            None => ScenarioConfig::from_toml_with("", ".", &self.overrides)?,
        };
        Ok(cfg)
    }

    fn emit(&self, report: &Report) -> Result<()> {
        let text = report.render(self.format)?;
        match &self.out {
            Some(path) => {
                fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
            }
            None => std::io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => {
            let cfg = c.scenario()?;
            let seed = c.seed.unwrap_or(cfg.seed);
            let policy = c.policy.unwrap_or(cfg.policy);
            let apps = cfg.load_applications()?;
            let (comparison, cells) = run_policies(&cfg, &[policy], seed, c.verbose_trace)?;
            let mut per_node = Vec::new();
            for cell in cells.iter().filter(|cell| cell.policy == policy) {
                if let Some(trace) = &cell.trace {
                    let mut err = std::io::stderr().lock();
                    for line in trace {
                        writeln!(err, "[{} {}] {line}", cell.application, cell.policy.label())?;
                    }
                }
                per_node.push(NodeBreakdown {
                    application: cell.application.clone(),
                    nodes: cell.per_node.clone(),
                });
            }
            c.emit(&Report::new(
                &cfg,
                seed,
                &apps,
                ReportBody::Run {
                    comparison,
                    per_node,
                },
            ))
        }
        Command::Compare(c) => {
            let mut cfg = c.scenario()?;
            if let Some(p) = c.policy {
                cfg.policies = vec![p];
            }
            let seed = c.seed.unwrap_or(cfg.seed);
            let apps = cfg.load_applications()?;
            let (comparison, cells) = run_policies(&cfg, &cfg.policies, seed, c.verbose_trace)?;
            let mut err = std::io::stderr().lock();
            for cell in &cells {
                for line in cell.trace.iter().flatten() {
                    writeln!(err, "[{} {}] {line}", cell.application, cell.policy.label())?;
                }
            }
            c.emit(&Report::new(
                &cfg,
                seed,
                &apps,
                ReportBody::Compare { comparison },
            ))
        }
        Command::SweepSeeds { common: c, seeds } => {
            if seeds == 0 {
                bail!("--seeds must be positive");
            }
            let mut cfg = c.scenario()?;
            if let Some(p) = c.policy {
                cfg.policies = vec![p];
            }
            let first = c.seed.unwrap_or(cfg.seed);
            let list: Vec<u64> = (first..first + seeds).collect();
            let apps = cfg.load_applications()?;
            let sweep = sweep_seeds(&cfg, &list)?;
            c.emit(&Report::new(
                &cfg,
                first,
                &apps,
                ReportBody::Sweep { sweep },
            ))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
