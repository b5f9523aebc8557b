mod config;
mod report;
mod suites;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{named_suite, RunConfig};
use report::{emit_plot_data, Runtime, Status, SuiteReport};
use suites::SectionOutput;

#[derive(Parser)]
#[command(name = "grushin", about = "Runs the spectral, geometry and Plancherel verification suites")]
struct Cli {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named potential list replacing the configured one.
    #[arg(long, global = true)]
    suite: Option<String>,
    /// Output directory (default `grushin-out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for the randomized geometry samples.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    Classify,
    Eigensolve,
    Matrices,
    Geometry,
    Plancherel,
    All,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Eigensolve => "eigensolve",
            Command::Matrices => "matrices",
            Command::Geometry => "geometry",
            Command::Plancherel => "plancherel",
            Command::All => "all",
        }
    }

    fn sections(self) -> Vec<Command> {
        match self {
            Command::All => vec![Command::Classify, Command::Eigensolve, Command::Matrices, Command::Geometry, Command::Plancherel],
            c => vec![c],
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = &cli.suite {
        cfg.potentials = named_suite(s)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<SuiteReport> {
    let cfg = resolve(cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("grushin-out"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let hash = cfg.hash();
    let mut hashed = cfg.clone();
    hashed.out_dir = None;
    let stamped = serde_json::json!({ "config_hash": hash, "config": hashed });
    std::fs::write(out.join("run_config.json"), serde_json::to_string_pretty(&stamped)?)?;

    let pots = cfg.potential_list()?;
    let mut report = SuiteReport { config_hash: hash.clone(), command: cli.command.name().into(), ..Default::default() };
    for sec in cli.command.sections() {
        let t = Instant::now();
        let o: SectionOutput = match sec {
            Command::Classify => suites::classify_section(&cfg, &pots),
            Command::Eigensolve => suites::eigensolve_section(&cfg, &pots),
            Command::Matrices => suites::matrices_section(&cfg, &pots),
            Command::Geometry => suites::geometry_section(&cfg, &pots),
            Command::Plancherel => suites::plancherel_section(&cfg, &pots, &hash),
            Command::All => unreachable!(),
        }
        .with_context(|| format!("{} section", sec.name()))?;
        emit_plot_data(&o.plots, &out)?;
        for (name, text) in &o.json {
            std::fs::write(out.join(name), text)?;
        }
        report.checks.extend(o.checks);
        report.runtimes.push(Runtime { section: sec.name().into(), seconds: t.elapsed().as_secs_f64() });
    }
    report.finish();
    report.write(&out)?;
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            for c in &report.checks {
                let status = match c.status {
                    Status::Pass => "pass",
                    Status::Fail => "FAIL",
                    Status::Measured => "----",
                };
                let kind = if c.hard { "hard" } else { "soft" };
                let limit = c.limit.map(|l| format!(" (limit {l:e})")).unwrap_or_default();
                println!("{status} {kind} {:<10} {:<28} {:<34} {:e}{limit}", c.section, c.subject, c.name, c.value);
            }
            println!(
                "{} checks, {} hard failures, {} soft failures, config {}",
                report.checks.len(),
                report.hard_failures,
                report.measured_failures,
                &report.config_hash[..12]
            );
            if report.hard_failures == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
