//! `qplab`: simulate a cooldown, analyze the artifacts, run the pulse-tube
//! comparison and summarize.
//!
//! Exit codes: 0 success, 2 configuration error (including a config that does
//! not match the artifacts), 3 missing artifact, 4 flagged fit results,
//! 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qplab_core::io::{
    init_thread_pool, load_config, preset, run_analyze, run_pulse_tube, run_report, run_simulate, AnalysisKind,
    ExperimentConfig,
};
use qplab_core::Error;

#[derive(Parser)]
#[command(name = "qplab", version, about = "Quasiparticle-poisoning telemetry simulator and analysis chain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every measurement of the config and write the artifact tree.
    Simulate(Common),
    /// Analyze the artifacts in --out and write reports.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Analyses to run (repeatable): psd, hmm, coincidence, powerlaw,
        /// tomography, inject, mechanics. Default: all.
        #[arg(long = "kind", value_name = "KIND")]
        kinds: Vec<String>,
    },
    /// Run the pulse-tube on/off protocol and report the Γp pairs.
    PulseTube(Common),
    /// Collect all reports in --out into summary.json.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Start from a shipped preset: nb_conventional, al_conventional,
    /// al_suspended.
    #[arg(long)]
    preset: Option<String>,
}

impl Common {
    /// `--config`, else `--preset`, else the `config.json` a previous
    /// `simulate` left in `--out`.
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => load_config(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => {
                let saved = self.out.join("config.json");
                if !saved.exists() {
                    return Err(Error::Config(format!(
                        "no --config or --preset given and {} does not exist",
                        saved.display()
                    )));
                }
                load_config(&saved)?
            }
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Mismatch(_) => 2,
        Error::MissingArtifact(_) => 3,
        _ => 1,
    }
}

fn flagged_exit(out: &Path, written: usize, flagged: &[String]) -> ExitCode {
    println!("wrote {written} reports under {}", out.display());
    if flagged.is_empty() {
        return ExitCode::SUCCESS;
    }
    for f in flagged {
        eprintln!("flagged: {f}");
    }
    ExitCode::from(4)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    init_thread_pool()?;
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.resolve()?;
            let manifest = run_simulate(&cfg, &c.out)?;
            println!(
                "wrote {} traces, {} event files and {} tomography runs under {}",
                manifest.entries.len(),
                manifest.events.len(),
                manifest.tomography.len(),
                c.out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze { common, kinds } => {
            let cfg = common.resolve()?;
            let kinds = if kinds.is_empty() {
                AnalysisKind::ALL.to_vec()
            } else {
                kinds.iter().map(|k| AnalysisKind::parse(k)).collect::<Result<Vec<_>, _>>()?
            };
            let summary = run_analyze(&cfg, &common.out, &kinds)?;
            Ok(flagged_exit(&common.out, summary.reports.len(), &summary.flagged))
        }
        Command::PulseTube(c) => {
            let cfg = c.resolve()?;
            let summary = run_pulse_tube(&cfg, &c.out)?;
            Ok(flagged_exit(&c.out, summary.reports.len(), &summary.flagged))
        }
        Command::Report(c) => {
            let cfg = c.resolve()?;
            let summary = run_report(&cfg, &c.out)?;
            let total: usize = summary.counts.values().sum();
            Ok(flagged_exit(&c.out, total, &summary.flagged))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("qplab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
